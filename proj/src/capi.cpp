// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "ckmerge.h"

#include "error.hpp"
#include "merge_core.hpp"
#include "recipe.hpp"
#include "sweep.hpp"
#include "tensor_store.hpp"

#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

namespace {

thread_local std::string g_last_error;

ckm_status to_status(ckm::ErrorKind kind) {
    switch (kind) {
        case ckm::ErrorKind::validation: return CKM_ERR_VALIDATION;
        case ckm::ErrorKind::io:         return CKM_ERR_IO;
        case ckm::ErrorKind::compute:    return CKM_ERR_COMPUTE;
    }
    return CKM_ERR_COMPUTE;
}

// every entry point funnels through here so ckm_last_error stays consistent
template <typename Fn>
ckm_status guarded(Fn && fn) {
    g_last_error.clear();
    try {
        fn();
        return CKM_OK;
    } catch (const ckm::Error & e) {
        g_last_error = e.what();
        return to_status(e.kind());
    } catch (const std::bad_alloc &) {
        g_last_error = "out of memory";
        return CKM_ERR_COMPUTE;
    } catch (const std::exception & e) {
        g_last_error = e.what();
        return CKM_ERR_COMPUTE;
    }
}

char * dup_string(const std::string & s) {
    char * out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

struct ckm_model {
    ckm::ModelManifest manifest;
    ckm::TensorMap tensors;
    std::vector<const char *> names; // lexicographic, pointers into `tensors`
};

struct ckm_job {
    ckm::MergeRecipe recipe;
    std::string method;
    std::string output;
    std::optional<std::string> summary;
};

extern "C" {

const char * ckm_version(void) {
    return "0.1.0";
}

const char * ckm_last_error(void) {
    return g_last_error.c_str();
}

void ckm_string_free(char * s) {
    delete[] s;
}

ckm_status ckm_model_open(const char * path, int n_threads, ckm_model ** out_model) {
    return guarded([&]() {
        if (path == nullptr || out_model == nullptr) {
            throw ckm::ValidationError("ckm_model_open: path and out_model must not be NULL");
        }
        auto model = std::make_unique<ckm_model>();
        model->manifest = ckm::open_manifest(path);
        model->tensors = ckm::load_model(model->manifest, n_threads);
        model->names.reserve(model->tensors.size());
        for (const auto & [name, t] : model->tensors) {
            model->names.push_back(name.c_str());
        }
        *out_model = model.release();
    });
}

void ckm_model_free(ckm_model * model) {
    delete model;
}

size_t ckm_model_tensor_count(const ckm_model * model) {
    return model != nullptr ? model->tensors.size() : 0;
}

const char * ckm_model_tensor_name(const ckm_model * model, size_t index) {
    if (model == nullptr || index >= model->names.size()) {
        return nullptr;
    }
    return model->names[index];
}

ckm_status ckm_model_save(const ckm_model * model, const char * path, uint64_t shard_limit_bytes,
                          int n_threads) {
    return guarded([&]() {
        if (model == nullptr || path == nullptr) {
            throw ckm::ValidationError("ckm_model_save: model and path must not be NULL");
        }
        ckm::WriteOptions opts;
        opts.shard_limit = shard_limit_bytes == 0 ? ckm::shard_limit_none : shard_limit_bytes;
        opts.metadata = model->manifest.metadata;
        opts.n_threads = n_threads;
        ckm::write_model(model->tensors, path, opts);
    });
}

ckm_status ckm_weight_similarity(const ckm_model * a, const ckm_model * b, double * out_sigma) {
    return guarded([&]() {
        if (a == nullptr || b == nullptr || out_sigma == nullptr) {
            throw ckm::ValidationError("ckm_weight_similarity: arguments must not be NULL");
        }
        *out_sigma = ckm::weight_similarity(a->tensors, b->tensors);
    });
}

ckm_status ckm_job_open(const char * recipe_path, ckm_job ** out_job) {
    return guarded([&]() {
        if (recipe_path == nullptr || out_job == nullptr) {
            throw ckm::ValidationError("ckm_job_open: recipe_path and out_job must not be NULL");
        }
        auto job = std::make_unique<ckm_job>();
        job->recipe = ckm::MergeRecipe::from_file(recipe_path);
        job->method = ckm::merge_method_name(job->recipe.method);
        job->output = job->recipe.output.string();
        *out_job = job.release();
    });
}

void ckm_job_free(ckm_job * job) {
    delete job;
}

ckm_status ckm_job_set_output(ckm_job * job, const char * output_path) {
    return guarded([&]() {
        if (job == nullptr || output_path == nullptr) {
            throw ckm::ValidationError("ckm_job_set_output: job and output_path must not be NULL");
        }
        job->recipe.output = output_path;
        job->recipe.validate();
        job->output = output_path;
    });
}

const char * ckm_job_method(const ckm_job * job) {
    return job != nullptr ? job->method.c_str() : nullptr;
}

const char * ckm_job_output(const ckm_job * job) {
    return job != nullptr ? job->output.c_str() : nullptr;
}

ckm_status ckm_job_run(ckm_job * job, int n_threads) {
    return guarded([&]() {
        if (job == nullptr) {
            throw ckm::ValidationError("ckm_job_run: job must not be NULL");
        }
        const ckm::MergeSummary summary = ckm::run_merge(job->recipe, n_threads);
        job->summary = summary.text();
    });
}

const char * ckm_job_summary(const ckm_job * job) {
    if (job == nullptr || !job->summary) {
        return nullptr;
    }
    return job->summary->c_str();
}

ckm_status ckm_metrics_csv(const char * log_path, int k, const char * gold_path, char ** out_csv) {
    return guarded([&]() {
        if (log_path == nullptr || out_csv == nullptr) {
            throw ckm::ValidationError("ckm_metrics_csv: log_path and out_csv must not be NULL");
        }
        const ckm::BenchmarkLog log = ckm::load_response_log(log_path);
        const int use_k = k > 0 ? k : log.samples_per_question;
        std::string csv;
        if (gold_path != nullptr) {
            const auto gold = ckm::load_gold_answers(gold_path);
            csv = ckm::report_csv(ckm::aggregate_report(log, use_k, &gold));
        } else {
            csv = ckm::report_csv(ckm::aggregate_report(log, use_k, nullptr));
        }
        *out_csv = dup_string(csv);
    });
}

ckm_status ckm_sweep_run(const char * recipe_path, const double * lambdas, size_t n_lambdas,
                         const char * logs_dir, const char * out_dir, int k, double eps_low,
                         double eps_high, int n_threads, char ** out_summary) {
    return guarded([&]() {
        if (recipe_path == nullptr || out_summary == nullptr) {
            throw ckm::ValidationError("ckm_sweep_run: recipe_path and out_summary must not be NULL");
        }
        if (lambdas == nullptr && n_lambdas > 0) {
            throw ckm::ValidationError("ckm_sweep_run: lambdas must not be NULL");
        }
        const ckm::MergeRecipe recipe = ckm::MergeRecipe::from_file(recipe_path);
        ckm::SweepOptions opts;
        if (logs_dir != nullptr) {
            opts.logs_dir = std::filesystem::path(logs_dir);
        }
        if (out_dir != nullptr) {
            opts.out_dir = std::filesystem::path(out_dir);
        }
        opts.k = k;
        opts.eps_low = eps_low;
        opts.eps_high = eps_high;
        opts.n_threads = n_threads;
        const ckm::SweepResult result =
            ckm::run_sweep(recipe, std::vector<double>(lambdas, lambdas + n_lambdas), opts);
        *out_summary = dup_string(result.summary);
    });
}

ckm_status ckm_report_run(const char * logs_dir, const char * out_dir, int k, double eps_low,
                          double eps_high, char ** out_summary) {
    return guarded([&]() {
        if (logs_dir == nullptr || out_dir == nullptr || out_summary == nullptr) {
            throw ckm::ValidationError("ckm_report_run: logs_dir, out_dir and out_summary "
                                       "must not be NULL");
        }
        ckm::SweepOptions opts;
        opts.k = k;
        opts.eps_low = eps_low;
        opts.eps_high = eps_high;
        const ckm::SweepResult result = ckm::run_report(logs_dir, out_dir, opts);
        *out_summary = dup_string(result.summary);
    });
}

} // extern "C"
