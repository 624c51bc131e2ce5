// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0
//
// ckmerge command line: merge / sweep / similarity / metrics / report.
// Built purely on the public C API in ckmerge.h.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 computation error.

#include "ckmerge.h"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace {

int fail(ckm_status status) {
    std::fprintf(stderr, "error: %s\n", ckm_last_error());
    return static_cast<int>(status);
}

struct StringGuard {
    char * s = nullptr;
    ~StringGuard() { ckm_string_free(s); }
};

struct ModelGuard {
    ckm_model * m = nullptr;
    ~ModelGuard() { ckm_model_free(m); }
};

struct JobGuard {
    ckm_job * j = nullptr;
    ~JobGuard() { ckm_job_free(j); }
};

int run_merge(const std::string & recipe, const std::string & output, int threads, bool verbose) {
    JobGuard job;
    if (ckm_status st = ckm_job_open(recipe.c_str(), &job.j); st != CKM_OK) {
        return fail(st);
    }
    if (!output.empty()) {
        if (ckm_status st = ckm_job_set_output(job.j, output.c_str()); st != CKM_OK) {
            return fail(st);
        }
    }
    if (verbose) {
        std::fprintf(stderr, "merging with method '%s' -> %s\n", ckm_job_method(job.j),
                     ckm_job_output(job.j));
    }
    if (ckm_status st = ckm_job_run(job.j, threads); st != CKM_OK) {
        return fail(st);
    }
    std::fputs(ckm_job_summary(job.j), stdout);
    return 0;
}

int run_similarity(const std::string & path_a, const std::string & path_b, int threads) {
    ModelGuard a;
    ModelGuard b;
    if (ckm_status st = ckm_model_open(path_a.c_str(), threads, &a.m); st != CKM_OK) {
        return fail(st);
    }
    if (ckm_status st = ckm_model_open(path_b.c_str(), threads, &b.m); st != CKM_OK) {
        return fail(st);
    }
    double sigma = 0.0;
    if (ckm_status st = ckm_weight_similarity(a.m, b.m, &sigma); st != CKM_OK) {
        return fail(st);
    }
    std::printf("%.4f\n", sigma);
    return 0;
}

int run_metrics(const std::string & log, int k, const std::string & gold,
                const std::string & output) {
    StringGuard csv;
    const char * gold_arg = gold.empty() ? nullptr : gold.c_str();
    if (ckm_status st = ckm_metrics_csv(log.c_str(), k, gold_arg, &csv.s); st != CKM_OK) {
        return fail(st);
    }
    if (output.empty()) {
        std::fputs(csv.s, stdout);
    } else {
        std::ofstream out(output, std::ios::binary | std::ios::trunc);
        out << csv.s;
        if (!out) {
            std::fprintf(stderr, "error: cannot write '%s'\n", output.c_str());
            return static_cast<int>(CKM_ERR_IO);
        }
    }
    return 0;
}

int run_sweep(const std::string & recipe, const std::vector<double> & lambdas,
              const std::string & logs, const std::string & output, int k, double eps_low,
              double eps_high, int threads) {
    StringGuard summary;
    const ckm_status st =
        ckm_sweep_run(recipe.c_str(), lambdas.data(), lambdas.size(),
                      logs.empty() ? nullptr : logs.c_str(),
                      output.empty() ? nullptr : output.c_str(), k, eps_low, eps_high, threads,
                      &summary.s);
    if (st != CKM_OK) {
        return fail(st);
    }
    std::fputs(summary.s, stdout);
    return 0;
}

int run_report(const std::string & logs, const std::string & output, int k, double eps_low,
               double eps_high) {
    StringGuard summary;
    if (ckm_status st = ckm_report_run(logs.c_str(), output.c_str(), k, eps_low, eps_high,
                                       &summary.s);
        st != CKM_OK) {
        return fail(st);
    }
    std::fputs(summary.s, stdout);
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{std::string("ckmerge ") + ckm_version() +
                 " - checkpoint merging and evaluation toolkit"};
    app.require_subcommand(1);

    int threads = 0; // 0: CKMERGE_THREADS or hardware concurrency
    bool verbose = false;
    app.add_option("-t,--threads", threads, "worker threads for per-tensor work (0 = default)");
    app.add_flag("-v,--verbose", verbose, "chatter on stderr");

    std::string recipe_path;
    std::string output;
    auto * merge = app.add_subcommand("merge", "run one merge recipe and write the checkpoint");
    merge->add_option("recipe", recipe_path, "JSON merge recipe")->required();
    merge->add_option("-o,--output", output, "override the recipe's output path");

    std::string model_a;
    std::string model_b;
    auto * similarity = app.add_subcommand("similarity", "weight similarity between two checkpoints");
    similarity->add_option("model_a", model_a, "first checkpoint")->required();
    similarity->add_option("model_b", model_b, "second checkpoint")->required();

    std::string log_path;
    std::string gold_path;
    std::string metrics_out;
    int k = 0;
    auto * metrics = app.add_subcommand("metrics", "score one response log and emit CSV");
    metrics->add_option("log", log_path, "JSONL response log")->required();
    metrics->add_option("-k,--k", k, "k for Pass@k / Vote@k (default: the rollout count)");
    metrics->add_option("--gold", gold_path, "gold answers JSON for Vote@k");
    metrics->add_option("-o,--output", metrics_out, "write CSV here instead of stdout");

    std::vector<double> lambdas;
    std::string logs_dir;
    std::string sweep_out;
    double eps_low = 0.05;
    double eps_high = 0.95;
    int sweep_k = 0;
    auto * sweep = app.add_subcommand("sweep", "merge a lambda sweep and join metric reports");
    sweep->add_option("recipe", recipe_path, "interpolation recipe (lambda comes from the sweep)")
        ->required();
    sweep->add_option("--lambdas", lambdas, "interpolation coefficients")
        ->required()
        ->delimiter(',');
    sweep->add_option("--logs", logs_dir, "response logs directory (MI-<lambda>/<benchmark>.jsonl)");
    sweep->add_option("-o,--output", sweep_out, "output directory (default: recipe output)");
    sweep->add_option("-k,--k", sweep_k, "k override for all benchmarks");
    sweep->add_option("--eps-low", eps_low, "stage-1/2 threshold on the think ratio");
    sweep->add_option("--eps-high", eps_high, "stage-2/3 threshold on the think ratio");

    std::string report_logs;
    std::string report_out;
    auto * report = app.add_subcommand("report", "metrics and stages from existing logs only");
    report->add_option("--logs", report_logs, "response logs directory")->required();
    report->add_option("-o,--output", report_out, "output directory")->required();
    report->add_option("-k,--k", sweep_k, "k override for all benchmarks");
    report->add_option("--eps-low", eps_low, "stage-1/2 threshold on the think ratio");
    report->add_option("--eps-high", eps_high, "stage-2/3 threshold on the think ratio");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(CKM_ERR_VALIDATION);
    }

    if (merge->parsed()) {
        return run_merge(recipe_path, output, threads, verbose);
    }
    if (similarity->parsed()) {
        return run_similarity(model_a, model_b, threads);
    }
    if (metrics->parsed()) {
        return run_metrics(log_path, k, gold_path, metrics_out);
    }
    if (sweep->parsed()) {
        return run_sweep(recipe_path, lambdas, logs_dir, sweep_out, sweep_k, eps_low, eps_high,
                         threads);
    }
    if (report->parsed()) {
        return run_report(report_logs, report_out, sweep_k, eps_low, eps_high);
    }
    return static_cast<int>(CKM_ERR_VALIDATION);
}
