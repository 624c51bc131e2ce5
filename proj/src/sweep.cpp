// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "sweep.hpp"

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace ckm {

namespace {

constexpr const char * sweep_csv_name = "sweep.csv";
constexpr const char * stages_json_name = "stages.json";

void append_row(std::string & csv, double lambda, const std::string & benchmark,
                const char * metric, const std::string & value) {
    csv += format_double(lambda);
    csv += ',';
    csv += benchmark;
    csv += ',';
    csv += metric;
    csv += ',';
    csv += value;
    csv += '\n';
}

void write_text_atomic(const fs::path & path, const std::string & text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        out << text;
        if (!out) {
            throw IoError("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
    }
}

// reads every <benchmark>.jsonl in point_dir; <logs_dir>/gold/<benchmark>.json
// supplies vote answers when present
void collect_point_reports(const fs::path & logs_dir, const fs::path & dir, SweepPoint & point,
                           int k_override) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        return;
    }
    std::vector<fs::path> logs;
    for (const auto & entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".jsonl") {
            logs.push_back(entry.path());
        }
    }
    std::sort(logs.begin(), logs.end());
    for (const auto & log_path : logs) {
        const BenchmarkLog log = load_response_log(log_path);
        const int k = k_override > 0 ? k_override : log.samples_per_question;

        const fs::path gold_path = logs_dir / "gold" / (log.benchmark_name + ".json");
        if (fs::exists(gold_path, ec)) {
            const auto gold = load_gold_answers(gold_path);
            point.reports[log.benchmark_name] = aggregate_report(log, k, &gold);
        } else {
            point.reports[log.benchmark_name] = aggregate_report(log, k, nullptr);
        }
    }
}

std::string finish_points(SweepResult & result, const fs::path & out_dir, double eps_low,
                          double eps_high) {
    std::string lines;
    size_t with_reports = 0;
    for (const auto & p : result.points) {
        with_reports += p.reports.empty() ? 0 : 1;
    }
    if (with_reports == 0) {
        lines += "metrics: no response logs found; checkpoints await evaluation\n";
        return lines;
    }

    std::vector<SweepPoint> reported;
    for (const auto & p : result.points) {
        if (!p.reports.empty()) {
            reported.push_back(p);
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    const fs::path csv_path = out_dir / sweep_csv_name;
    write_text_atomic(csv_path, sweep_csv(reported));
    result.csv_path = csv_path;
    lines += "wrote " + csv_path.string() + "\n";
    if (with_reports < result.points.size()) {
        lines += "metrics: logs found for " + std::to_string(with_reports) + " of " +
                 std::to_string(result.points.size()) + " lambdas (partial sweep)\n";
    }

    if (reported.size() < 3) {
        lines += "stages: classification refused, needs >= 3 points with metrics (have " +
                 std::to_string(reported.size()) + ")\n";
        return lines;
    }

    result.stages = classify_stages(reported, eps_low, eps_high);
    const fs::path stages_path = out_dir / stages_json_name;
    write_text_atomic(stages_path, stage_profile_json(*result.stages));
    result.stages_path = stages_path;
    lines += "wrote " + stages_path.string() + "\n";

    std::string b1 = result.stages->b1 ? format_double(*result.stages->b1) : "none";
    std::string b2 = result.stages->b2 ? format_double(*result.stages->b2) : "none";
    lines += "stages: b1=" + b1 + " b2=" + b2 +
             (result.stages->stage3_reached() ? "" : " (stage 3 not reached)") + "\n";
    if (result.stages->monotonic_warning) {
        lines += "warning: think ratio is not non-decreasing along the sweep\n";
    }
    return lines;
}

} // namespace

std::string lambda_label(double lambda) {
    return "MI-" + format_double(lambda);
}

std::vector<MergeRecipe> plan_sweep(const MergeRecipe & recipe,
                                    const std::vector<double> & lambdas) {
    if (recipe.method != MergeMethod::interpolate) {
        throw ValidationError("recipe field 'method': sweep requires 'interpolate', got '" +
                              std::string(merge_method_name(recipe.method)) + "'");
    }
    if (lambdas.empty()) {
        throw ValidationError("sweep: lambda list is empty");
    }
    std::set<double> seen;
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) {
            throw ValidationError("sweep: lambda " + format_double(l) + " is outside [0, 1]");
        }
        if (!seen.insert(l).second) {
            throw ValidationError("sweep: duplicate lambda " + format_double(l));
        }
    }

    std::vector<double> sorted(lambdas);
    std::sort(sorted.begin(), sorted.end());

    std::vector<MergeRecipe> out;
    out.reserve(sorted.size());
    for (double l : sorted) {
        MergeRecipe r = recipe;
        r.lambda = l;
        r.output = recipe.output / lambda_label(l);
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

StageProfile classify_stages_raw(std::vector<std::pair<double, double>> lambda_think,
                                 double eps_low, double eps_high) {
    if (lambda_think.size() < 3) {
        throw ValidationError("stage classification needs at least 3 points, got " +
                              std::to_string(lambda_think.size()));
    }
    std::sort(lambda_think.begin(), lambda_think.end());

    StageProfile profile;
    profile.eps_low = eps_low;
    profile.eps_high = eps_high;

    for (size_t i = 1; i < lambda_think.size(); ++i) {
        if (lambda_think[i].second < lambda_think[i - 1].second - 0.10) {
            profile.monotonic_warning = true;
        }
    }
    for (const auto & [lambda, tr] : lambda_think) {
        if (!profile.b1 && tr >= eps_low) {
            profile.b1 = lambda;
            profile.b1_trigger = StagePoint{lambda, tr, 2};
        }
        if (!profile.b2 && tr >= eps_high) {
            profile.b2 = lambda;
            profile.b2_trigger = StagePoint{lambda, tr, 3};
        }
    }

    // stages assigned by position relative to the crossings keeps the
    // sequence contiguous even when think_r wobbles
    for (const auto & [lambda, tr] : lambda_think) {
        StagePoint p;
        p.lambda = lambda;
        p.think_r = tr;
        if (profile.b2 && lambda >= *profile.b2) {
            p.stage = 3;
        } else if (profile.b1 && lambda >= *profile.b1) {
            p.stage = 2;
        } else {
            p.stage = 1;
        }
        profile.points.push_back(p);
    }
    return profile;
}

StageProfile classify_stages(const std::vector<SweepPoint> & points, double eps_low,
                             double eps_high) {
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(points.size());
    for (const auto & p : points) {
        if (p.reports.empty()) {
            throw ValidationError("sweep point " + lambda_label(p.lambda) +
                                  " has no think ratio to classify");
        }
        double sum = 0.0;
        for (const auto & [bench, report] : p.reports) {
            sum += report.think_r;
        }
        // percentage scale in, fraction out
        pairs.emplace_back(p.lambda, sum / (100.0 * static_cast<double>(p.reports.size())));
    }
    return classify_stages_raw(std::move(pairs), eps_low, eps_high);
}

std::string sweep_csv(const std::vector<SweepPoint> & points) {
    if (points.empty()) {
        throw ValidationError("sweep_csv: no points");
    }
    std::vector<const SweepPoint *> sorted;
    for (const auto & p : points) {
        sorted.push_back(&p);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const SweepPoint * a, const SweepPoint * b) { return a->lambda < b->lambda; });

    std::string csv = "lambda,benchmark,metric,value\n";
    for (const SweepPoint * p : sorted) {
        for (const auto & [bench, r] : p->reports) {
            append_row(csv, p->lambda, bench, "mean_at_k", format_percent(r.mean_at_k));
            append_row(csv, p->lambda, bench, "pass_at_k", format_percent(r.pass_at_k));
            if (r.vote_at_k) {
                append_row(csv, p->lambda, bench, "vote_at_k", format_percent(*r.vote_at_k));
            }
            append_row(csv, p->lambda, bench, "token_n", std::to_string(r.token_n.display_mean()));
            append_row(csv, p->lambda, bench, "think_r", format_percent(r.think_r));
        }
    }
    return csv;
}

std::string stage_profile_json(const StageProfile & profile) {
    json j = json::object();
    j["eps_low"] = profile.eps_low;
    j["eps_high"] = profile.eps_high;
    j["b1"] = profile.b1 ? json(*profile.b1) : json(nullptr);
    j["b2"] = profile.b2 ? json(*profile.b2) : json(nullptr);
    j["stage3_reached"] = profile.stage3_reached();
    j["monotonic_warning"] = profile.monotonic_warning;
    auto trigger = [](const std::optional<StagePoint> & t) {
        if (!t) {
            return json(nullptr);
        }
        return json{{"lambda", t->lambda}, {"think_r", t->think_r}};
    };
    j["b1_trigger"] = trigger(profile.b1_trigger);
    j["b2_trigger"] = trigger(profile.b2_trigger);
    json points = json::array();
    for (const auto & p : profile.points) {
        points.push_back({{"lambda", p.lambda}, {"think_r", p.think_r}, {"stage", p.stage}});
    }
    j["points"] = std::move(points);
    return j.dump(2) + "\n";
}

SweepResult run_sweep(const MergeRecipe & recipe, const std::vector<double> & lambdas,
                      const SweepOptions & opts) {
    MergeRecipe base = recipe;
    if (opts.out_dir) {
        base.output = *opts.out_dir;
    }
    const std::vector<MergeRecipe> jobs = plan_sweep(base, lambdas);

    SweepResult result;
    result.summary += "sweep: method=interpolate points=" + std::to_string(jobs.size()) + "\n";

    for (const auto & job : jobs) {
        const MergeSummary s = run_merge(job, opts.n_threads);
        SweepPoint point;
        point.lambda = *job.lambda;
        point.checkpoint_path = job.output;
        result.points.push_back(std::move(point));
        result.summary += "wrote " + s.output.string() + " (" + std::to_string(s.tensor_count) +
                          " tensors)\n";
    }

    if (!opts.logs_dir) {
        result.summary += "metrics: no response logs supplied; checkpoints await evaluation\n";
        return result;
    }
    for (auto & point : result.points) {
        collect_point_reports(*opts.logs_dir, *opts.logs_dir / lambda_label(point.lambda), point,
                              opts.k);
    }
    result.summary += finish_points(result, base.output, opts.eps_low, opts.eps_high);
    return result;
}

SweepResult run_report(const fs::path & logs_dir, const fs::path & out_dir,
                       const SweepOptions & opts) {
    std::error_code ec;
    if (!fs::is_directory(logs_dir, ec)) {
        throw IoError("logs directory '" + logs_dir.string() + "' does not exist");
    }

    // lambdas are named by the MI-<lambda> subdirectories
    std::vector<std::pair<double, fs::path>> found;
    for (const auto & entry : fs::directory_iterator(logs_dir)) {
        if (!entry.is_directory()) {
            continue;
        }
        const std::string name = entry.path().filename().string();
        if (name.rfind("MI-", 0) != 0) {
            continue;
        }
        try {
            size_t used = 0;
            const double l = std::stod(name.substr(3), &used);
            if (used != name.size() - 3) {
                throw std::invalid_argument(name);
            }
            found.emplace_back(l, entry.path());
        } catch (const std::exception &) {
            throw ValidationError("logs directory entry '" + name + "' is not an MI-<lambda> name");
        }
    }
    if (found.empty()) {
        throw ValidationError("logs directory '" + logs_dir.string() + "' has no MI-<lambda> entries");
    }
    std::sort(found.begin(), found.end());

    SweepResult result;
    result.summary += "report: points=" + std::to_string(found.size()) + "\n";
    for (const auto & [l, dir] : found) {
        SweepPoint point;
        point.lambda = l;
        collect_point_reports(logs_dir, dir, point, opts.k);
        result.points.push_back(std::move(point));
    }
    result.summary += finish_points(result, out_dir, opts.eps_low, opts.eps_high);
    return result;
}

} // namespace ckm
