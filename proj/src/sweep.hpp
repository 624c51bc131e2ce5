// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "metrics.hpp"
#include "recipe.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ckm {

// Metrics for one interpolation coefficient, keyed by benchmark.
struct SweepPoint {
    double lambda = 0.0;
    std::map<std::string, MetricsReport> reports;
    std::optional<std::filesystem::path> checkpoint_path;
};

struct StagePoint {
    double lambda = 0.0;
    double think_r = 0.0; // fraction in [0, 1]
    int stage = 1;
};

// Segmentation of a lambda sweep into the three observed phases: verbose but
// non-thinking, rapid emergence of the think marker, and saturated thinking.
struct StageProfile {
    double eps_low = 0.05;
    double eps_high = 0.95;
    std::optional<double> b1; // smallest lambda with think_r >= eps_low
    std::optional<double> b2; // smallest lambda with think_r >= eps_high
    std::optional<StagePoint> b1_trigger;
    std::optional<StagePoint> b2_trigger;
    std::vector<StagePoint> points; // ascending lambda; stages are contiguous
    bool monotonic_warning = false; // think_r dropped by > 0.10 between points

    bool stage3_reached() const { return b2.has_value(); }
};

// "MI-0.45" style label for a coefficient.
std::string lambda_label(double lambda);

// One fully resolved recipe per lambda; outputs land under
// <recipe.output>/MI-<lambda>. The recipe must use method interpolate.
std::vector<MergeRecipe> plan_sweep(const MergeRecipe & recipe,
                                    const std::vector<double> & lambdas);

// Assigns stages from (lambda, think_r fraction) pairs. Points are sorted by
// lambda internally; needs >= 3 points.
StageProfile classify_stages_raw(std::vector<std::pair<double, double>> lambda_think,
                                 double eps_low = 0.05, double eps_high = 0.95);

// Same, taking each point's think_r as the mean over its benchmark reports.
StageProfile classify_stages(const std::vector<SweepPoint> & points,
                             double eps_low = 0.05, double eps_high = 0.95);

// Long-format CSV: lambda,benchmark,metric,value with one header row.
std::string sweep_csv(const std::vector<SweepPoint> & points);

// Sidecar annotation for a stage profile (JSON, deterministic).
std::string stage_profile_json(const StageProfile & profile);

struct SweepOptions {
    std::optional<std::filesystem::path> logs_dir; // MI-<lambda>/<benchmark>.jsonl layout
    std::optional<std::filesystem::path> out_dir;  // overrides recipe.output
    int k = 0;                                     // <= 0: use each log's rollout count
    double eps_low = 0.05;
    double eps_high = 0.95;
    int n_threads = 0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::optional<StageProfile> stages;
    std::optional<std::filesystem::path> csv_path;
    std::optional<std::filesystem::path> stages_path;
    std::string summary; // printable block
};

// Merges one checkpoint per lambda, then (when logs are available) joins the
// per-lambda metric reports into the sweep CSV and stage sidecar.
SweepResult run_sweep(const MergeRecipe & recipe, const std::vector<double> & lambdas,
                      const SweepOptions & opts = {});

// The resume path: no merging, metrics and stages from an existing logs
// directory whose MI-<lambda> subdirectories name the coefficients.
SweepResult run_report(const std::filesystem::path & logs_dir,
                       const std::filesystem::path & out_dir, const SweepOptions & opts = {});

} // namespace ckm
