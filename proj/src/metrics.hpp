// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ckm {

inline constexpr std::string_view think_close_marker = "</think>";

// One model response to one question, pre-judged by the log producer.
struct ResponseRecord {
    std::string question_id;
    int sample_index = 0;
    bool correct = false;
    std::optional<std::string> answer_label; // for multiple-choice voting
    int64_t token_count = 0;
    bool has_think_close = false; // response contains the literal "</think>"
    std::optional<std::string> response_text;
};

struct BenchmarkLog {
    std::string benchmark_name;
    std::vector<ResponseRecord> records;
    int samples_per_question = 0; // uniform rollout count n
    std::map<std::string, std::string> decoding_meta; // recorded, not interpreted
};

struct TokenStats {
    double mean = 0.0;
    int64_t min = 0;
    int64_t max = 0;
    double median = 0.0;

    int64_t display_mean() const; // rounded to nearest integer for reports
};

struct MetricsReport {
    double mean_at_k = 0.0; // percentages in [0, 100]
    double pass_at_k = 0.0;
    std::optional<double> vote_at_k;
    TokenStats token_n;
    double think_r = 0.0;
    int n = 0;
    int k = 0;
};

// Unbiased estimator 1 - C(n-c, k) / C(n, k), evaluated as a product so no
// large factorial is ever formed. Exactly 1.0 when n - c < k.
double pass_at_k(int n, int c, int k);

double mean_at_k(const BenchmarkLog & log);
double pass_at_k_aggregate(const BenchmarkLog & log, int k);

// Per question the modal answer_label (ties break to the lexicographically
// smallest label) is compared with gold.
double vote_at_k(const BenchmarkLog & log, const std::map<std::string, std::string> & gold);

double think_ratio(const BenchmarkLog & log);
TokenStats token_stats(const BenchmarkLog & log);

MetricsReport aggregate_report(const BenchmarkLog & log, int k,
                               const std::map<std::string, std::string> * gold = nullptr);

// Newline-delimited JSON records; field names exactly as in ResponseRecord,
// unknown fields ignored. benchmark_name is the file stem.
BenchmarkLog load_response_log(const std::filesystem::path & path);

// JSON object mapping question_id -> label.
std::map<std::string, std::string> load_gold_answers(const std::filesystem::path & path);

// CSV: header row of MetricsReport field names plus one value row.
std::string report_csv(const MetricsReport & report);

// shared numeric formatting (also used by the sweep CSV)
std::string format_percent(double v);     // one decimal place
std::string format_double(double v);      // shortest "%g"

} // namespace ckm
