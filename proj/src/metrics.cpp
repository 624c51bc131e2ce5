// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "metrics.hpp"

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

using json = nlohmann::json;

namespace ckm {

namespace {

// question -> number of correct samples, in question-id order
std::map<std::string, int> correct_counts(const BenchmarkLog & log) {
    std::map<std::string, int> counts;
    for (const auto & r : log.records) {
        counts[r.question_id] += r.correct ? 1 : 0;
    }
    return counts;
}

void require_nonempty(const BenchmarkLog & log) {
    if (log.records.empty()) {
        throw ValidationError("log '" + log.benchmark_name + "' has no records");
    }
}

} // namespace

int64_t TokenStats::display_mean() const {
    return static_cast<int64_t>(std::llround(mean));
}

double pass_at_k(int n, int c, int k) {
    if (n < 0 || c < 0 || c > n) {
        throw ValidationError("pass_at_k: c=" + std::to_string(c) + " outside [0, n=" +
                              std::to_string(n) + "]");
    }
    if (k < 1 || k > n) {
        throw ValidationError("pass_at_k: k=" + std::to_string(k) + " outside [1, n=" +
                              std::to_string(n) + "]");
    }
    if (n - c < k) {
        return 1.0; // every k-subset contains a correct sample
    }
    double fail = 1.0;
    for (int i = 0; i < k; ++i) {
        fail *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - fail;
}

double mean_at_k(const BenchmarkLog & log) {
    require_nonempty(log);
    size_t correct = 0;
    for (const auto & r : log.records) {
        correct += r.correct ? 1 : 0;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(log.records.size());
}

double pass_at_k_aggregate(const BenchmarkLog & log, int k) {
    require_nonempty(log);
    if (k > log.samples_per_question) {
        throw ValidationError("k=" + std::to_string(k) + " exceeds the rollout count n=" +
                              std::to_string(log.samples_per_question));
    }
    const auto counts = correct_counts(log);
    double total = 0.0;
    for (const auto & [qid, c] : counts) {
        total += pass_at_k(log.samples_per_question, c, k);
    }
    return 100.0 * total / static_cast<double>(counts.size());
}

double vote_at_k(const BenchmarkLog & log, const std::map<std::string, std::string> & gold) {
    require_nonempty(log);

    std::map<std::string, std::map<std::string, int>> label_counts;
    for (const auto & r : log.records) {
        if (!r.answer_label) {
            throw ValidationError("question '" + r.question_id + "' sample " +
                                  std::to_string(r.sample_index) + " has no answer_label");
        }
        label_counts[r.question_id][*r.answer_label] += 1;
    }

    size_t correct = 0;
    for (const auto & [qid, counts] : label_counts) {
        auto g = gold.find(qid);
        if (g == gold.end()) {
            throw ValidationError("gold answers are missing question '" + qid + "'");
        }
        // modal label; counts map is label-ordered, so the first maximum is the
        // lexicographically smallest among tied labels
        const std::string * modal = nullptr;
        int best = -1;
        for (const auto & [label, count] : counts) {
            if (count > best) {
                best = count;
                modal = &label;
            }
        }
        if (*modal == g->second) {
            ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(label_counts.size());
}

double think_ratio(const BenchmarkLog & log) {
    require_nonempty(log);
    size_t with_marker = 0;
    for (const auto & r : log.records) {
        with_marker += r.has_think_close ? 1 : 0;
    }
    return 100.0 * static_cast<double>(with_marker) / static_cast<double>(log.records.size());
}

TokenStats token_stats(const BenchmarkLog & log) {
    require_nonempty(log);
    std::vector<int64_t> counts;
    counts.reserve(log.records.size());
    double sum = 0.0;
    for (const auto & r : log.records) {
        counts.push_back(r.token_count);
        sum += static_cast<double>(r.token_count);
    }
    std::sort(counts.begin(), counts.end());

    TokenStats s;
    s.mean = sum / static_cast<double>(counts.size());
    s.min = counts.front();
    s.max = counts.back();
    const size_t mid = counts.size() / 2;
    s.median = counts.size() % 2 == 1
                   ? static_cast<double>(counts[mid])
                   : 0.5 * (static_cast<double>(counts[mid - 1]) + static_cast<double>(counts[mid]));
    return s;
}

MetricsReport aggregate_report(const BenchmarkLog & log, int k,
                               const std::map<std::string, std::string> * gold) {
    MetricsReport report;
    report.n = log.samples_per_question;
    report.k = k;
    report.mean_at_k = mean_at_k(log);
    report.pass_at_k = pass_at_k_aggregate(log, k);
    if (gold != nullptr) {
        report.vote_at_k = vote_at_k(log, *gold);
    }
    report.token_n = token_stats(log);
    report.think_r = think_ratio(log);
    return report;
}

BenchmarkLog load_response_log(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open response log '" + path.string() + "'");
    }

    BenchmarkLog log;
    log.benchmark_name = path.stem().string();

    std::set<std::pair<std::string, int>> seen;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception & e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": record is not valid JSON: " + e.what());
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (!j.is_object()) {
            throw ValidationError(where + ": record must be a JSON object");
        }

        ResponseRecord r;
        if (!j.contains("question_id") || !j["question_id"].is_string()) {
            throw ValidationError(where + ": field 'question_id' (string) is required");
        }
        r.question_id = j["question_id"].get<std::string>();

        if (!j.contains("sample_index") || !j["sample_index"].is_number_integer() ||
            j["sample_index"].get<int64_t>() < 0) {
            throw ValidationError(where + ": field 'sample_index' (non-negative integer) is required");
        }
        r.sample_index = j["sample_index"].get<int>();

        if (!j.contains("correct") || !j["correct"].is_boolean()) {
            throw ValidationError(where + ": field 'correct' (boolean) is required");
        }
        r.correct = j["correct"].get<bool>();

        if (!j.contains("token_count") || !j["token_count"].is_number_integer() ||
            j["token_count"].get<int64_t>() < 0) {
            throw ValidationError(where + ": field 'token_count' (non-negative integer) is required");
        }
        r.token_count = j["token_count"].get<int64_t>();

        if (j.contains("answer_label")) {
            if (!j["answer_label"].is_string()) {
                throw ValidationError(where + ": field 'answer_label' must be a string");
            }
            r.answer_label = j["answer_label"].get<std::string>();
        }
        if (j.contains("response_text")) {
            if (!j["response_text"].is_string()) {
                throw ValidationError(where + ": field 'response_text' must be a string");
            }
            r.response_text = j["response_text"].get<std::string>();
        }

        const bool derived = r.response_text &&
                             r.response_text->find(think_close_marker) != std::string::npos;
        if (j.contains("has_think_close")) {
            if (!j["has_think_close"].is_boolean()) {
                throw ValidationError(where + ": field 'has_think_close' must be a boolean");
            }
            r.has_think_close = j["has_think_close"].get<bool>();
            if (r.response_text && r.has_think_close != derived) {
                throw ValidationError(where + ": has_think_close=" +
                                      (r.has_think_close ? std::string("true") : std::string("false")) +
                                      " disagrees with response_text");
            }
        } else if (r.response_text) {
            r.has_think_close = derived;
        } else {
            throw ValidationError(where + ": either 'has_think_close' or 'response_text' is required");
        }

        if (!seen.insert({r.question_id, r.sample_index}).second) {
            throw ValidationError(where + ": duplicate record for question '" + r.question_id +
                                  "' sample " + std::to_string(r.sample_index));
        }
        log.records.push_back(std::move(r));
    }

    if (log.records.empty()) {
        throw ValidationError("response log '" + path.string() + "' is empty");
    }

    // every question must carry exactly n samples indexed 0..n-1
    std::map<std::string, std::set<int>> samples;
    for (const auto & r : log.records) {
        samples[r.question_id].insert(r.sample_index);
    }
    const size_t n = samples.begin()->second.size();
    for (const auto & [qid, idx] : samples) {
        if (idx.size() != n || *idx.begin() != 0 || *idx.rbegin() != static_cast<int>(n) - 1) {
            throw ValidationError("question '" + qid + "' does not have samples 0.." +
                                  std::to_string(n - 1) + " exactly once");
        }
    }
    log.samples_per_question = static_cast<int>(n);
    return log;
}

std::map<std::string, std::string> load_gold_answers(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open gold answers '" + path.string() + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception & e) {
        throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("'" + path.string() + "' must be a JSON object of question_id -> label");
    }
    std::map<std::string, std::string> gold;
    for (const auto & [qid, label] : j.items()) {
        if (!label.is_string()) {
            throw ValidationError("'" + path.string() + "': label for '" + qid + "' must be a string");
        }
        gold[qid] = label.get<std::string>();
    }
    return gold;
}

std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string report_csv(const MetricsReport & report) {
    std::string out = "mean_at_k,pass_at_k,vote_at_k,token_n,think_r,n,k\n";
    out += format_percent(report.mean_at_k);
    out += ',';
    out += format_percent(report.pass_at_k);
    out += ',';
    if (report.vote_at_k) {
        out += format_percent(*report.vote_at_k);
    }
    out += ',';
    out += std::to_string(report.token_n.display_mean());
    out += ',';
    out += format_percent(report.think_r);
    out += ',';
    out += std::to_string(report.n);
    out += ',';
    out += std::to_string(report.k);
    out += '\n';
    return out;
}

} // namespace ckm
