// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "merge_core.hpp"
#include "tensor_store.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace ckm {

enum class MergeMethod {
    interpolate,
    average,
    task_arithmetic,
    ties,
};

const char * merge_method_name(MergeMethod m);
bool merge_method_from_name(std::string_view name, MergeMethod & out);

// One declarative merge job. Parsed from a JSON file; relative paths resolve
// against the recipe file's directory. All jobs are deterministic (seedless)
// and preserve each tensor's storage dtype.
struct MergeRecipe {
    MergeMethod method = MergeMethod::interpolate;
    std::map<std::string, std::filesystem::path> inputs; // keys: instruct, thinking, base
    std::optional<double> lambda;
    std::optional<double> alpha;
    std::optional<double> density;
    std::optional<MergeMask> mask; // interpolate only
    NamingProfile profile;
    std::filesystem::path output;
    uint64_t shard_limit = shard_limit_none;
    bool allow_nonfinite = false;
    std::map<std::string, std::string> decoding; // inert metadata (temperature, top_p, ...)
    std::map<std::string, std::string> metadata; // written as __metadata__

    static MergeRecipe from_file(const std::filesystem::path & path);
    static MergeRecipe from_json_text(const std::string & text,
                                      const std::filesystem::path & base_dir = {});

    // Field-level validation; throws ValidationError naming the field.
    void validate() const;
};

struct MergeSummary {
    std::string method;
    uint64_t tensor_count = 0;
    uint64_t masked_in = 0;
    std::optional<double> lambda;
    std::optional<double> alpha;
    std::optional<double> density;
    std::filesystem::path output;

    std::string text() const; // printable block, one "key: value" per line
};

// Validates, loads the inputs, dispatches on method, and writes the output
// checkpoint (temp file + atomic rename; nothing is written on error).
MergeSummary run_merge(const MergeRecipe & recipe, int n_threads = 0);

} // namespace ckm
