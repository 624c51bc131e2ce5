// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "recipe.hpp"

#include "error.hpp"
#include "metrics.hpp" // format_double

#include <fstream>

#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace ckm {

namespace {

constexpr const char * input_keys[] = {"instruct", "thinking", "base"};

fs::path resolve(const fs::path & base_dir, const fs::path & p) {
    if (p.is_absolute() || base_dir.empty()) {
        return p;
    }
    return base_dir / p;
}

MergeMask parse_mask(const json & j) {
    MergeMask mask;
    if (j.contains("modules")) {
        if (!j["modules"].is_array()) {
            throw ValidationError("recipe field 'mask.modules': must be an array of class names");
        }
        for (const auto & m : j["modules"]) {
            ModuleClass mc;
            if (!m.is_string() || !module_class_from_name(m.get<std::string>(), mc)) {
                throw ValidationError("recipe field 'mask.modules': unknown module class '" +
                                      (m.is_string() ? m.get<std::string>() : m.dump()) + "'");
            }
            mask.module_classes.insert(mc);
        }
    } else {
        mask.module_classes = MergeMask::all().module_classes;
    }
    if (j.contains("layers")) {
        const auto & l = j["layers"];
        if (!l.is_array() || l.size() != 2 || !l[0].is_number_integer() || !l[1].is_number_integer()) {
            throw ValidationError("recipe field 'mask.layers': must be [low, high]");
        }
        mask.layer_range = {l[0].get<int>(), l[1].get<int>()};
    }
    if (j.contains("default_source")) {
        const std::string s = j["default_source"].is_string() ? j["default_source"].get<std::string>() : "";
        if (s == "instruct") {
            mask.default_source = ModelSource::instruct;
        } else if (s == "thinking") {
            mask.default_source = ModelSource::thinking;
        } else {
            throw ValidationError("recipe field 'mask.default_source': must be 'instruct' or 'thinking'");
        }
    }
    mask.validate(); // messages already name mask.modules / mask.layers
    return mask;
}

NamingProfile parse_profile(const json & j) {
    if (!j.is_array()) {
        throw ValidationError("recipe field 'naming_profile': must be an array of {pattern, class}");
    }
    std::vector<NamingRule> rules;
    for (const auto & r : j) {
        if (!r.is_object() || !r.contains("pattern") || !r["pattern"].is_string() ||
            !r.contains("class") || !r["class"].is_string()) {
            throw ValidationError("recipe field 'naming_profile': each rule needs 'pattern' and 'class'");
        }
        NamingRule rule;
        rule.pattern = r["pattern"].get<std::string>();
        if (!module_class_from_name(r["class"].get<std::string>(), rule.module_class)) {
            throw ValidationError("recipe field 'naming_profile': unknown module class '" +
                                  r["class"].get<std::string>() + "'");
        }
        rules.push_back(std::move(rule));
    }
    return NamingProfile(std::move(rules));
}

std::map<std::string, std::string> parse_string_map(const json & j, const char * field) {
    if (!j.is_object()) {
        throw ValidationError(std::string("recipe field '") + field + "': must be an object of strings");
    }
    std::map<std::string, std::string> out;
    for (const auto & [k, v] : j.items()) {
        if (v.is_string()) {
            out[k] = v.get<std::string>();
        } else {
            out[k] = v.dump(); // numbers etc. are recorded verbatim
        }
    }
    return out;
}

double parse_number(const json & j, const char * field) {
    if (!j.is_number()) {
        throw ValidationError(std::string("recipe field '") + field + "': must be a number");
    }
    return j.get<double>();
}

} // namespace

const char * merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::interpolate:     return "interpolate";
        case MergeMethod::average:         return "average";
        case MergeMethod::task_arithmetic: return "task_arithmetic";
        case MergeMethod::ties:            return "ties";
    }
    return "?";
}

bool merge_method_from_name(std::string_view name, MergeMethod & out) {
    if (name == "interpolate")     { out = MergeMethod::interpolate;     return true; }
    if (name == "average")         { out = MergeMethod::average;         return true; }
    if (name == "task_arithmetic") { out = MergeMethod::task_arithmetic; return true; }
    if (name == "ties")            { out = MergeMethod::ties;            return true; }
    return false;
}

MergeRecipe MergeRecipe::from_file(const fs::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open recipe '" + path.string() + "'");
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, path.parent_path());
}

MergeRecipe MergeRecipe::from_json_text(const std::string & text, const fs::path & base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception & e) {
        throw ValidationError(std::string("recipe is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("recipe must be a JSON object");
    }

    MergeRecipe r;

    if (!j.contains("method") || !j["method"].is_string() ||
        !merge_method_from_name(j["method"].get<std::string>(), r.method)) {
        throw ValidationError("recipe field 'method': must be one of "
                              "interpolate|average|task_arithmetic|ties");
    }

    if (!j.contains("models") || !j["models"].is_object()) {
        throw ValidationError("recipe field 'models': object with instruct/thinking/base paths is required");
    }
    for (const auto & [key, value] : j["models"].items()) {
        bool known = false;
        for (const char * k : input_keys) {
            known = known || key == k;
        }
        if (!known) {
            throw ValidationError("recipe field 'models." + key + "': unknown input role");
        }
        if (!value.is_string()) {
            throw ValidationError("recipe field 'models." + key + "': must be a path string");
        }
        r.inputs[key] = resolve(base_dir, value.get<std::string>());
    }

    if (j.contains("lambda")) {
        r.lambda = parse_number(j["lambda"], "lambda");
    }
    if (j.contains("alpha")) {
        r.alpha = parse_number(j["alpha"], "alpha");
    }
    if (j.contains("density")) {
        r.density = parse_number(j["density"], "density");
    }
    if (j.contains("mask")) {
        if (!j["mask"].is_object()) {
            throw ValidationError("recipe field 'mask': must be an object");
        }
        r.mask = parse_mask(j["mask"]);
    }
    if (j.contains("naming_profile")) {
        r.profile = parse_profile(j["naming_profile"]);
    }

    if (!j.contains("output") || !j["output"].is_string()) {
        throw ValidationError("recipe field 'output': path is required");
    }
    r.output = resolve(base_dir, j["output"].get<std::string>());

    if (j.contains("shard_limit_bytes")) {
        if (!j["shard_limit_bytes"].is_number_unsigned() || j["shard_limit_bytes"].get<uint64_t>() == 0) {
            throw ValidationError("recipe field 'shard_limit_bytes': must be a positive integer");
        }
        r.shard_limit = j["shard_limit_bytes"].get<uint64_t>();
    }
    if (j.contains("allow_nonfinite")) {
        if (!j["allow_nonfinite"].is_boolean()) {
            throw ValidationError("recipe field 'allow_nonfinite': must be a boolean");
        }
        r.allow_nonfinite = j["allow_nonfinite"].get<bool>();
    }
    if (j.contains("decoding")) {
        r.decoding = parse_string_map(j["decoding"], "decoding");
    }
    if (j.contains("metadata")) {
        r.metadata = parse_string_map(j["metadata"], "metadata");
    }

    r.validate();
    return r;
}

void MergeRecipe::validate() const {
    const bool has_instruct = inputs.count("instruct") > 0;
    const bool has_thinking = inputs.count("thinking") > 0;
    const bool has_base = inputs.count("base") > 0;

    switch (method) {
        case MergeMethod::interpolate:
            if (!lambda) {
                throw ValidationError("recipe field 'lambda': required for method 'interpolate'");
            }
            if (!(*lambda >= 0.0 && *lambda <= 1.0)) {
                throw ValidationError("recipe field 'lambda': " + format_double(*lambda) +
                                      " is outside [0, 1]");
            }
            if (!has_instruct || !has_thinking) {
                throw ValidationError("recipe field 'models': interpolate requires exactly "
                                      "'instruct' and 'thinking'");
            }
            if (has_base) {
                throw ValidationError("recipe field 'models.base': not used by method 'interpolate'");
            }
            break;
        case MergeMethod::average:
            if (inputs.size() < 2) {
                throw ValidationError("recipe field 'models': average requires at least two inputs");
            }
            break;
        case MergeMethod::task_arithmetic:
        case MergeMethod::ties:
            if (!has_base) {
                throw ValidationError(std::string("recipe field 'models.base': required for method '") +
                                      merge_method_name(method) + "'");
            }
            if (!has_instruct && !has_thinking) {
                throw ValidationError(std::string("recipe field 'models': method '") +
                                      merge_method_name(method) +
                                      "' needs at least one of 'instruct' or 'thinking'");
            }
            if (!alpha) {
                throw ValidationError(std::string("recipe field 'alpha': required for method '") +
                                      merge_method_name(method) + "'");
            }
            if (method == MergeMethod::ties) {
                if (!density) {
                    throw ValidationError("recipe field 'density': required for method 'ties'");
                }
                if (!(*density > 0.0 && *density <= 1.0)) {
                    throw ValidationError("recipe field 'density': " + format_double(*density) +
                                          " is outside (0, 1]");
                }
            }
            break;
    }

    if (mask) {
        if (method != MergeMethod::interpolate) {
            throw ValidationError("recipe field 'mask': only valid for method 'interpolate'");
        }
        mask->validate();
    }
    if (output.empty()) {
        throw ValidationError("recipe field 'output': path is required");
    }
}

std::string MergeSummary::text() const {
    std::string out;
    out += "method: " + method + "\n";
    if (lambda) {
        out += "lambda: " + format_double(*lambda) + "\n";
    }
    if (alpha) {
        out += "alpha: " + format_double(*alpha) + "\n";
    }
    if (density) {
        out += "density: " + format_double(*density) + "\n";
    }
    out += "tensors: " + std::to_string(tensor_count) + "\n";
    out += "masked_in: " + std::to_string(masked_in) + "\n";
    out += "output: " + output.string() + "\n";
    return out;
}

MergeSummary run_merge(const MergeRecipe & recipe, int n_threads) {
    recipe.validate();

    auto load = [&](const char * key) {
        return load_model(recipe.inputs.at(key), n_threads);
    };

    TensorMap merged;
    uint64_t masked_in = 0;

    switch (recipe.method) {
        case MergeMethod::interpolate: {
            const TensorMap ins = load("instruct");
            const TensorMap thi = load("thinking");
            const MergeMask mask = recipe.mask ? *recipe.mask : MergeMask::all();
            merged = interpolate(ins, thi, *recipe.lambda, mask, recipe.profile, n_threads);
            for (const auto & [name, t] : merged) {
                masked_in += mask.includes(recipe.profile.classify(name)) ? 1 : 0;
            }
            break;
        }
        case MergeMethod::average: {
            std::vector<TensorMap> owned;
            for (const char * key : input_keys) {
                if (recipe.inputs.count(key) > 0) {
                    owned.push_back(load(key));
                }
            }
            std::vector<const TensorMap *> models;
            for (const auto & m : owned) {
                models.push_back(&m);
            }
            merged = average(models, n_threads);
            masked_in = merged.size();
            break;
        }
        case MergeMethod::task_arithmetic:
        case MergeMethod::ties: {
            const TensorMap base = load("base");
            std::vector<TaskVector> owned;
            for (const char * key : {"instruct", "thinking"}) {
                if (recipe.inputs.count(key) > 0) {
                    owned.push_back(task_vector(load(key), base, n_threads));
                }
            }
            std::vector<const TaskVector *> tvs;
            for (const auto & tv : owned) {
                tvs.push_back(&tv);
            }
            merged = recipe.method == MergeMethod::ties
                         ? ties_merge(base, tvs, *recipe.density, *recipe.alpha, n_threads)
                         : task_arithmetic(base, tvs, *recipe.alpha, n_threads);
            masked_in = merged.size();
            break;
        }
    }

    WriteOptions opts;
    opts.shard_limit = recipe.shard_limit;
    opts.metadata = recipe.metadata;
    opts.allow_nonfinite = recipe.allow_nonfinite;
    opts.n_threads = n_threads;
    write_model(merged, recipe.output, opts);

    MergeSummary summary;
    summary.method = merge_method_name(recipe.method);
    summary.tensor_count = merged.size();
    summary.masked_in = masked_in;
    summary.lambda = recipe.lambda;
    summary.alpha = recipe.alpha;
    summary.density = recipe.density;
    summary.output = recipe.output;
    return summary;
}

} // namespace ckm
