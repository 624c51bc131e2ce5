// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "merge_core.hpp"

#include "error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ckm {

namespace {

bool is_per_layer(ModuleClass mc) {
    return mc == ModuleClass::attention || mc == ModuleClass::ffn || mc == ModuleClass::norm;
}

// collects the sorted tensor names once so parallel work can be addressed by index
std::vector<const std::string *> name_index(const TensorMap & m) {
    std::vector<const std::string *> names;
    names.reserve(m.size());
    for (const auto & [name, t] : m) {
        names.push_back(&name);
    }
    return names;
}

TensorMap assemble(const TensorMap & layout, std::vector<std::vector<float>> && buffers) {
    TensorMap out;
    size_t i = 0;
    for (const auto & [name, t] : layout) {
        Tensor r;
        r.source_dtype = t.source_dtype;
        r.shape = t.shape;
        r.values = std::move(buffers[i++]);
        out.emplace_hint(out.end(), name, std::move(r));
    }
    return out;
}

} // namespace

const char * module_class_name(ModuleClass mc) {
    switch (mc) {
        case ModuleClass::attention: return "attention";
        case ModuleClass::ffn:       return "ffn";
        case ModuleClass::embedding: return "embedding";
        case ModuleClass::norm:      return "norm";
        case ModuleClass::head:      return "head";
        case ModuleClass::other:     return "other";
    }
    return "?";
}

bool module_class_from_name(std::string_view name, ModuleClass & out) {
    if (name == "attention") { out = ModuleClass::attention; return true; }
    if (name == "ffn")       { out = ModuleClass::ffn;       return true; }
    if (name == "embedding") { out = ModuleClass::embedding; return true; }
    if (name == "norm")      { out = ModuleClass::norm;      return true; }
    if (name == "head")      { out = ModuleClass::head;      return true; }
    if (name == "other")     { out = ModuleClass::other;     return true; }
    return false;
}

NamingProfile::NamingProfile() : NamingProfile(defaults().rules_) {}

NamingProfile::NamingProfile(std::vector<NamingRule> rules) : rules_(std::move(rules)) {
    compiled_.reserve(rules_.size());
    for (const auto & rule : rules_) {
        std::regex re;
        try {
            re = std::regex(rule.pattern, std::regex::ECMAScript);
        } catch (const std::regex_error & e) {
            throw ValidationError("naming_profile pattern '" + rule.pattern + "' is invalid: " + e.what());
        }
        if (is_per_layer(rule.module_class) && re.mark_count() < 1) {
            throw ValidationError("naming_profile pattern '" + rule.pattern + "' maps to per-layer class '" +
                                  module_class_name(rule.module_class) +
                                  "' but has no layer capture group");
        }
        compiled_.push_back(std::move(re));
    }
}

NamingProfile NamingProfile::defaults() {
    return NamingProfile(std::vector<NamingRule>{
        {R"(^model\.layers\.([0-9]+)\.self_attn\.)", ModuleClass::attention},
        {R"(^model\.layers\.([0-9]+)\.mlp\.)", ModuleClass::ffn},
        {R"(^model\.layers\.([0-9]+)\.(?:input_layernorm|post_attention_layernorm)\.)",
         ModuleClass::norm},
        {R"(^model\.embed_tokens\.)", ModuleClass::embedding},
        {R"(^lm_head\.)", ModuleClass::head},
    });
}

TensorRole NamingProfile::classify(std::string_view name) const {
    const std::string s(name);
    for (size_t i = 0; i < compiled_.size(); ++i) {
        std::smatch m;
        if (!std::regex_search(s, m, compiled_[i])) {
            continue;
        }
        TensorRole role;
        role.module_class = rules_[i].module_class;
        if (is_per_layer(role.module_class)) {
            role.layer = std::stoi(m[1].str());
        }
        return role;
    }
    return TensorRole{}; // unmatched: other, no layer
}

TensorRole classify_tensor(std::string_view name, const NamingProfile & profile) {
    return profile.classify(name);
}

MergeMask MergeMask::all() {
    MergeMask mask;
    mask.module_classes = {ModuleClass::attention, ModuleClass::ffn, ModuleClass::embedding,
                           ModuleClass::norm, ModuleClass::head, ModuleClass::other};
    return mask;
}

bool MergeMask::includes(const TensorRole & role) const {
    if (module_classes.find(role.module_class) == module_classes.end()) {
        return false;
    }
    if (layer_range && role.layer) {
        return *role.layer >= layer_range->first && *role.layer <= layer_range->second;
    }
    return true;
}

void MergeMask::validate() const {
    if (module_classes.empty()) {
        throw ValidationError("mask.modules: empty module class set is invalid");
    }
    if (layer_range) {
        if (layer_range->first < 0) {
            throw ValidationError("mask.layers: layer indices must be non-negative");
        }
        if (layer_range->first > layer_range->second) {
            throw ValidationError("mask.layers: range [" + std::to_string(layer_range->first) + ", " +
                                  std::to_string(layer_range->second) + "] has low > high");
        }
    }
}

TensorMap interpolate(const TensorMap & theta_ins, const TensorMap & theta_thi, double lambda,
                      const MergeMask & mask, const NamingProfile & profile, int n_threads) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ValidationError("lambda " + std::to_string(lambda) + " is outside [0, 1]");
    }
    mask.validate();
    check_same_structure(theta_ins, theta_thi, "instruct", "thinking", /*require_dtype=*/true);

    const auto names = name_index(theta_ins);
    std::vector<std::vector<float>> buffers(names.size());
    const float lam = static_cast<float>(lambda);

    parallel_for(names.size(), n_threads, [&](size_t i) {
        const std::string & name = *names[i];
        const Tensor & ins = theta_ins.at(name);
        const Tensor & thi = theta_thi.at(name);
        if (!mask.includes(profile.classify(name))) {
            buffers[i] = mask.default_source == ModelSource::instruct ? ins.values : thi.values;
            return;
        }
        if (lambda == 0.0) {
            buffers[i] = ins.values;
            return;
        }
        if (lambda == 1.0) {
            buffers[i] = thi.values;
            return;
        }
        std::vector<float> out(ins.values.size());
        for (size_t j = 0; j < out.size(); ++j) {
            const float a = ins.values[j];
            const float b = thi.values[j];
            float r = lam * b + (1.0f - lam) * a;
            // rounding must not push the blend outside the convex hull
            const float lo = std::min(a, b);
            const float hi = std::max(a, b);
            r = std::min(std::max(r, lo), hi);
            out[j] = r;
        }
        buffers[i] = std::move(out);
    });
    return assemble(theta_ins, std::move(buffers));
}

TensorMap average(const std::vector<const TensorMap *> & models, int n_threads) {
    if (models.size() < 2) {
        throw ValidationError("average requires at least 2 models, got " +
                              std::to_string(models.size()));
    }
    for (size_t i = 1; i < models.size(); ++i) {
        check_same_structure(*models[0], *models[i], "model[0]",
                             ("model[" + std::to_string(i) + "]").c_str(), /*require_dtype=*/true);
    }

    const auto names = name_index(*models[0]);
    std::vector<std::vector<float>> buffers(names.size());
    const double inv = 1.0 / static_cast<double>(models.size());

    parallel_for(names.size(), n_threads, [&](size_t i) {
        const std::string & name = *names[i];
        const size_t n = models[0]->at(name).values.size();
        std::vector<float> out(n);
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (const TensorMap * m : models) {
                acc += m->at(name).values[j];
            }
            out[j] = static_cast<float>(acc * inv);
        }
        buffers[i] = std::move(out);
    });
    return assemble(*models[0], std::move(buffers));
}

TaskVector task_vector(const TensorMap & theta_i, const TensorMap & theta_0, int n_threads) {
    check_same_structure(theta_i, theta_0, "model", "base", /*require_dtype=*/false);

    const auto names = name_index(theta_i);
    std::vector<std::vector<float>> buffers(names.size());
    parallel_for(names.size(), n_threads, [&](size_t i) {
        const std::string & name = *names[i];
        const Tensor & a = theta_i.at(name);
        const Tensor & b = theta_0.at(name);
        std::vector<float> out(a.values.size());
        for (size_t j = 0; j < out.size(); ++j) {
            out[j] = a.values[j] - b.values[j];
        }
        buffers[i] = std::move(out);
    });
    return assemble(theta_i, std::move(buffers));
}

TensorMap task_arithmetic(const TensorMap & theta_0, const std::vector<const TaskVector *> & tvs,
                          double alpha, int n_threads) {
    if (tvs.empty()) {
        throw ValidationError("task_arithmetic requires at least one task vector");
    }
    for (size_t i = 0; i < tvs.size(); ++i) {
        check_same_structure(theta_0, *tvs[i], "base",
                             ("task_vector[" + std::to_string(i) + "]").c_str(),
                             /*require_dtype=*/false);
    }

    const auto names = name_index(theta_0);
    std::vector<std::vector<float>> buffers(names.size());
    const float a = static_cast<float>(alpha);

    parallel_for(names.size(), n_threads, [&](size_t i) {
        const std::string & name = *names[i];
        const Tensor & base = theta_0.at(name);
        std::vector<float> out(base.values.size());
        for (size_t j = 0; j < out.size(); ++j) {
            float acc = 0.0f;
            for (const TaskVector * tv : tvs) {
                acc += tv->at(name).values[j];
            }
            out[j] = base.values[j] + a * acc;
        }
        buffers[i] = std::move(out);
    });
    return assemble(theta_0, std::move(buffers));
}

SparseDelta ties_trim(const TaskVector & tv, double density, int n_threads) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ValidationError("density " + std::to_string(density) + " is outside (0, 1]");
    }

    const auto names = name_index(tv);
    std::vector<SparseTensor> slots(names.size());

    parallel_for(names.size(), n_threads, [&](size_t i) {
        const Tensor & t = tv.at(*names[i]);
        const int64_t n = static_cast<int64_t>(t.values.size());

        std::vector<int64_t> nonzero;
        nonzero.reserve(t.values.size());
        for (int64_t j = 0; j < n; ++j) {
            if (t.values[j] != 0.0f) {
                nonzero.push_back(j);
            }
        }
        const int64_t want = static_cast<int64_t>(std::ceil(density * static_cast<double>(n)));
        const int64_t keep = std::min<int64_t>(want, static_cast<int64_t>(nonzero.size()));

        // largest magnitude first, lower flat index wins ties
        auto by_magnitude = [&](int64_t a, int64_t b) {
            const float ma = std::fabs(t.values[a]);
            const float mb = std::fabs(t.values[b]);
            if (ma != mb) {
                return ma > mb;
            }
            return a < b;
        };
        if (keep < static_cast<int64_t>(nonzero.size())) {
            std::partial_sort(nonzero.begin(), nonzero.begin() + keep, nonzero.end(), by_magnitude);
            nonzero.resize(static_cast<size_t>(keep));
        }
        std::sort(nonzero.begin(), nonzero.end());

        SparseTensor s;
        s.shape = t.shape;
        s.indices = std::move(nonzero);
        s.values.reserve(s.indices.size());
        for (int64_t j : s.indices) {
            s.values.push_back(t.values[j]);
        }
        slots[i] = std::move(s);
    });

    SparseDelta out;
    out.density = density;
    for (size_t i = 0; i < names.size(); ++i) {
        out.tensors.emplace_hint(out.tensors.end(), *names[i], std::move(slots[i]));
    }
    return out;
}

TensorMap ties_merge(const TensorMap & theta_0, const std::vector<const TaskVector *> & tvs,
                     double density, double alpha, int n_threads) {
    if (tvs.empty()) {
        throw ValidationError("ties_merge requires at least one task vector");
    }
    for (size_t i = 0; i < tvs.size(); ++i) {
        check_same_structure(theta_0, *tvs[i], "base",
                             ("task_vector[" + std::to_string(i) + "]").c_str(),
                             /*require_dtype=*/false);
    }

    std::vector<SparseDelta> trimmed;
    trimmed.reserve(tvs.size());
    for (const TaskVector * tv : tvs) {
        trimmed.push_back(ties_trim(*tv, density, n_threads));
    }

    const auto names = name_index(theta_0);
    std::vector<std::vector<float>> buffers(names.size());
    const float a = static_cast<float>(alpha);

    parallel_for(names.size(), n_threads, [&](size_t i) {
        const std::string & name = *names[i];
        const Tensor & base = theta_0.at(name);
        const size_t n = base.values.size();

        std::vector<float> sign_sum(n, 0.0f);
        for (const SparseDelta & sd : trimmed) {
            const SparseTensor & s = sd.tensors.at(name);
            for (size_t k = 0; k < s.indices.size(); ++k) {
                sign_sum[static_cast<size_t>(s.indices[k])] += s.values[k];
            }
        }

        std::vector<float> match_sum(n, 0.0f);
        std::vector<int> match_count(n, 0);
        for (const SparseDelta & sd : trimmed) {
            const SparseTensor & s = sd.tensors.at(name);
            for (size_t k = 0; k < s.indices.size(); ++k) {
                const size_t j = static_cast<size_t>(s.indices[k]);
                const float ss = sign_sum[j];
                if (ss == 0.0f) {
                    continue; // no elected sign
                }
                if ((ss > 0.0f) == (s.values[k] > 0.0f)) {
                    match_sum[j] += s.values[k];
                    match_count[j] += 1;
                }
            }
        }

        std::vector<float> out(n);
        for (size_t j = 0; j < n; ++j) {
            const float merged = match_count[j] > 0 ? match_sum[j] / static_cast<float>(match_count[j]) : 0.0f;
            out[j] = base.values[j] + a * merged;
        }
        buffers[i] = std::move(out);
    });
    return assemble(theta_0, std::move(buffers));
}

double weight_similarity(const TensorMap & a, const TensorMap & b, int n_threads) {
    check_same_structure(a, b, "model_a", "model_b", /*require_dtype=*/false);
    if (a.empty()) {
        return 0.0;
    }

    const auto names = name_index(a);
    std::vector<double> ratios(names.size());
    parallel_for(names.size(), n_threads, [&](size_t i) {
        const Tensor & ta = a.at(*names[i]);
        const Tensor & tb = b.at(*names[i]);
        double diff_sq = 0.0;
        double a_sq = 0.0;
        double b_sq = 0.0;
        for (size_t j = 0; j < ta.values.size(); ++j) {
            const double va = ta.values[j];
            const double vb = tb.values[j];
            diff_sq += (va - vb) * (va - vb);
            a_sq += va * va;
            b_sq += vb * vb;
        }
        ratios[i] = std::sqrt(diff_sq) / (std::sqrt(a_sq) + std::sqrt(b_sq) + 1e-12);
    });

    // summed in name order so the result does not depend on scheduling
    double total = 0.0;
    for (double r : ratios) {
        total += r;
    }
    return total / static_cast<double>(names.size());
}

} // namespace ckm
