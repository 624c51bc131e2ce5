// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tensor.hpp"

#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ckm {

enum class ModuleClass {
    attention,
    ffn,
    embedding,
    norm,
    head,
    other,
};

const char * module_class_name(ModuleClass mc);
bool module_class_from_name(std::string_view name, ModuleClass & out);

struct TensorRole {
    std::optional<int> layer;
    ModuleClass module_class = ModuleClass::other;
};

// One classification rule: an ECMAScript regex searched against the tensor
// name. For the per-layer classes (attention/ffn/norm) the first capture
// group must be the decimal layer index.
struct NamingRule {
    std::string pattern;
    ModuleClass module_class = ModuleClass::other;
};

class NamingProfile {
public:
    NamingProfile(); // defaults()
    explicit NamingProfile(std::vector<NamingRule> rules);

    // Qwen/Llama-style tensor names ("model.layers.12.mlp.gate_proj.weight", ...)
    static NamingProfile defaults();

    // First matching rule wins; unmatched names are {other, no layer}.
    TensorRole classify(std::string_view name) const;

    const std::vector<NamingRule> & rules() const { return rules_; }

private:
    std::vector<NamingRule> rules_;
    std::vector<std::regex> compiled_;
};

TensorRole classify_tensor(std::string_view name, const NamingProfile & profile);

// Which input supplies tensors the mask leaves untouched.
enum class ModelSource {
    instruct,
    thinking,
};

// Selects the tensors an interpolation applies to. A tensor is masked in when
// its module class is listed and, if a layer range is set and the tensor
// carries a layer index, that index falls inside the (inclusive) range.
// Tensors without a layer index are not constrained by layer_range: a full
// [0, n-1] range must behave exactly like no range at all.
struct MergeMask {
    std::optional<std::pair<int, int>> layer_range;
    std::set<ModuleClass> module_classes;
    ModelSource default_source = ModelSource::instruct;

    static MergeMask all();
    bool includes(const TensorRole & role) const;
    void validate() const;
};

// out = lambda * theta_thi + (1 - lambda) * theta_ins for masked-in tensors;
// masked-out tensors are copied verbatim from mask.default_source. lambda 0
// and 1 short-circuit to exact copies.
TensorMap interpolate(const TensorMap & theta_ins, const TensorMap & theta_thi, double lambda,
                      const MergeMask & mask, const NamingProfile & profile, int n_threads = 0);

// Element-wise arithmetic mean of >= 2 models.
TensorMap average(const std::vector<const TensorMap *> & models, int n_threads = 0);

// tv = theta_i - theta_0
TaskVector task_vector(const TensorMap & theta_i, const TensorMap & theta_0, int n_threads = 0);

// out = theta_0 + alpha * sum(tvs)
TensorMap task_arithmetic(const TensorMap & theta_0, const std::vector<const TaskVector *> & tvs,
                          double alpha, int n_threads = 0);

// Magnitude-trimmed view of one tensor's delta. Indices are strictly
// increasing flat positions; all stored values are nonzero.
struct SparseTensor {
    std::vector<int64_t> shape;
    std::vector<int64_t> indices;
    std::vector<float> values;
};

struct SparseDelta {
    double density = 1.0;
    std::map<std::string, SparseTensor> tensors;
};

// Keeps, per tensor, the ceil(density * numel) entries of largest magnitude
// (fewer if the tensor has fewer nonzeros). Ties break toward the lower flat
// index.
SparseDelta ties_trim(const TaskVector & tv, double density, int n_threads = 0);

// Trim every task vector, elect the sign of the per-position sum of retained
// values, average the retained values that agree with the elected sign, and
// add the result back: out = theta_0 + alpha * merged. Positions with a zero
// sign sum contribute nothing.
TensorMap ties_merge(const TensorMap & theta_0, const std::vector<const TaskVector *> & tvs,
                     double density, double alpha, int n_threads = 0);

// Mean over tensors of ||A - B||_F / (||A||_F + ||B||_F + 1e-12).
// Zero iff the models are identical; symmetric.
double weight_similarity(const TensorMap & a, const TensorMap & b, int n_threads = 0);

} // namespace ckm
