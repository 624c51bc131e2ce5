// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dtype.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ckm {

// One named tensor held as FP32 for arithmetic, tagged with its storage dtype
// so write-back can narrow losslessly for round trips.
struct Tensor {
    Dtype source_dtype = Dtype::f32;
    std::vector<int64_t> shape;
    std::vector<float> values;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) {
            n *= d;
        }
        return n;
    }
};

// Name-ordered so every iteration (and therefore every output) is deterministic.
using TensorMap = std::map<std::string, Tensor>;

// Per-tensor parameter shift, same layout as a model.
using TaskVector = TensorMap;

int64_t shape_numel(const std::vector<int64_t> & shape);

// Throws MismatchError naming the first offending tensor. `lhs`/`rhs` label
// the two models in the message. Dtype agreement is only enforced when
// `require_dtype` is set.
void check_same_structure(const TensorMap & a, const TensorMap & b,
                          const char * lhs, const char * rhs, bool require_dtype);

} // namespace ckm
