// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstddef>
#include <string_view>

namespace ckm {

// Storage dtypes of checkpoint tensors. In memory everything is widened to
// FP32; the source dtype is kept so write-back can narrow again.
enum class Dtype {
    f32,
    f16,
    bf16,
};

size_t dtype_size(Dtype dt);

// safetensors spelling: "F32", "F16", "BF16"
const char * dtype_name(Dtype dt);
bool dtype_from_name(std::string_view name, Dtype & out);

// Exact widenings (injective, no information loss).
float bf16_to_f32(uint16_t bits);
float f16_to_f32(uint16_t bits);

// Round-to-nearest-even narrowings.
uint16_t f32_to_bf16(float v);
uint16_t f32_to_f16(float v);

} // namespace ckm
