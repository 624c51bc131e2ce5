// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "dtype.hpp"

#include <cstring>

namespace ckm {

size_t dtype_size(Dtype dt) {
    switch (dt) {
        case Dtype::f32:  return 4;
        case Dtype::f16:  return 2;
        case Dtype::bf16: return 2;
    }
    return 0;
}

const char * dtype_name(Dtype dt) {
    switch (dt) {
        case Dtype::f32:  return "F32";
        case Dtype::f16:  return "F16";
        case Dtype::bf16: return "BF16";
    }
    return "?";
}

bool dtype_from_name(std::string_view name, Dtype & out) {
    if (name == "F32")  { out = Dtype::f32;  return true; }
    if (name == "F16")  { out = Dtype::f16;  return true; }
    if (name == "BF16") { out = Dtype::bf16; return true; }
    return false;
}

static float bits_to_f32(uint32_t bits) {
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

static uint32_t f32_to_bits(float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    return bits;
}

float bf16_to_f32(uint16_t bits) {
    return bits_to_f32(static_cast<uint32_t>(bits) << 16);
}

uint16_t f32_to_bf16(float v) {
    uint32_t x = f32_to_bits(v);
    if ((x & 0x7fffffffu) > 0x7f800000u) {
        // NaN: keep sign and top mantissa bits, force quiet
        return static_cast<uint16_t>((x >> 16) | 0x0040u);
    }
    x += 0x7fffu + ((x >> 16) & 1u);
    return static_cast<uint16_t>(x >> 16);
}

float f16_to_f32(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp  = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign; // signed zero
        } else {
            // subnormal: renormalize; the f16 subnormal exponent is -14
            int shift = 0;
            while (!(mant & 0x400u)) {
                mant <<= 1;
                ++shift;
            }
            mant &= 0x3ffu;
            bits = sign | (static_cast<uint32_t>(127 - 14 - shift) << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13); // inf / nan
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return bits_to_f32(bits);
}

uint16_t f32_to_f16(float v) {
    const uint32_t x    = f32_to_bits(v);
    const uint32_t sign = (x >> 16) & 0x8000u;
    const uint32_t absx = x & 0x7fffffffu;

    if (absx >= 0x7f800000u) {
        // inf stays inf; nan keeps top mantissa bits, forced quiet
        const uint16_t mant =
            absx > 0x7f800000u ? static_cast<uint16_t>(((absx >> 13) & 0x3ffu) | 0x200u) : 0;
        return static_cast<uint16_t>(sign | 0x7c00u | mant);
    }

    const int e = static_cast<int>(absx >> 23) - 127 + 15;
    uint32_t mant = absx & 0x7fffffu;

    if (e >= 0x1f) {
        return static_cast<uint16_t>(sign | 0x7c00u); // overflow -> inf
    }
    if (e <= 0) {
        if (e < -10) {
            return static_cast<uint16_t>(sign); // underflows to zero even after rounding
        }
        // subnormal: shift the (implicit-one) mantissa into place, round to nearest even
        mant |= 0x800000u;
        const uint32_t shift   = static_cast<uint32_t>(14 - e); // 14..24
        const uint32_t half    = 1u << (shift - 1);
        const uint32_t rem     = mant & ((1u << shift) - 1);
        uint32_t       rounded = mant >> shift;
        if (rem > half || (rem == half && (rounded & 1u))) {
            ++rounded; // may carry into the smallest normal, which is correct
        }
        return static_cast<uint16_t>(sign | rounded);
    }

    uint16_t out = static_cast<uint16_t>(sign | (static_cast<uint32_t>(e) << 10) | (mant >> 13));
    const uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) {
        ++out; // mantissa carry may bump the exponent; 65520.0f -> inf is intended
    }
    return out;
}

} // namespace ckm
