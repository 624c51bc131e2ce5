// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "error.hpp"
#include "merge_core.hpp"
#include "test_fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

using namespace ckm;
using namespace ckmtest;

namespace {

TensorMap one_tensor(const std::string & name, std::vector<float> v) {
    TensorMap m;
    m.emplace(name, make_tensor({static_cast<int64_t>(v.size())}, std::move(v)));
    return m;
}

TaskVector scaled(const TaskVector & tv, float s) {
    TaskVector out = tv;
    for (auto & [name, t] : out) {
        for (auto & v : t.values) {
            v *= s;
        }
    }
    return out;
}

double max_abs_diff(const TensorMap & a, const TensorMap & b) {
    double worst = 0.0;
    for (const auto & [name, t] : a) {
        const auto & u = b.at(name);
        for (size_t j = 0; j < t.values.size(); ++j) {
            worst = std::max(worst, std::fabs(static_cast<double>(t.values[j]) -
                                              static_cast<double>(u.values[j])));
        }
    }
    return worst;
}

bool same_bits(const std::vector<float> & a, const std::vector<float> & b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// brute-force trim oracle: sort all indices by magnitude (lower index wins
// ties), keep min(ceil(density*n), nonzero count)
std::vector<int64_t> trim_oracle(const std::vector<float> & v, double density) {
    std::vector<int64_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        const float ma = std::fabs(v[a]);
        const float mb = std::fabs(v[b]);
        if (ma != mb) {
            return ma > mb;
        }
        return a < b;
    });
    int64_t nonzero = 0;
    for (float x : v) {
        nonzero += x != 0.0f ? 1 : 0;
    }
    const int64_t keep = std::min<int64_t>(
        static_cast<int64_t>(std::ceil(density * static_cast<double>(v.size()))), nonzero);
    idx.resize(static_cast<size_t>(keep));
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

TEST_CASE("classify_tensor follows the default naming profile") {
    const NamingProfile profile = NamingProfile::defaults();

    TensorRole r = classify_tensor("model.layers.12.mlp.gate_proj.weight", profile);
    CHECK(r.module_class == ModuleClass::ffn);
    REQUIRE(r.layer.has_value());
    CHECK(*r.layer == 12);

    r = classify_tensor("model.layers.0.self_attn.q_proj.weight", profile);
    CHECK(r.module_class == ModuleClass::attention);
    CHECK(*r.layer == 0);

    r = classify_tensor("model.embed_tokens.weight", profile);
    CHECK(r.module_class == ModuleClass::embedding);
    CHECK_FALSE(r.layer.has_value());

    r = classify_tensor("lm_head.weight", profile);
    CHECK(r.module_class == ModuleClass::head);
    CHECK_FALSE(r.layer.has_value());

    r = classify_tensor("model.layers.7.input_layernorm.weight", profile);
    CHECK(r.module_class == ModuleClass::norm);
    CHECK(*r.layer == 7);

    // unmatched names are a classification, not an error
    r = classify_tensor("model.norm.weight", profile);
    CHECK(r.module_class == ModuleClass::other);
    CHECK_FALSE(r.layer.has_value());
}

TEST_CASE("per-layer profile rules require a layer capture") {
    CHECK_THROWS_AS(NamingProfile({{"^foo", ModuleClass::attention}}), ValidationError);
    CHECK_NOTHROW(NamingProfile({{"^foo", ModuleClass::embedding}}));
    CHECK_THROWS_AS(NamingProfile({{"([0-9]+", ModuleClass::other}}), ValidationError);
}

TEST_CASE("interpolate endpoints and midpoint") {
    const TensorMap ins = one_tensor("w", {2.0f, -4.0f});
    const TensorMap thi = one_tensor("w", {4.0f, 0.0f});
    const NamingProfile profile;

    SUBCASE("lambda 0 is bit-identical to instruct") {
        const TensorMap out = interpolate(ins, thi, 0.0, MergeMask::all(), profile);
        CHECK(same_bits(out.at("w").values, ins.at("w").values));
    }
    SUBCASE("lambda 1 is bit-identical to thinking") {
        const TensorMap out = interpolate(ins, thi, 1.0, MergeMask::all(), profile);
        CHECK(same_bits(out.at("w").values, thi.at("w").values));
    }
    SUBCASE("lambda 0.5 is the midpoint") {
        const TensorMap out = interpolate(ins, thi, 0.5, MergeMask::all(), profile);
        CHECK(out.at("w").values == std::vector<float>{3.0f, -2.0f});
    }
    SUBCASE("negative zero survives the endpoints") {
        const TensorMap a = one_tensor("w", {-0.0f, 1.0f});
        const TensorMap b = one_tensor("w", {5.0f, 5.0f});
        const TensorMap out = interpolate(a, b, 0.0, MergeMask::all(), profile);
        CHECK(same_bits(out.at("w").values, a.at("w").values));
    }
}

TEST_CASE("interpolate validates its inputs") {
    const TensorMap ins = one_tensor("w", {1.0f});
    const NamingProfile profile;

    CHECK_THROWS_AS(interpolate(ins, one_tensor("w", {1.0f, 2.0f}), 0.5, MergeMask::all(), profile),
                    MismatchError);
    CHECK_THROWS_AS(interpolate(ins, one_tensor("v", {1.0f}), 0.5, MergeMask::all(), profile),
                    MismatchError);
    CHECK_THROWS_AS(interpolate(ins, ins, 1.5, MergeMask::all(), profile), ValidationError);
    CHECK_THROWS_AS(interpolate(ins, ins, -0.1, MergeMask::all(), profile), ValidationError);

    TensorMap bf16_twin;
    bf16_twin.emplace("w", make_tensor({1}, {1.0f}, Dtype::bf16));
    CHECK_THROWS_AS(interpolate(ins, bf16_twin, 0.5, MergeMask::all(), profile), MismatchError);

    MergeMask empty;
    CHECK_THROWS_AS(interpolate(ins, ins, 0.5, empty, profile), ValidationError);

    MergeMask inverted = MergeMask::all();
    inverted.layer_range = {5, 2};
    CHECK_THROWS_AS(interpolate(ins, ins, 0.5, inverted, profile), ValidationError);
}

TEST_CASE("interpolation with a layer range blends only those layers") {
    std::mt19937 rng(42);
    const TensorMap ins = layered_model(rng, 36);
    const TensorMap thi = random_like(rng, ins);
    const NamingProfile profile;

    MergeMask mask = MergeMask::all();
    mask.layer_range = {12, 35};
    const double lambda = 0.8;
    const TensorMap out = interpolate(ins, thi, lambda, mask, profile);

    const float lam = 0.8f;
    size_t blended = 0;
    size_t copied = 0;
    for (const auto & [name, t] : out) {
        const TensorRole role = profile.classify(name);
        const bool in_range = role.layer.has_value() ? (*role.layer >= 12 && *role.layer <= 35) : true;
        if (in_range) {
            ++blended;
            for (size_t j = 0; j < t.values.size(); ++j) {
                const float expect = lam * thi.at(name).values[j] + (1.0f - lam) * ins.at(name).values[j];
                CHECK(t.values[j] == doctest::Approx(expect).epsilon(1e-6));
            }
        } else {
            ++copied;
            CHECK(same_bits(t.values, ins.at(name).values));
        }
    }
    // 24 layers x 9 tensors blended, plus embedding/head/final-norm; 12 x 9 copied
    CHECK(blended == 24 * 9 + 3);
    CHECK(copied == 12 * 9);
    CHECK(blended + copied == out.size());
}

TEST_CASE("mask partition covers every tensor with no third behaviour") {
    std::mt19937 rng(43);
    const TensorMap ins = layered_model(rng, 6);
    const TensorMap thi = random_like(rng, ins);
    const NamingProfile profile;

    std::vector<MergeMask> masks;
    {
        MergeMask m = MergeMask::all(); // full
        masks.push_back(m);
        m = MergeMask::all();
        m.layer_range = {2, 4};
        masks.push_back(m);
        m = MergeMask::all();
        m.module_classes.erase(ModuleClass::ffn); // figure-5 style: skip ffn
        masks.push_back(m);
        m = MergeMask::all();
        m.module_classes.erase(ModuleClass::attention); // skip attention
        m.default_source = ModelSource::thinking;
        masks.push_back(m);
        m = MergeMask::all();
        m.module_classes = {ModuleClass::embedding, ModuleClass::head};
        m.layer_range = {0, 0};
        masks.push_back(m);
    }

    for (size_t mi = 0; mi < masks.size(); ++mi) {
        CAPTURE(mi);
        const MergeMask & mask = masks[mi];
        const TensorMap out = interpolate(ins, thi, 0.37, mask, profile);
        size_t masked_in = 0;
        size_t masked_out = 0;
        for (const auto & [name, t] : out) {
            const TensorMap & source =
                mask.default_source == ModelSource::instruct ? ins : thi;
            if (mask.includes(profile.classify(name))) {
                ++masked_in;
                // blend differs from both inputs almost surely; just check hull
                for (size_t j = 0; j < t.values.size(); ++j) {
                    const float lo = std::min(ins.at(name).values[j], thi.at(name).values[j]);
                    const float hi = std::max(ins.at(name).values[j], thi.at(name).values[j]);
                    CHECK(t.values[j] >= lo);
                    CHECK(t.values[j] <= hi);
                }
            } else {
                ++masked_out;
                CHECK(same_bits(t.values, source.at(name).values));
            }
        }
        CHECK(masked_in + masked_out == out.size());
    }
}

TEST_CASE("convexity bound holds for random models") {
    std::mt19937 rng(44);
    std::uniform_real_distribution<double> lam(0.0, 1.0);
    const NamingProfile profile;
    for (int trial = 0; trial < 50; ++trial) {
        const TensorMap a = random_model(rng, 4, 64, /*mixed_dtypes=*/false);
        const TensorMap b = random_like(rng, a);
        const TensorMap out = interpolate(a, b, lam(rng), MergeMask::all(), profile);
        for (const auto & [name, t] : out) {
            for (size_t j = 0; j < t.values.size(); ++j) {
                const float lo = std::min(a.at(name).values[j], b.at(name).values[j]);
                const float hi = std::max(a.at(name).values[j], b.at(name).values[j]);
                CHECK(t.values[j] >= lo);
                CHECK(t.values[j] <= hi);
            }
        }
    }
}

TEST_CASE("interpolation is equivalent to task arithmetic on an arbitrary base") {
    std::mt19937 rng(45);
    std::uniform_real_distribution<double> lam(0.0, 1.0);
    const NamingProfile profile;

    for (int trial = 0; trial < 25; ++trial) {
        const TensorMap ins = random_model(rng, 5, 100, /*mixed_dtypes=*/false);
        const TensorMap thi = random_like(rng, ins);
        const TensorMap base = random_like(rng, ins); // arbitrary
        const double lambda = lam(rng);

        const TensorMap via_mi = interpolate(ins, thi, lambda, MergeMask::all(), profile);

        const TaskVector tv_thi = task_vector(thi, base);
        const TaskVector tv_ins = task_vector(ins, base);
        const TaskVector s_thi = scaled(tv_thi, static_cast<float>(lambda));
        const TaskVector s_ins = scaled(tv_ins, 1.0f - static_cast<float>(lambda));
        const TensorMap via_ta = task_arithmetic(base, {&s_thi, &s_ins}, 1.0);

        CHECK(max_abs_diff(via_mi, via_ta) <= 1e-5);
    }
}

TEST_CASE("average") {
    SUBCASE("two identical models average to themselves") {
        const TensorMap a = one_tensor("w", {1.0f, -2.0f, 3.5f});
        const TensorMap out = average({&a, &a});
        CHECK(out.at("w").values == a.at("w").values);
    }
    SUBCASE("simple mean") {
        const TensorMap a = one_tensor("w", {2.0f});
        const TensorMap b = one_tensor("w", {4.0f});
        CHECK(average({&a, &b}).at("w").values == std::vector<float>{3.0f});
    }
    SUBCASE("average equals interpolate at one half") {
        std::mt19937 rng(46);
        const NamingProfile profile;
        const TensorMap a = random_model(rng, 4, 50, /*mixed_dtypes=*/false);
        const TensorMap b = random_like(rng, a);
        CHECK(max_abs_diff(average({&a, &b}), interpolate(a, b, 0.5, MergeMask::all(), profile)) <=
              1e-7);
    }
    SUBCASE("fewer than two models is an error") {
        const TensorMap a = one_tensor("w", {1.0f});
        CHECK_THROWS_AS(average({&a}), ValidationError);
        CHECK_THROWS_AS(average({}), ValidationError);
    }
}

TEST_CASE("task_vector") {
    const TensorMap a = one_tensor("w", {5.0f});
    const TensorMap b = one_tensor("w", {2.0f});

    CHECK(task_vector(a, b).at("w").values == std::vector<float>{3.0f});
    CHECK(task_vector(a, a).at("w").values == std::vector<float>{0.0f});

    // apply-back: theta_0 + tv(theta_i, theta_0) == theta_i
    std::mt19937 rng(47);
    const TensorMap ti = random_model(rng, 4, 60, /*mixed_dtypes=*/false);
    const TensorMap t0 = random_like(rng, ti);
    const TaskVector tv = task_vector(ti, t0);
    const TensorMap back = task_arithmetic(t0, {&tv}, 1.0);
    CHECK(max_abs_diff(back, ti) <= 1e-7);
}

TEST_CASE("task_arithmetic") {
    SUBCASE("alpha 0 returns the base") {
        const TensorMap base = one_tensor("w", {1.0f, 2.0f});
        const TaskVector tv = one_tensor("w", {5.0f, -5.0f});
        CHECK(task_arithmetic(base, {&tv}, 0.0).at("w").values == base.at("w").values);
    }
    SUBCASE("baseline alpha 0.7 with two task vectors") {
        const TensorMap base = one_tensor("w", {1.0f});
        const TaskVector tv1 = one_tensor("w", {2.0f});
        const TaskVector tv2 = one_tensor("w", {-1.0f});
        const TensorMap out = task_arithmetic(base, {&tv1, &tv2}, 0.7);
        CHECK(out.at("w").values[0] == doctest::Approx(1.7).epsilon(1e-6));
    }
    SUBCASE("empty task vector list is an error") {
        const TensorMap base = one_tensor("w", {1.0f});
        CHECK_THROWS_AS(task_arithmetic(base, {}, 1.0), ValidationError);
    }
    SUBCASE("mismatched names are an error") {
        const TensorMap base = one_tensor("w", {1.0f});
        const TaskVector tv = one_tensor("v", {1.0f});
        CHECK_THROWS_AS(task_arithmetic(base, {&tv}, 1.0), MismatchError);
    }
}

TEST_CASE("ties_trim") {
    SUBCASE("the worked example keeps indices 0 and 3") {
        const TaskVector tv = one_tensor("w", {3.0f, -1.0f, 0.5f, -4.0f, 2.0f});
        const SparseDelta sd = ties_trim(tv, 0.4);
        CHECK(sd.tensors.at("w").indices == std::vector<int64_t>{0, 3});
        CHECK(sd.tensors.at("w").values == std::vector<float>{3.0f, -4.0f});
        CHECK(sd.density == 0.4);
    }
    SUBCASE("density 1 keeps every nonzero unchanged") {
        const TaskVector tv = one_tensor("w", {1.0f, 0.0f, -2.0f});
        const SparseDelta sd = ties_trim(tv, 1.0);
        CHECK(sd.tensors.at("w").indices == std::vector<int64_t>{0, 2});
        CHECK(sd.tensors.at("w").values == std::vector<float>{1.0f, -2.0f});
    }
    SUBCASE("all-zero delta trims to nothing") {
        const TaskVector tv = one_tensor("w", {0.0f, 0.0f});
        const SparseDelta sd = ties_trim(tv, 0.5);
        CHECK(sd.tensors.at("w").indices.empty());
        CHECK(sd.tensors.at("w").values.empty());
    }
    SUBCASE("magnitude ties break toward the lower index") {
        const TaskVector tv = one_tensor("w", {2.0f, -2.0f, 2.0f, 1.0f});
        const SparseDelta sd = ties_trim(tv, 0.5); // keep 2 of 4
        CHECK(sd.tensors.at("w").indices == std::vector<int64_t>{0, 1});
    }
    SUBCASE("density out of range") {
        const TaskVector tv = one_tensor("w", {1.0f});
        CHECK_THROWS_AS(ties_trim(tv, 0.0), ValidationError);
        CHECK_THROWS_AS(ties_trim(tv, 1.5), ValidationError);
    }
    SUBCASE("matches the brute-force oracle on random tensors") {
        std::mt19937 rng(48);
        std::uniform_real_distribution<float> val(-1.0f, 1.0f);
        std::uniform_int_distribution<int> len(1, 200);
        std::bernoulli_distribution zero(0.3);
        for (double density : {0.2, 0.4, 1.0}) {
            for (int trial = 0; trial < 60; ++trial) {
                std::vector<float> v(static_cast<size_t>(len(rng)));
                for (auto & x : v) {
                    x = zero(rng) ? 0.0f : val(rng);
                }
                const TaskVector tv = one_tensor("w", v);
                const SparseDelta sd = ties_trim(tv, density);
                CHECK(sd.tensors.at("w").indices == trim_oracle(v, density));
            }
        }
    }
}

TEST_CASE("ties_merge") {
    SUBCASE("single task vector at density 1 reduces to task arithmetic") {
        std::mt19937 rng(49);
        const TensorMap base = random_model(rng, 4, 80, /*mixed_dtypes=*/false);
        const TaskVector tv = random_like(rng, base);
        const TensorMap via_ties = ties_merge(base, {&tv}, 1.0, 0.7);
        const TensorMap via_ta = task_arithmetic(base, {&tv}, 0.7);
        CHECK(max_abs_diff(via_ties, via_ta) <= 1e-6);
    }
    SUBCASE("sign election keeps the majority side only") {
        const TensorMap base = one_tensor("w", {0.0f, 0.0f});
        const TaskVector tv1 = one_tensor("w", {3.0f, 2.0f});
        const TaskVector tv2 = one_tensor("w", {-1.0f, -2.0f});
        const TensorMap out = ties_merge(base, {&tv1, &tv2}, 1.0, 1.0);
        // +3 vs -1: elected +, mean{+3} = 3; +2 vs -2: zero sign sum -> 0
        CHECK(out.at("w").values == std::vector<float>{3.0f, 0.0f});
    }
    SUBCASE("disjoint mean averages only matching values") {
        const TensorMap base = one_tensor("w", {0.0f});
        const TaskVector tv1 = one_tensor("w", {4.0f});
        const TaskVector tv2 = one_tensor("w", {2.0f});
        const TaskVector tv3 = one_tensor("w", {-1.0f});
        const TensorMap out = ties_merge(base, {&tv1, &tv2, &tv3}, 1.0, 1.0);
        CHECK(out.at("w").values[0] == doctest::Approx(3.0).epsilon(1e-6)); // mean{4, 2}
    }
    SUBCASE("empty task vector list is an error") {
        const TensorMap base = one_tensor("w", {1.0f});
        CHECK_THROWS_AS(ties_merge(base, {}, 0.2, 0.5), ValidationError);
    }
}

TEST_CASE("weight similarity axioms") {
    std::mt19937 rng(50);

    SUBCASE("identity and symmetry") {
        const TensorMap a = random_model(rng, 5, 60, /*mixed_dtypes=*/false);
        const TensorMap b = random_like(rng, a);
        CHECK(weight_similarity(a, a) == 0.0);
        CHECK(weight_similarity(a, b) == weight_similarity(b, a));
        CHECK(weight_similarity(a, b) > 0.0);
    }
    SUBCASE("scaling the difference increases sigma") {
        for (int trial = 0; trial < 20; ++trial) {
            const TensorMap a = random_model(rng, 4, 50, /*mixed_dtypes=*/false);
            TensorMap b1 = a;
            TensorMap b2 = a;
            std::uniform_real_distribution<float> d(-0.5f, 0.5f);
            for (auto & [name, t] : b1) {
                auto & t2 = b2.at(name);
                for (size_t j = 0; j < t.values.size(); ++j) {
                    const float delta = d(rng);
                    t.values[j] += delta;
                    t2.values[j] += 2.0f * delta;
                }
            }
            CHECK(weight_similarity(a, b2) > weight_similarity(a, b1));
        }
    }
    SUBCASE("instruct/thinking ordering mirrors the smaller-delta construction") {
        // thinking-like model plus a small delta (instruct) vs a large delta (base)
        const TensorMap thinking = random_model(rng, 5, 60, /*mixed_dtypes=*/false);
        TensorMap instruct = thinking;
        TensorMap base = thinking;
        std::uniform_real_distribution<float> d(-0.1f, 0.1f);
        for (auto & [name, t] : instruct) {
            auto & tb = base.at(name);
            for (size_t j = 0; j < t.values.size(); ++j) {
                const float delta = d(rng);
                t.values[j] += delta;        // small shift
                tb.values[j] += 4.0f * delta; // larger shift
            }
        }
        CHECK(weight_similarity(instruct, thinking) < weight_similarity(base, thinking));
    }
    SUBCASE("mismatch is an error") {
        const TensorMap a = one_tensor("w", {1.0f});
        const TensorMap b = one_tensor("v", {1.0f});
        CHECK_THROWS_AS(weight_similarity(a, b), MismatchError);
    }
}

TEST_CASE("per-tensor parallelism is deterministic") {
    std::mt19937 rng(51);
    const TensorMap a = random_model(rng, 12, 200, /*mixed_dtypes=*/false);
    const TensorMap b = random_like(rng, a);
    const NamingProfile profile;

    const TensorMap r1 = interpolate(a, b, 0.3, MergeMask::all(), profile, 1);
    const TensorMap r2 = interpolate(a, b, 0.3, MergeMask::all(), profile, 2);
    const TensorMap r8 = interpolate(a, b, 0.3, MergeMask::all(), profile, 8);
    for (const auto & [name, t] : r1) {
        CHECK(same_bits(t.values, r2.at(name).values));
        CHECK(same_bits(t.values, r8.at(name).values));
    }
}
