// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "error.hpp"
#include "tensor_store.hpp"
#include "test_fixtures.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace ckm;
using namespace ckmtest;

namespace {

bool same_bits(const std::vector<float> & a, const std::vector<float> & b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("single-file checkpoint enumerates every tensor once") {
    TempDir tmp("store_single");

    TensorMap m;
    m.emplace("a", make_tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}, Dtype::f32));
    m.emplace("b", make_tensor({3}, {0.5f, 1.5f, -2.0f}, Dtype::bf16));
    const auto out = tmp.path() / "model.safetensors";
    write_model(m, out);

    const ModelManifest manifest = open_manifest(out);
    CHECK(manifest.tensors.size() == 2);
    CHECK(manifest.shards.size() == 1);
    CHECK(manifest.at("a").dtype == Dtype::f32);
    CHECK(manifest.at("a").shape == std::vector<int64_t>{2, 2});
    CHECK(manifest.at("b").dtype == Dtype::bf16);
    CHECK(manifest.at("b").numel() == 3);

    // opening the containing directory works too
    const ModelManifest via_dir = open_manifest(tmp.path());
    CHECK(via_dir.tensors.size() == 2);
}

TEST_CASE("sharded checkpoint with index lists all shards") {
    TempDir tmp("store_sharded");

    TensorMap m;
    for (int i = 0; i < 4; ++i) {
        m.emplace("t" + std::to_string(i), make_tensor({4}, {1.0f, 2.0f, 3.0f, 4.0f}, Dtype::f32));
    }
    WriteOptions opts;
    opts.shard_limit = 32; // two 16-byte tensors per shard
    write_model(m, tmp.path(), opts);

    CHECK(std::filesystem::exists(tmp.path() / "model.safetensors.index.json"));
    CHECK(std::filesystem::exists(tmp.path() / "model-00001-of-00002.safetensors"));
    CHECK(std::filesystem::exists(tmp.path() / "model-00002-of-00002.safetensors"));

    const ModelManifest manifest = open_manifest(tmp.path());
    CHECK(manifest.tensors.size() == 4);
    CHECK(manifest.shards.size() == 2);
    for (int i = 0; i < 4; ++i) {
        const Tensor t = read_tensor(manifest, "t" + std::to_string(i));
        CHECK(t.values == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
    }
}

TEST_CASE("length prefix larger than the file is a malformed header") {
    TempDir tmp("store_badlen");
    const auto p = tmp.path() / "bad.safetensors";
    // 8-byte prefix claims 1000 header bytes, then only a few follow
    std::vector<unsigned char> payload = {1, 2, 3};
    write_raw_safetensors(p, "", payload);
    {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        unsigned char prefix[8] = {0xe8, 0x03, 0, 0, 0, 0, 0, 0}; // 1000
        out.write(reinterpret_cast<const char *>(prefix), 8);
        out.write("abc", 3);
    }
    CHECK_THROWS_AS(open_manifest(p), MalformedHeaderError);
}

TEST_CASE("reader validates header contents") {
    TempDir tmp("store_validate");

    SUBCASE("unsupported dtype") {
        const auto p = tmp.path() / "m.safetensors";
        write_raw_safetensors(p, R"({"x":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})",
                              std::vector<unsigned char>(8, 0));
        CHECK_THROWS_AS(open_manifest(p), UnsupportedDtypeError);
    }
    SUBCASE("byte range outside the data section") {
        const auto p = tmp.path() / "m.safetensors";
        write_raw_safetensors(p, R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                              std::vector<unsigned char>(2, 0));
        CHECK_THROWS_AS(open_manifest(p), MalformedHeaderError);
    }
    SUBCASE("shape does not match the byte range") {
        const auto p = tmp.path() / "m.safetensors";
        write_raw_safetensors(p, R"({"x":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})",
                              std::vector<unsigned char>(8, 0));
        CHECK_THROWS_AS(open_manifest(p), MalformedHeaderError);
    }
    SUBCASE("overlapping ranges") {
        const auto p = tmp.path() / "m.safetensors";
        write_raw_safetensors(p,
                              R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                              R"("y":{"dtype":"F32","shape":[1],"data_offsets":[2,6]}})",
                              std::vector<unsigned char>(8, 0));
        CHECK_THROWS_AS(open_manifest(p), MalformedHeaderError);
    }
    SUBCASE("header is not json") {
        const auto p = tmp.path() / "m.safetensors";
        write_raw_safetensors(p, "not json at all", {});
        CHECK_THROWS_AS(open_manifest(p), MalformedHeaderError);
    }
}

TEST_CASE("duplicate tensor across shards is rejected") {
    TempDir tmp("store_dup");
    write_raw_safetensors(tmp.path() / "s1.safetensors",
                          R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                          std::vector<unsigned char>(4, 0));
    // the second shard holds "w" again, plus "x" so the index can reach it
    write_raw_safetensors(tmp.path() / "s2.safetensors",
                          R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                          R"("x":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                          std::vector<unsigned char>(8, 0));
    write_text(tmp.path() / "model.safetensors.index.json",
               R"({"metadata":{"total_size":12},)"
               R"("weight_map":{"w":"s1.safetensors","x":"s2.safetensors"}})");
    CHECK_THROWS_AS(open_manifest(tmp.path()), DuplicateTensorError);
}

TEST_CASE("index entries must match their shard contents") {
    TempDir tmp("store_badindex");
    write_raw_safetensors(tmp.path() / "s1.safetensors",
                          R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                          std::vector<unsigned char>(4, 0));
    write_text(tmp.path() / "model.safetensors.index.json",
               R"({"metadata":{"total_size":4},"weight_map":{"ghost":"s1.safetensors"}})");
    CHECK_THROWS_AS(open_manifest(tmp.path()), MalformedHeaderError);
}

TEST_CASE("read_tensor widens exactly") {
    TempDir tmp("store_read");

    TensorMap m;
    m.emplace("bf", make_tensor({1}, {1.5f}, Dtype::bf16));
    m.emplace("f", make_tensor({2}, {2.0f, -4.0f}, Dtype::f32));
    m.emplace("h", make_tensor({1}, {0.25f}, Dtype::f16));
    const auto out = tmp.path() / "model.safetensors";
    write_model(m, out);

    const ModelManifest manifest = open_manifest(out);
    CHECK(read_tensor(manifest, "bf").values == std::vector<float>{1.5f});
    CHECK(read_tensor(manifest, "f").values == std::vector<float>{2.0f, -4.0f});
    CHECK(read_tensor(manifest, "h").values == std::vector<float>{0.25f});
    CHECK_THROWS_AS(read_tensor(manifest, "missing"), UnknownTensorError);
}

TEST_CASE("fp32 write/read round trip is bit exact") {
    TempDir tmp("store_roundtrip");
    std::mt19937 rng(7);

    TensorMap m = random_model(rng, 6, 64, /*mixed_dtypes=*/false);
    // include the awkward bit patterns
    m.emplace("edge", make_tensor({4}, {-0.0f, 1e-42f, 3.4e38f, -1.1754944e-38f}, Dtype::f32));

    const auto out = tmp.path() / "model.safetensors";
    write_model(m, out);
    const TensorMap back = load_model(out);

    REQUIRE(back.size() == m.size());
    for (const auto & [name, t] : m) {
        CAPTURE(name);
        CHECK(same_bits(t.values, back.at(name).values));
        CHECK(back.at(name).source_dtype == t.source_dtype);
        CHECK(back.at(name).shape == t.shape);
    }
}

TEST_CASE("write-back narrows with round-to-nearest-even") {
    TempDir tmp("store_narrow");

    // frozen: f32 1.0000001 narrows to bf16 1.0
    TensorMap m;
    m.emplace("w", make_tensor({1}, {1.0000001f}, Dtype::bf16));
    const auto out = tmp.path() / "model.safetensors";
    write_model(m, out);
    const TensorMap back = load_model(out);
    CHECK(back.at("w").values == std::vector<float>{1.0f});
}

TEST_CASE("non-finite buffers are rejected unless overridden") {
    TempDir tmp("store_nan");

    TensorMap m;
    m.emplace("w", make_tensor({2}, {1.0f, std::nanf("")}, Dtype::f32));
    const auto out = tmp.path() / "model.safetensors";
    CHECK_THROWS_AS(write_model(m, out), NonFiniteError);
    CHECK_FALSE(std::filesystem::exists(out));

    WriteOptions opts;
    opts.allow_nonfinite = true;
    write_model(m, out, opts);
    const TensorMap back = load_model(out);
    CHECK(std::isnan(back.at("w").values[1]));
}

TEST_CASE("canonical writes are byte identical") {
    TempDir tmp("store_canonical");
    std::mt19937 rng(11);
    const TensorMap m = random_model(rng, 8, 32);

    WriteOptions opts;
    opts.metadata = {{"format", "pt"}, {"producer", "test"}};
    write_model(m, tmp.path() / "a.safetensors", opts);
    write_model(m, tmp.path() / "b.safetensors", opts);
    CHECK(file_bytes(tmp.path() / "a.safetensors") == file_bytes(tmp.path() / "b.safetensors"));
}

TEST_CASE("metadata is carried through unchanged") {
    TempDir tmp("store_meta");

    TensorMap m;
    m.emplace("w", make_tensor({1}, {1.0f}, Dtype::f32));
    WriteOptions opts;
    opts.metadata = {{"format", "pt"}, {"note", "hello"}};
    write_model(m, tmp.path() / "a.safetensors", opts);

    const ModelManifest manifest = open_manifest(tmp.path() / "a.safetensors");
    CHECK(manifest.metadata == opts.metadata);

    // rewrite with the carried metadata reproduces the same bytes
    WriteOptions opts2;
    opts2.metadata = manifest.metadata;
    write_model(load_model(manifest), tmp.path() / "b.safetensors", opts2);
    CHECK(file_bytes(tmp.path() / "a.safetensors") == file_bytes(tmp.path() / "b.safetensors"));
}

TEST_CASE("mixed dtype round trip via snap-to-representable") {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        TempDir tmp("store_prop");
        const TensorMap m = random_model(rng, 5, 100);
        write_model(m, tmp.path() / "m.safetensors");
        const TensorMap back = load_model(tmp.path() / "m.safetensors");
        for (const auto & [name, t] : m) {
            CAPTURE(trial);
            CAPTURE(name);
            CHECK(same_bits(t.values, back.at(name).values));
        }
    }
}

TEST_CASE("sharding never splits below one tensor and keeps data intact") {
    TempDir tmp("store_shard_edge");
    TensorMap m;
    m.emplace("big", make_tensor({16}, std::vector<float>(16, 1.25f), Dtype::f32)); // 64 bytes
    m.emplace("small", make_tensor({1}, {2.0f}, Dtype::f32));
    WriteOptions opts;
    opts.shard_limit = 8; // smaller than either tensor
    write_model(m, tmp.path(), opts);

    const ModelManifest manifest = open_manifest(tmp.path());
    CHECK(manifest.shards.size() == 2);
    CHECK(read_tensor(manifest, "big").values == std::vector<float>(16, 1.25f));
    CHECK(read_tensor(manifest, "small").values == std::vector<float>{2.0f});

    // single-file output path cannot hold shards
    CHECK_THROWS_AS(write_model(m, tmp.path() / "single.safetensors", opts), ValidationError);
}

TEST_CASE("buffer length must match the shape") {
    TempDir tmp("store_len");
    TensorMap m;
    Tensor bad;
    bad.source_dtype = Dtype::f32;
    bad.shape = {3};
    bad.values = {1.0f, 2.0f};
    m.emplace("w", std::move(bad));
    CHECK_THROWS_AS(write_model(m, tmp.path() / "m.safetensors"), ValidationError);
}

TEST_CASE("missing path raises an io error") {
    CHECK_THROWS_AS(open_manifest("/nonexistent/path/model.safetensors"), IoError);
}
