// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ckm {

// Location and layout of one tensor inside a checkpoint.
struct TensorMeta {
    std::string name;
    Dtype dtype = Dtype::f32;
    std::vector<int64_t> shape;
    uint64_t begin = 0; // byte range relative to the shard's data section
    uint64_t end = 0;
    std::string shard; // file name relative to base_dir

    int64_t numel() const { return shape_numel(shape); }
};

struct ShardInfo {
    std::string file;
    uint64_t data_start = 0; // absolute offset of the data section
    uint64_t data_size = 0;
};

// Immutable after open; safe to share across threads. Concurrent read_tensor
// calls each open their own file handle.
struct ModelManifest {
    std::filesystem::path base_dir;
    std::vector<ShardInfo> shards;
    std::vector<TensorMeta> tensors; // sorted by name, unique
    std::map<std::string, std::string> metadata; // __metadata__, carried through unchanged

    const TensorMeta * find(std::string_view name) const;
    const TensorMeta & at(std::string_view name) const; // throws UnknownTensorError
};

inline constexpr uint64_t shard_limit_none = std::numeric_limits<uint64_t>::max();

// `path` is a single .safetensors file, a sharded-index json, or a directory
// containing either. Enumerates every tensor exactly once; loads no data.
ModelManifest open_manifest(const std::filesystem::path & path);

// Reads one tensor and widens it to FP32 (exact for F16/BF16).
Tensor read_tensor(const ModelManifest & manifest, std::string_view name);

// Reads every tensor, in parallel, into a name-ordered map.
TensorMap load_model(const ModelManifest & manifest, int n_threads = 0);
TensorMap load_model(const std::filesystem::path & path, int n_threads = 0);

struct WriteOptions {
    uint64_t shard_limit = shard_limit_none;
    std::map<std::string, std::string> metadata;
    bool allow_nonfinite = false;
    int n_threads = 0;
};

// Writes a checkpoint in canonical form: header keys in lexicographic order,
// minimal whitespace, offsets assigned in name order, values narrowed back to
// their source dtype with round-to-nearest-even. Identical input produces
// byte-identical files. If the data exceeds opts.shard_limit, out_path must
// be a directory and model-0000X-of-0000Y shards plus an index are emitted.
// Every file is written to a temporary path and renamed into place.
ModelManifest write_model(const TensorMap & tensors, const std::filesystem::path & out_path,
                          const WriteOptions & opts = {});

} // namespace ckm
