// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0
//
// safetensors container:
// - 8-byte unsigned little-endian header length N
// - N bytes of UTF-8 JSON mapping tensor name -> {dtype, shape, data_offsets},
//   plus an optional "__metadata__" string map
// - raw little-endian tensor data; data_offsets are relative to the start of
//   this data section
//
// Sharded checkpoints use a model.safetensors.index.json with a "weight_map"
// from tensor name to shard file name.

#include "tensor_store.hpp"

#include "dtype.hpp"
#include "error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written verbatim and assume a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ckm {

namespace {

constexpr const char * index_file_name = "model.safetensors.index.json";
constexpr const char * single_file_name = "model.safetensors";

std::string path_str(const fs::path & p) {
    return p.string();
}

uint64_t read_u64_le(const unsigned char * b) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

void write_u64_le(unsigned char * b, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
}

struct ParsedShard {
    ShardInfo info;
    std::vector<TensorMeta> tensors;
    std::map<std::string, std::string> metadata;
};

ParsedShard parse_shard(const fs::path & file, const std::string & shard_name) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint file '" + path_str(file) + "'");
    }
    std::error_code ec;
    const uint64_t file_size = fs::file_size(file, ec);
    if (ec) {
        throw IoError("cannot stat checkpoint file '" + path_str(file) + "'");
    }
    if (file_size < 8) {
        throw MalformedHeaderError("'" + path_str(file) + "': file too small for a header length prefix");
    }

    unsigned char prefix[8];
    in.read(reinterpret_cast<char *>(prefix), 8);
    if (!in) {
        throw IoError("'" + path_str(file) + "': failed to read header length");
    }
    const uint64_t header_len = read_u64_le(prefix);
    if (header_len > file_size - 8) {
        throw MalformedHeaderError("'" + path_str(file) + "': header length " +
                                   std::to_string(header_len) + " exceeds file size " +
                                   std::to_string(file_size));
    }

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw IoError("'" + path_str(file) + "': failed to read header");
    }

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception & e) {
        throw MalformedHeaderError("'" + path_str(file) + "': header is not valid JSON: " + e.what());
    }
    if (!header.is_object()) {
        throw MalformedHeaderError("'" + path_str(file) + "': header must be a JSON object");
    }

    ParsedShard out;
    out.info.file = shard_name;
    out.info.data_start = 8 + header_len;
    out.info.data_size = file_size - out.info.data_start;

    for (const auto & [key, value] : header.items()) {
        if (key == "__metadata__") {
            if (!value.is_object()) {
                throw MalformedHeaderError("'" + path_str(file) + "': __metadata__ must be an object");
            }
            for (const auto & [mk, mv] : value.items()) {
                if (!mv.is_string()) {
                    throw MalformedHeaderError("'" + path_str(file) + "': __metadata__ values must be strings");
                }
                out.metadata[mk] = mv.get<std::string>();
            }
            continue;
        }
        if (!value.is_object() || !value.contains("dtype") || !value.contains("shape") ||
            !value.contains("data_offsets")) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key +
                                       "' entry is missing dtype/shape/data_offsets");
        }

        TensorMeta meta;
        meta.name = key;
        meta.shard = shard_name;

        const std::string dtype_str = value["dtype"].is_string() ? value["dtype"].get<std::string>() : "";
        if (!dtype_from_name(dtype_str, meta.dtype)) {
            throw UnsupportedDtypeError("'" + path_str(file) + "': tensor '" + key +
                                        "' has unsupported dtype '" + dtype_str + "'");
        }

        if (!value["shape"].is_array()) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key + "' shape must be an array");
        }
        for (const auto & d : value["shape"]) {
            if (!d.is_number_integer() || d.get<int64_t>() < 0) {
                throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key +
                                           "' has a negative or non-integer extent");
            }
            meta.shape.push_back(d.get<int64_t>());
        }

        const auto & offs = value["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() ||
            !offs[1].is_number_unsigned()) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key +
                                       "' data_offsets must be two unsigned integers");
        }
        meta.begin = offs[0].get<uint64_t>();
        meta.end = offs[1].get<uint64_t>();
        if (meta.begin > meta.end || meta.end > out.info.data_size) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key +
                                       "' byte range is outside the data section");
        }
        const uint64_t expected = static_cast<uint64_t>(meta.numel()) * dtype_size(meta.dtype);
        if (meta.end - meta.begin != expected) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensor '" + key + "' occupies " +
                                       std::to_string(meta.end - meta.begin) + " bytes but shape requires " +
                                       std::to_string(expected));
        }
        out.tensors.push_back(std::move(meta));
    }

    // byte ranges within one shard must not overlap
    std::vector<const TensorMeta *> by_offset;
    by_offset.reserve(out.tensors.size());
    for (const auto & t : out.tensors) {
        by_offset.push_back(&t);
    }
    std::sort(by_offset.begin(), by_offset.end(),
              [](const TensorMeta * a, const TensorMeta * b) { return a->begin < b->begin; });
    for (size_t i = 1; i < by_offset.size(); ++i) {
        if (by_offset[i]->begin < by_offset[i - 1]->end) {
            throw MalformedHeaderError("'" + path_str(file) + "': tensors '" + by_offset[i - 1]->name +
                                       "' and '" + by_offset[i]->name + "' have overlapping byte ranges");
        }
    }
    return out;
}

ModelManifest manifest_from_shards(const fs::path & base_dir, std::vector<ParsedShard> shards) {
    ModelManifest m;
    m.base_dir = base_dir;
    std::set<std::string> seen;
    for (auto & s : shards) {
        m.shards.push_back(s.info);
        for (auto & t : s.tensors) {
            if (!seen.insert(t.name).second) {
                throw DuplicateTensorError("tensor '" + t.name + "' appears in more than one shard");
            }
            m.tensors.push_back(std::move(t));
        }
        if (m.metadata.empty()) {
            m.metadata = std::move(s.metadata);
        }
    }
    std::sort(m.tensors.begin(), m.tensors.end(),
              [](const TensorMeta & a, const TensorMeta & b) { return a.name < b.name; });
    return m;
}

ModelManifest open_index(const fs::path & index_path) {
    std::ifstream in(index_path);
    if (!in) {
        throw IoError("cannot open index file '" + path_str(index_path) + "'");
    }
    json index;
    try {
        index = json::parse(in);
    } catch (const json::exception & e) {
        throw MalformedHeaderError("'" + path_str(index_path) + "': index is not valid JSON: " + e.what());
    }
    if (!index.is_object() || !index.contains("weight_map") || !index["weight_map"].is_object()) {
        throw MalformedHeaderError("'" + path_str(index_path) + "': index has no weight_map object");
    }

    const fs::path base_dir = index_path.parent_path();
    std::vector<std::string> shard_files;
    std::map<std::string, std::string> name_to_shard;
    for (const auto & [name, shard] : index["weight_map"].items()) {
        if (!shard.is_string()) {
            throw MalformedHeaderError("'" + path_str(index_path) + "': weight_map values must be file names");
        }
        const std::string shard_file = shard.get<std::string>();
        name_to_shard[name] = shard_file;
        if (std::find(shard_files.begin(), shard_files.end(), shard_file) == shard_files.end()) {
            shard_files.push_back(shard_file);
        }
    }
    std::sort(shard_files.begin(), shard_files.end());

    std::vector<ParsedShard> shards;
    shards.reserve(shard_files.size());
    for (const auto & f : shard_files) {
        shards.push_back(parse_shard(base_dir / f, f));
    }

    ModelManifest m = manifest_from_shards(base_dir, std::move(shards));
    for (const auto & [name, shard_file] : name_to_shard) {
        const TensorMeta * meta = m.find(name);
        if (meta == nullptr || meta->shard != shard_file) {
            throw MalformedHeaderError("'" + path_str(index_path) + "': weight_map entry for '" + name +
                                       "' does not match shard '" + shard_file + "'");
        }
    }
    return m;
}

bool has_nonfinite(const std::vector<float> & values, size_t & index) {
    for (size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            index = i;
            return true;
        }
    }
    return false;
}

void narrow_values(const Tensor & t, std::vector<unsigned char> & out) {
    const size_t n = t.values.size();
    switch (t.source_dtype) {
        case Dtype::f32:
            out.resize(n * 4);
            std::memcpy(out.data(), t.values.data(), out.size());
            break;
        case Dtype::f16:
            out.resize(n * 2);
            for (size_t i = 0; i < n; ++i) {
                const uint16_t h = f32_to_f16(t.values[i]);
                std::memcpy(out.data() + 2 * i, &h, 2);
            }
            break;
        case Dtype::bf16:
            out.resize(n * 2);
            for (size_t i = 0; i < n; ++i) {
                const uint16_t h = f32_to_bf16(t.values[i]);
                std::memcpy(out.data() + 2 * i, &h, 2);
            }
            break;
    }
}

struct ShardPlan {
    std::string file;
    std::vector<size_t> tensor_idx; // indices into the name-ordered tensor list
    uint64_t data_size = 0;
};

std::string shard_file_name(size_t i, size_t total) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "model-%05zu-of-%05zu.safetensors", i + 1, total);
    return buf;
}

void write_file_atomic(const fs::path & final_path, const std::string & header,
                       const std::vector<std::vector<unsigned char>> & payloads,
                       const std::vector<size_t> & order) {
    const fs::path tmp = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + path_str(tmp) + "' for writing");
        }
        unsigned char prefix[8];
        write_u64_le(prefix, header.size());
        out.write(reinterpret_cast<const char *>(prefix), 8);
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (size_t idx : order) {
            const auto & bytes = payloads[idx];
            out.write(reinterpret_cast<const char *>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        if (!out) {
            throw IoError("failed writing '" + path_str(tmp) + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, final_path, ec);
    if (ec) {
        throw IoError("cannot rename '" + path_str(tmp) + "' to '" + path_str(final_path) + "': " +
                      ec.message());
    }
}

} // namespace

const TensorMeta * ModelManifest::find(std::string_view name) const {
    auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                               [](const TensorMeta & t, std::string_view n) { return t.name < n; });
    if (it == tensors.end() || it->name != name) {
        return nullptr;
    }
    return &*it;
}

const TensorMeta & ModelManifest::at(std::string_view name) const {
    const TensorMeta * meta = find(name);
    if (meta == nullptr) {
        throw UnknownTensorError("unknown tensor '" + std::string(name) + "'");
    }
    return *meta;
}

ModelManifest open_manifest(const fs::path & path) {
    std::error_code ec;
    if (fs::is_directory(path, ec)) {
        const fs::path index = path / index_file_name;
        if (fs::exists(index, ec)) {
            return open_index(index);
        }
        const fs::path single = path / single_file_name;
        if (fs::exists(single, ec)) {
            return manifest_from_shards(path, {parse_shard(single, single_file_name)});
        }
        // fall back to a lone *.safetensors file
        std::vector<fs::path> candidates;
        for (const auto & entry : fs::directory_iterator(path)) {
            if (entry.path().extension() == ".safetensors") {
                candidates.push_back(entry.path());
            }
        }
        if (candidates.size() == 1) {
            return manifest_from_shards(path, {parse_shard(candidates[0], candidates[0].filename().string())});
        }
        throw IoError("no checkpoint found in directory '" + path_str(path) + "'");
    }
    if (!fs::exists(path, ec)) {
        throw IoError("checkpoint path '" + path_str(path) + "' does not exist");
    }
    if (path.filename() == index_file_name || path.string().ends_with(".index.json")) {
        return open_index(path);
    }
    return manifest_from_shards(path.parent_path(), {parse_shard(path, path.filename().string())});
}

Tensor read_tensor(const ModelManifest & manifest, std::string_view name) {
    const TensorMeta & meta = manifest.at(name);
    const ShardInfo * shard = nullptr;
    for (const auto & s : manifest.shards) {
        if (s.file == meta.shard) {
            shard = &s;
            break;
        }
    }
    if (shard == nullptr) {
        throw IoError("tensor '" + meta.name + "' references unknown shard '" + meta.shard + "'");
    }
    if (meta.end > shard->data_size) {
        throw IoError("tensor '" + meta.name + "' byte range is out of bounds");
    }

    const fs::path file = manifest.base_dir / shard->file;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IoError("cannot open shard '" + path_str(file) + "'");
    }
    const uint64_t nbytes = meta.end - meta.begin;
    std::vector<unsigned char> raw(nbytes);
    in.seekg(static_cast<std::streamoff>(shard->data_start + meta.begin));
    in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(nbytes));
    if (!in) {
        throw IoError("failed reading tensor '" + meta.name + "' from '" + path_str(file) + "'");
    }

    Tensor t;
    t.source_dtype = meta.dtype;
    t.shape = meta.shape;
    const size_t n = static_cast<size_t>(meta.numel());
    t.values.resize(n);
    switch (meta.dtype) {
        case Dtype::f32:
            std::memcpy(t.values.data(), raw.data(), nbytes);
            break;
        case Dtype::f16:
            for (size_t i = 0; i < n; ++i) {
                uint16_t h;
                std::memcpy(&h, raw.data() + 2 * i, 2);
                t.values[i] = f16_to_f32(h);
            }
            break;
        case Dtype::bf16:
            for (size_t i = 0; i < n; ++i) {
                uint16_t h;
                std::memcpy(&h, raw.data() + 2 * i, 2);
                t.values[i] = bf16_to_f32(h);
            }
            break;
    }
    return t;
}

TensorMap load_model(const ModelManifest & manifest, int n_threads) {
    std::vector<Tensor> slots(manifest.tensors.size());
    parallel_for(manifest.tensors.size(), n_threads,
                 [&](size_t i) { slots[i] = read_tensor(manifest, manifest.tensors[i].name); });
    TensorMap out;
    for (size_t i = 0; i < slots.size(); ++i) {
        out.emplace_hint(out.end(), manifest.tensors[i].name, std::move(slots[i]));
    }
    return out;
}

TensorMap load_model(const fs::path & path, int n_threads) {
    return load_model(open_manifest(path), n_threads);
}

ModelManifest write_model(const TensorMap & tensors, const fs::path & out_path,
                          const WriteOptions & opts) {
    if (!opts.allow_nonfinite) {
        for (const auto & [name, t] : tensors) {
            size_t idx = 0;
            if (has_nonfinite(t.values, idx)) {
                throw NonFiniteError("tensor '" + name + "' has a non-finite value at flat index " +
                                     std::to_string(idx));
            }
        }
    }
    for (const auto & [name, t] : tensors) {
        if (static_cast<size_t>(t.numel()) != t.values.size()) {
            throw ValidationError("tensor '" + name + "': buffer length does not match shape");
        }
    }

    // narrow everything back to the source dtype up front, in parallel
    std::vector<const Tensor *> ordered;
    std::vector<std::string> names;
    ordered.reserve(tensors.size());
    for (const auto & [name, t] : tensors) {
        names.push_back(name);
        ordered.push_back(&t);
    }
    std::vector<std::vector<unsigned char>> payloads(ordered.size());
    parallel_for(ordered.size(), opts.n_threads,
                 [&](size_t i) { narrow_values(*ordered[i], payloads[i]); });

    uint64_t total_bytes = 0;
    for (const auto & p : payloads) {
        total_bytes += p.size();
    }

    // greedy shard assignment in name order
    std::vector<ShardPlan> plans;
    if (total_bytes <= opts.shard_limit) {
        ShardPlan plan;
        plan.data_size = total_bytes;
        for (size_t i = 0; i < ordered.size(); ++i) {
            plan.tensor_idx.push_back(i);
        }
        plans.push_back(std::move(plan));
    } else {
        ShardPlan current;
        for (size_t i = 0; i < ordered.size(); ++i) {
            const uint64_t sz = payloads[i].size();
            if (!current.tensor_idx.empty() && current.data_size + sz > opts.shard_limit) {
                plans.push_back(std::move(current));
                current = ShardPlan{};
            }
            current.tensor_idx.push_back(i);
            current.data_size += sz;
        }
        if (!current.tensor_idx.empty()) {
            plans.push_back(std::move(current));
        }
    }

    const bool sharded = plans.size() > 1;
    std::error_code ec;
    fs::path dir;
    if (out_path.extension() == ".safetensors") {
        if (sharded) {
            throw ValidationError("output '" + path_str(out_path) +
                                  "' names a single file but the shard limit requires " +
                                  std::to_string(plans.size()) + " shards; use a directory");
        }
        dir = out_path.parent_path();
        if (!dir.empty()) {
            fs::create_directories(dir, ec);
        }
        plans[0].file = out_path.filename().string();
    } else {
        dir = out_path;
        fs::create_directories(dir, ec);
        if (ec) {
            throw IoError("cannot create output directory '" + path_str(dir) + "': " + ec.message());
        }
        if (sharded) {
            for (size_t s = 0; s < plans.size(); ++s) {
                plans[s].file = shard_file_name(s, plans.size());
            }
        } else {
            plans[0].file = single_file_name;
        }
    }
    if (dir.empty()) {
        dir = ".";
    }

    ModelManifest result;
    result.base_dir = dir;
    result.metadata = opts.metadata;

    json weight_map = json::object();
    for (auto & plan : plans) {
        json header = json::object();
        if (!opts.metadata.empty()) {
            json meta = json::object();
            for (const auto & [k, v] : opts.metadata) {
                meta[k] = v;
            }
            header["__metadata__"] = std::move(meta);
        }
        uint64_t offset = 0;
        for (size_t idx : plan.tensor_idx) {
            const Tensor & t = *ordered[idx];
            const uint64_t sz = payloads[idx].size();
            json entry = json::object();
            entry["dtype"] = dtype_name(t.source_dtype);
            entry["shape"] = t.shape;
            entry["data_offsets"] = {offset, offset + sz};
            header[names[idx]] = std::move(entry);

            TensorMeta meta;
            meta.name = names[idx];
            meta.dtype = t.source_dtype;
            meta.shape = t.shape;
            meta.begin = offset;
            meta.end = offset + sz;
            meta.shard = plan.file;
            result.tensors.push_back(std::move(meta));
            weight_map[names[idx]] = plan.file;
            offset += sz;
        }
        // json keys are kept in a sorted map, so dump() is canonical
        const std::string header_text = header.dump();
        write_file_atomic(dir / plan.file, header_text, payloads, plan.tensor_idx);
        ShardInfo info;
        info.file = plan.file;
        info.data_size = plan.data_size;
        info.data_start = 8 + header_text.size();
        result.shards.push_back(info);
    }

    if (sharded) {
        json index = json::object();
        index["metadata"] = json::object({{"total_size", total_bytes}});
        index["weight_map"] = std::move(weight_map);
        const fs::path index_path = dir / index_file_name;
        const fs::path tmp = index_path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) {
                throw IoError("cannot open '" + path_str(tmp) + "' for writing");
            }
            out << index.dump();
            if (!out) {
                throw IoError("failed writing '" + path_str(tmp) + "'");
            }
        }
        fs::rename(tmp, index_path, ec);
        if (ec) {
            throw IoError("cannot rename '" + path_str(tmp) + "': " + ec.message());
        }
    }

    std::sort(result.tensors.begin(), result.tensors.end(),
              [](const TensorMeta & a, const TensorMeta & b) { return a.name < b.name; });
    return result;
}

} // namespace ckm
