// Copyright 2026 The RelBert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Versioned binary checkpoint container:
//
//   "RELBERT\0"  magic
//   u32          format version
//   u32 + bytes  metadata (JSON)
//   u32 + bytes  vocabulary (Vocabulary::serialize())
//   u64          vocabulary digest
//   u32          blob count, then per blob:
//                u32 + bytes name, u32 rank, u64 dims[rank], float32 data
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/corpus.hpp"
#include "relbert/error.hpp"
#include "relbert/model.hpp"

namespace relbert {

inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'E', 'L', 'B', 'E', 'R', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::string vocab_text;
  std::uint64_t vocab_digest = 0;
  std::vector<NamedBlob> blobs;

  const NamedBlob* find(const std::string& name) const {
    for (const auto& b : blobs) {
      if (b.name == name) return &b;
    }
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in, const std::string& path) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw Error(ErrorCode::kCheckpointFormat, path + ": truncated checkpoint");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get_le<std::uint32_t>(in, path);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error(ErrorCode::kCheckpointFormat, path + ": truncated string");
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const CheckpointData& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + path);
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_string(out, ck.meta.dump());
  detail::put_string(out, ck.vocab_text);
  detail::put_le<std::uint64_t>(out, ck.vocab_digest);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    detail::put_string(out, b.name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) detail::put_le<std::uint64_t>(out, d);
    for (float f : b.data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for checkpoint " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path);
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw Error(ErrorCode::kCheckpointFormat, path + ": not a checkpoint file");
  }
  const auto version = detail::get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointFormat, path + ": unsupported version " + std::to_string(version));
  }
  CheckpointData ck;
  try {
    ck.meta = nlohmann::json::parse(detail::get_string(in, path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, path + ": bad metadata: " + e.what());
  }
  ck.vocab_text = detail::get_string(in, path);
  ck.vocab_digest = detail::get_le<std::uint64_t>(in, path);
  const auto count = detail::get_le<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob b;
    b.name = detail::get_string(in, path);
    const auto rank = detail::get_le<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(detail::get_le<std::uint64_t>(in, path));
    b.data.resize(shape_numel(b.shape));
    for (auto& f : b.data) f = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, path));
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model}, {"n_heads", c.n_heads},   {"n_layers", c.n_layers},
                     {"ff_dim", c.ff_dim},   {"max_len", c.max_len},   {"shared_space", c.shared_space},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.shared_space = j.value("shared_space", c.shared_space);
  c.seed = j.value("seed", c.seed);
}

inline void append_params(CheckpointData& ck, const ModelParams<float>& params, const std::string& prefix = "") {
  for (const auto& [name, t] : params.named()) {
    ck.blobs.push_back({prefix + name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
}

// Rebuilds parameters for `vocab` and fills them from the blobs.
inline ModelParams<float> restore_params(const CheckpointData& ck, const ModelConfig& config, const Vocabulary& vocab,
                                         const std::string& prefix = "") {
  auto params = init_params<float>(config, vocab);
  for (auto& [name, t] : params.named()) {
    const auto* blob = ck.find(prefix + name);
    if (!blob) throw Error(ErrorCode::kCheckpointFormat, "checkpoint lacks tensor '" + prefix + name + "'");
    if (blob->shape != t.shape()) {
      throw Error(ErrorCode::kCheckpointFormat, "tensor '" + name + "' has shape " + shape_string(blob->shape) +
                                                    ", expected " + shape_string(t.shape()));
    }
    std::copy(blob->data.begin(), blob->data.end(), t.data().begin());
  }
  return params;
}

// Model-only checkpoint (no optimizer state).
inline void save_model(const std::string& path, const ModelParams<float>& params, const Vocabulary& vocab) {
  CheckpointData ck;
  ck.meta["kind"] = "model";
  ck.meta["model"] = params.config;
  ck.vocab_text = vocab.serialize();
  ck.vocab_digest = vocab.digest();
  append_params(ck, params);
  write_checkpoint(path, ck);
}

struct LoadedModel {
  ModelParams<float> params;
  Vocabulary vocab;
  CheckpointData raw;
};

inline Vocabulary checked_vocabulary(const CheckpointData& ck, const std::string& path) {
  auto vocab = Vocabulary::deserialize(ck.vocab_text);
  if (vocab.digest() != ck.vocab_digest) {
    throw Error(ErrorCode::kCheckpointFormat, path + ": vocabulary payload does not match its digest");
  }
  return vocab;
}

inline LoadedModel load_model(const std::string& path) {
  auto ck = read_checkpoint(path);
  if (!ck.meta.contains("model")) throw Error(ErrorCode::kCheckpointFormat, path + ": no model section");
  auto vocab = checked_vocabulary(ck, path);
  const auto config = ck.meta["model"].get<ModelConfig>();
  auto params = restore_params(ck, config, vocab);
  return {std::move(params), std::move(vocab), std::move(ck)};
}

// DigestMismatch unless `expected` matches the checkpoint's vocabulary.
inline void verify_vocabulary(const CheckpointData& ck, const Vocabulary& expected) {
  if (ck.vocab_digest != expected.digest()) {
    throw Error(ErrorCode::kDigestMismatch, "checkpoint vocabulary digest " + hex64(ck.vocab_digest) +
                                                " differs from data vocabulary digest " + hex64(expected.digest()));
  }
}

}  // namespace relbert
