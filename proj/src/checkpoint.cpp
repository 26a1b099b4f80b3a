#include "nepgpt/checkpoint.hpp"

#include <cstring>

#include "nepgpt/binary_io.hpp"

namespace nepgpt::checkpoint {

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::string serialize(const Checkpoint& ckpt) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointFormatVersion);
  const auto& c = ckpt.config;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_layer));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_head));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.d_model));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.vocab_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.seq_len));
  w.put<std::uint8_t>(c.tie_embeddings ? 1 : 0);
  w.put<float>(c.dropout);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (tensor::shape_numel(a.shape) != a.data.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "checkpoint array " + a.name + " has shape " +
                      tensor::shape_string(a.shape) + " but " +
                      std::to_string(a.data.size()) + " values");
    }
    w.put_string(a.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.put<std::uint64_t>(d);
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(a.data.data()),
                                 a.data.size() * sizeof(float)));
  }
  w.put<std::uint64_t>(fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw Error(ErrorCode::kCorruptFile, "not a checkpoint (bad magic)");
  }
  ByteReader r(bytes.substr(4), ErrorCode::kCorruptFile);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "checkpoint format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  if (bytes.size() < 16) {
    throw Error(ErrorCode::kCorruptFile, "checkpoint truncated");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (stored != fnv1a64(body)) {
    throw Error(ErrorCode::kCorruptFile, "checkpoint checksum mismatch");
  }
  ByteReader b(body.substr(8), ErrorCode::kCorruptFile);
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.n_layer = b.get<std::uint32_t>();
  c.n_head = b.get<std::uint32_t>();
  c.d_model = b.get<std::uint32_t>();
  c.vocab_size = b.get<std::uint32_t>();
  c.seq_len = b.get<std::uint32_t>();
  c.tie_embeddings = b.get<std::uint8_t>() != 0;
  c.dropout = b.get<float>();
  const auto n_meta = b.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = b.get_string();
    ckpt.meta[std::move(k)] = b.get_string();
  }
  const auto n_arrays = b.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = b.get_string();
    const auto rank = b.get<std::uint32_t>();
    if (rank > 8) {
      throw Error(ErrorCode::kCorruptFile,
                  "array " + a.name + " has implausible rank " +
                      std::to_string(rank));
    }
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(b.get<std::uint64_t>());
      n *= a.shape.back();
    }
    if (n > b.remaining() / sizeof(float)) {
      throw Error(ErrorCode::kCorruptFile, "array " + a.name + " truncated");
    }
    auto raw = b.get_bytes(n * sizeof(float));
    a.data.resize(n);
    std::memcpy(a.data.data(), raw.data(), raw.size());
    ckpt.arrays.push_back(std::move(a));
  }
  if (b.remaining() != 0) {
    throw Error(ErrorCode::kCorruptFile, "trailing bytes in checkpoint");
  }
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(ckpt));
}

Checkpoint load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

void add_params(Checkpoint& ckpt, const model::GptParams<float>& params) {
  for (const auto& [name, t] : params.named()) {
    auto d = t.data();
    ckpt.arrays.push_back({name, t.shape(), std::vector<float>(d.begin(), d.end())});
  }
}

model::GptParams<float> params_from(const Checkpoint& ckpt) {
  auto params = model::GptParams<float>::zeros(ckpt.config);
  for (auto& [name, t] : params.named()) {
    const NamedArray* a = ckpt.find(name);
    if (!a) {
      throw Error(ErrorCode::kCorruptFile,
                  "checkpoint is missing parameter " + name);
    }
    if (a->shape != t.shape()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "checkpoint parameter " + name + " has shape " +
                      tensor::shape_string(a->shape) + ", config expects " +
                      tensor::shape_string(t.shape()));
    }
    tensor::Tensor<float> h = t;
    std::copy(a->data.begin(), a->data.end(), h.data().begin());
  }
  return params;
}

}  // namespace nepgpt::checkpoint
