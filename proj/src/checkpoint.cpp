// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "danet/model.hpp"

namespace danet {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw ContractError("checkpoint " + path + ": truncated file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

std::string get_string(std::istream& is, std::uint32_t len, const std::string& path) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw ContractError("checkpoint " + path + ": truncated file");
  return s;
}

}  // namespace

template <typename T>
void write_checkpoint(const std::string& path, const std::string& metadata,
                      const std::vector<NamedTensor<T>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, sizeof(T) == 4 ? 1 : 2);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (T v : t.data()) put<T>(os, v);
  }
  if (!os) throw ContractError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ContractError(path + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw ContractError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = get_string(is, get<std::uint32_t>(is, path), path);
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = get_string(is, get<std::uint32_t>(is, path), path);
    t.dtype = get<std::uint8_t>(is, path);
    if (t.dtype != 1 && t.dtype != 2) {
      throw ContractError("checkpoint " + path + ": tensor " + t.name + " has unknown dtype");
    }
    const auto rank = get<std::uint32_t>(is, path);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(is, path)));
    const auto n = numel_of(t.shape);
    t.values.resize(static_cast<size_t>(n));
    for (auto& v : t.values) v = t.dtype == 1 ? get<float>(is, path) : get<double>(is, path);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T>
void load_state(Model<T>& model, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  for (auto& [name, tensor] : model.state()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("checkpoint lacks tensor " + name);
    if (it->second->shape != tensor.shape()) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_str(it->second->shape) +
                           ", model expects " + shape_str(tensor.shape()));
    }
    auto dst = tensor.data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
}

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  write_checkpoint<T>(path, to_json(model.config()), model.state());
}

template <typename T>
Model<T> load_model(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Model<T> model(model_config_from_json(ckpt.metadata), 0);
  load_state(model, ckpt);
  return model;
}

#define DANET_INSTANTIATE(T)                                                                        \
  template void write_checkpoint<T>(const std::string&, const std::string&,                         \
                                    const std::vector<NamedTensor<T>>&);                             \
  template void load_state<T>(Model<T>&, const Checkpoint&);                                        \
  template void save_model<T>(const Model<T>&, const std::string&);                                 \
  template Model<T> load_model<T>(const std::string&);

DANET_INSTANTIATE(float)
DANET_INSTANTIATE(double)

}  // namespace danet
