// Binary tensor and checkpoint formats.
//
//   SPKT tensor: magic "SPKT", version u8 (=1), rank u8, extents u32 LE,
//                raw float32 LE payload.
//   SPKC checkpoint: magic "SPKC", version u16 LE (=1), metadata block
//                (u32 byte length + UTF-8 key=value lines), tensor count
//                u32, then per tensor a u32 name length, the name, and the
//                tensor in SPKT format.
//
// The interchange payload is always float32 regardless of the in-memory
// scalar type.  Loaders fail loudly: bad magic, unsupported version, and
// truncation each get their own diagnostic.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spikeformer/tensor.hpp"

namespace spikeformer {

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts need byte swapping");

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error(std::string("truncated file while reading ") + what +
                             " at byte offset " + std::to_string(is.tellg() == -1 ? -1 : long(is.tellg())));
  return v;
}

}  // namespace detail

inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  os.write("SPKT", 4);
  detail::write_pod<std::uint8_t>(os, kTensorFormatVersion);
  if (t.rank() > 255) throw std::invalid_argument("write_tensor: rank exceeds format limit");
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (Index e : t.shape()) {
    if (e > 0xffffffffLL) throw std::invalid_argument("write_tensor: extent exceeds u32");
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  }
  const S* v = t.data();
  const Index n = t.numel();
  for (Index i = 0; i < n; ++i) detail::write_pod<float>(os, static_cast<float>(v[i]));
}

template <typename S>
Tensor<S> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw std::runtime_error("truncated file: missing tensor magic");
  if (std::memcmp(magic, "SPKT", 4) != 0)
    throw std::runtime_error("bad tensor magic (expected \"SPKT\", got \"" +
                             std::string(magic, 4) + "\")");
  const auto version = detail::read_pod<std::uint8_t>(is, "tensor version");
  if (version != kTensorFormatVersion)
    throw std::runtime_error("unsupported tensor format version " + std::to_string(version) +
                             " (this build reads version " +
                             std::to_string(kTensorFormatVersion) + ")");
  const auto rank = detail::read_pod<std::uint8_t>(is, "tensor rank");
  if (rank == 0) throw std::runtime_error("tensor with rank 0 is not valid");
  Shape shape(rank);
  for (auto& e : shape) e = detail::read_pod<std::uint32_t>(is, "tensor extent");
  const Index n = shape_numel(shape);
  AlignedVec<S> data(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    data[static_cast<std::size_t>(i)] = static_cast<S>(detail::read_pod<float>(is, "tensor payload"));
  return Tensor<S>::from(std::move(shape), std::move(data));
}

template <typename S>
void save_tensor(const Tensor<S>& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_tensor(os, t);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

template <typename S>
Tensor<S> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  return read_tensor<S>(is);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
  bool trainable = true;
};

template <typename S>
struct Checkpoint {
  std::map<std::string, std::string> metadata;       // variant, T, classes, seed, epoch, ...
  std::vector<std::pair<std::string, Tensor<S>>> tensors;  // in file order

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  std::string meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end())
      throw std::runtime_error("checkpoint metadata is missing key '" + key + "'");
    return it->second;
  }
};

template <typename S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write("SPKC", 4);
  detail::write_pod<std::uint16_t>(os, kCheckpointFormatVersion);
  std::ostringstream meta;
  for (const auto& [k, v] : ckpt.metadata) meta << k << '=' << v << '\n';
  const std::string meta_text = meta.str();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(meta_text.size()));
  os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  char magic[4];
  if (!is.read(magic, 4))
    throw std::runtime_error("truncated checkpoint '" + path + "': missing magic");
  if (std::memcmp(magic, "SPKC", 4) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint (expected magic \"SPKC\", got \"" +
                             std::string(magic, 4) + "\")");
  const auto version = detail::read_pod<std::uint16_t>(is, "checkpoint version");
  if (version != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in '" + path + "' (this build reads version " +
                             std::to_string(kCheckpointFormatVersion) + ")");
  Checkpoint<S> ckpt;
  const auto meta_len = detail::read_pod<std::uint32_t>(is, "metadata length");
  std::string meta_text(meta_len, '\0');
  if (meta_len && !is.read(meta_text.data(), meta_len))
    throw std::runtime_error("truncated checkpoint '" + path + "': metadata block cut short");
  std::istringstream meta_lines(meta_text);
  std::string line;
  while (std::getline(meta_lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed checkpoint metadata line '" + line + "' in '" + path +
                               "' (expected key=value)");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len))
      throw std::runtime_error("truncated checkpoint '" + path + "': tensor name cut short");
    ckpt.tensors.emplace_back(std::move(name), read_tensor<S>(is));
  }
  return ckpt;
}

}  // namespace spikeformer
