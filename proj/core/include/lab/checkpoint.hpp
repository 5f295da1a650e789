#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lab/nn.hpp"

namespace lab::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major
  bool operator==(const Tensor&) const = default;
};

/// Entries keep their insertion order on disk.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// "LALB" | u32 version | u32 count | entries | u32 CRC-32 of everything before.
/// Entry: u16 name length, name bytes, u8 rank, rank x u32 dims, f32 payload.
/// All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

Tensor to_tensor(const Mat<float>& m);
Mat<float> to_matrix(const Tensor& t);

/// Each parameter becomes a rank-2 entry named prefix + name.
void append_params(NamedTensors& out, const ParamMap<float>& params, const std::string& prefix);
/// Collects every entry whose name starts with prefix (prefix stripped).
ParamMap<float> extract_params(const NamedTensors& in, const std::string& prefix);

const Tensor* find_tensor(const NamedTensors& in, const std::string& name);

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace lab::io
