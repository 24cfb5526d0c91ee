#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "advforge/tensor.hpp"

namespace advforge {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Tensor tensor;
};

/// Named tensor records plus a trailing metadata text (canonical JSON).
///
/// Layout (little-endian): "ADVF", u32 version, u32 record count, then per
/// record {u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 data},
/// then u32 metadata length and the metadata bytes.
struct TensorArchive {
  std::vector<TensorRecord> records;
  std::string metadata;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace advforge
