// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats.
//
// Feature file (one per video), little-endian:
//   bytes 0..3   magic "AFV1"
//   bytes 4..7   u32 frame_count
//   bytes 8..11  u32 dim
//   bytes 12..15 u32 reserved (written as 0)
//   then frame_count*dim f32 values, row-major.
//
// Record container (checkpoints), little-endian:
//   magic "VKRC", u32 version, u32 record_count, u64 payload checksum (FNV-1a)
//   index: per record {u16 name_len, name, u8 element_type, u8 ndim,
//                      u64 dims[ndim], u64 offset, u64 nbytes}
//   payload area: concatenated record payloads (offsets relative to its start).

#pragma once

#include "varkit/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace varkit::io {

using ag::Matrix;

inline constexpr std::uint32_t kRecordFormatVersion = 1;

/// Writes a (frames, dim) matrix as f32. Values are rounded to float.
void write_feature_file(const std::filesystem::path& path, const Matrix& features);

/// Reads a feature file. Rejects bad magic, truncation and non-finite values.
Matrix read_feature_file(const std::filesystem::path& path);

enum class ElementType : std::uint8_t { kF64 = 1, kF32 = 2, kI64 = 3, kBytes = 4 };

struct Record {
  ElementType type = ElementType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<unsigned char> payload;
};

/// Named binary records with a versioned index.
class RecordFile {
 public:
  void put_matrix(const std::string& name, const Matrix& m);
  void put_f32(const std::string& name, const Matrix& m);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);
  void put_bytes(const std::string& name, const std::string& bytes);

  [[nodiscard]] bool contains(const std::string& name) const { return records_.contains(name); }
  [[nodiscard]] Matrix get_matrix(const std::string& name) const;
  [[nodiscard]] std::vector<std::int64_t> get_i64(const std::string& name) const;
  [[nodiscard]] std::string get_bytes(const std::string& name) const;
  [[nodiscard]] const Record& record(const std::string& name) const;
  [[nodiscard]] std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static RecordFile load(const std::filesystem::path& path);

 private:
  std::map<std::string, Record> records_;
};

/// Writes `contents` to `path` through a temporary sibling and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace varkit::io
