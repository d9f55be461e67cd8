// SPDX-License-Identifier: Apache-2.0

#include "varkit/binary_io.hpp"

#include "varkit/error.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace varkit::io {

namespace {

constexpr char kFeatureMagic[4] = {'A', 'F', 'V', '1'};
constexpr char kRecordMagic[4] = {'V', 'K', 'R', 'C'};

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xFF));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw DataError(what_ + ": truncated");
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all_atomic(const std::filesystem::path& path, const unsigned char* data, std::size_t n) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::kF64:
    case ElementType::kI64:
      return 8;
    case ElementType::kF32:
      return 4;
    case ElementType::kBytes:
      return 1;
  }
  return 0;
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const Matrix& features) {
  ByteWriter w;
  w.raw(kFeatureMagic, 4);
  w.le(static_cast<std::uint32_t>(features.rows()));
  w.le(static_cast<std::uint32_t>(features.cols()));
  w.le(std::uint32_t{0});
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) w.f32(static_cast<float>(features(r, c)));
  }
  write_all_atomic(path, w.bytes().data(), w.bytes().size());
}

Matrix read_feature_file(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  ByteReader r(bytes.data(), bytes.size(), "feature file " + path.string());
  if (r.str(4) != std::string(kFeatureMagic, 4)) throw DataError("feature file " + path.string() + ": bad magic");
  const auto frames = r.le<std::uint32_t>();
  const auto dim = r.le<std::uint32_t>();
  (void)r.le<std::uint32_t>();
  const std::size_t expected = static_cast<std::size_t>(frames) * dim * 4;
  if (r.remaining() != expected) {
    throw DataError("feature file " + path.string() + ": payload holds " + std::to_string(r.remaining()) +
                    " bytes, header declares " + std::to_string(frames) + "x" + std::to_string(dim));
  }
  Matrix m(frames, dim);
  for (std::uint32_t i = 0; i < frames; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw DataError("feature file " + path.string() + ": non-finite value at frame " + std::to_string(i));
      }
      m(i, j) = v;
    }
  }
  return m;
}

void RecordFile::put_matrix(const std::string& name, const Matrix& m) {
  ByteWriter w;
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  records_[name] = Record{ElementType::kF64, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                          std::move(w.bytes())};
}

void RecordFile::put_f32(const std::string& name, const Matrix& m) {
  ByteWriter w;
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(static_cast<float>(m.data()[i]));
  records_[name] = Record{ElementType::kF32, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                          std::move(w.bytes())};
}

void RecordFile::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  ByteWriter w;
  for (auto v : values) w.le(v);
  records_[name] = Record{ElementType::kI64, {values.size()}, std::move(w.bytes())};
}

void RecordFile::put_bytes(const std::string& name, const std::string& bytes) {
  records_[name] =
      Record{ElementType::kBytes, {bytes.size()}, std::vector<unsigned char>(bytes.begin(), bytes.end())};
}

const Record& RecordFile::record(const std::string& name) const {
  auto it = records_.find(name);
  if (it == records_.end()) throw DataError("record '" + name + "' not found");
  return it->second;
}

std::vector<std::string> RecordFile::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : records_) out.push_back(k);
  return out;
}

Matrix RecordFile::get_matrix(const std::string& name) const {
  const Record& rec = record(name);
  if (rec.shape.size() != 2 || (rec.type != ElementType::kF64 && rec.type != ElementType::kF32)) {
    throw DataError("record '" + name + "' is not a matrix");
  }
  Matrix m(static_cast<Eigen::Index>(rec.shape[0]), static_cast<Eigen::Index>(rec.shape[1]));
  ByteReader r(rec.payload.data(), rec.payload.size(), "record " + name);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rec.type == ElementType::kF64 ? r.f64() : static_cast<double>(r.f32());
  }
  return m;
}

std::vector<std::int64_t> RecordFile::get_i64(const std::string& name) const {
  const Record& rec = record(name);
  if (rec.type != ElementType::kI64) throw DataError("record '" + name + "' is not i64");
  ByteReader r(rec.payload.data(), rec.payload.size(), "record " + name);
  std::vector<std::int64_t> out(rec.payload.size() / 8);
  for (auto& v : out) v = r.le<std::int64_t>();
  return out;
}

std::string RecordFile::get_bytes(const std::string& name) const {
  const Record& rec = record(name);
  if (rec.type != ElementType::kBytes) throw DataError("record '" + name + "' is not a byte string");
  return {rec.payload.begin(), rec.payload.end()};
}

void RecordFile::save(const std::filesystem::path& path) const {
  ByteWriter payload;
  ByteWriter index;
  for (const auto& [name, rec] : records_) {
    index.le(static_cast<std::uint16_t>(name.size()));
    index.raw(name.data(), name.size());
    index.le(static_cast<std::uint8_t>(rec.type));
    index.le(static_cast<std::uint8_t>(rec.shape.size()));
    for (auto d : rec.shape) index.le(d);
    index.le(static_cast<std::uint64_t>(payload.bytes().size()));
    index.le(static_cast<std::uint64_t>(rec.payload.size()));
    payload.raw(rec.payload.data(), rec.payload.size());
  }
  ByteWriter out;
  out.raw(kRecordMagic, 4);
  out.le(kRecordFormatVersion);
  out.le(static_cast<std::uint32_t>(records_.size()));
  out.le(fnv1a(payload.bytes().data(), payload.bytes().size()));
  out.raw(index.bytes().data(), index.bytes().size());
  out.raw(payload.bytes().data(), payload.bytes().size());
  write_all_atomic(path, out.bytes().data(), out.bytes().size());
}

RecordFile RecordFile::load(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const std::string what = "record file " + path.string();
  ByteReader r(bytes.data(), bytes.size(), what);
  if (r.str(4) != std::string(kRecordMagic, 4)) throw DataError(what + ": bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kRecordFormatVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  const auto checksum = r.le<std::uint64_t>();

  struct Entry {
    std::string name;
    Record rec;
    std::uint64_t offset;
    std::uint64_t nbytes;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.le<std::uint16_t>());
    const auto type = r.le<std::uint8_t>();
    if (type < 1 || type > 4) throw DataError(what + ": bad element type in '" + e.name + "'");
    e.rec.type = static_cast<ElementType>(type);
    const auto ndim = r.le<std::uint8_t>();
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      e.rec.shape.push_back(r.le<std::uint64_t>());
      elements *= e.rec.shape.back();
    }
    e.offset = r.le<std::uint64_t>();
    e.nbytes = r.le<std::uint64_t>();
    if (e.nbytes != elements * element_size(e.rec.type)) throw DataError(what + ": size mismatch in '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  const std::size_t base = r.pos();
  const std::size_t payload_size = bytes.size() - base;
  if (fnv1a(bytes.data() + base, payload_size) != checksum) throw DataError(what + ": checksum mismatch");

  RecordFile file;
  for (auto& e : entries) {
    if (e.offset + e.nbytes > payload_size) throw DataError(what + ": record '" + e.name + "' out of bounds");
    const auto* begin = bytes.data() + base + e.offset;
    e.rec.payload.assign(begin, begin + e.nbytes);
    file.records_[e.name] = std::move(e.rec);
  }
  return file;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
  write_all_atomic(path, reinterpret_cast<const unsigned char*>(contents.data()), contents.size());
}

}  // namespace varkit::io
