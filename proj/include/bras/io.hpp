#pragma once

#include <Eigen/Core>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/tensor.hpp"

namespace bras {

namespace detail {

/// Binary reader with byte-offset tracking so format errors can name the
/// exact position. All multi-byte fields are little-endian regardless of the
/// host.
class FileReader {
 public:
  FileReader(const std::filesystem::path& path, std::string what)
      : what_(std::move(what)), in_(path, std::ios::binary) {
    if (!in_) throw resource_error(what_ + ": cannot open " + path.string());
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::int64_t>(in_.tellg());
    in_.seekg(0, std::ios::beg);
  }

  [[nodiscard]] std::int64_t offset() const { return offset_; }
  [[nodiscard]] std::int64_t remaining() const { return size_ - offset_; }

  void need(std::int64_t n, const std::string& field) {
    if (n > remaining())
      throw format_error(what_ + ": truncated at offset " + std::to_string(offset_) +
                         " reading " + field + ": need " + std::to_string(n) + " bytes, " +
                         std::to_string(remaining()) + " left");
  }

  void read_raw(void* dst, std::int64_t n, const std::string& field) {
    need(n, field);
    in_.read(static_cast<char*>(dst), n);
    if (!in_) throw resource_error(what_ + ": read failed at offset " + std::to_string(offset_));
    offset_ += n;
  }

  std::uint32_t read_u32(const std::string& field) {
    unsigned char b[4];
    read_raw(b, 4, field);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }

  std::uint64_t read_u64(const std::string& field) {
    unsigned char b[8];
    read_raw(b, 8, field);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
    return v;
  }

  double read_f64(const std::string& field) {
    return std::bit_cast<double>(read_u64(field));
  }

  /// Bulk payload of IEEE-754 LE doubles straight into `dst`.
  void read_f64_block(double* dst, std::int64_t count, const std::string& field) {
    read_raw(dst, count * 8, field);
    if constexpr (std::endian::native != std::endian::little) {
      for (std::int64_t i = 0; i < count; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, dst + i, 8);
        bits = __builtin_bswap64(bits);
        std::memcpy(dst + i, &bits, 8);
      }
    }
  }

  void expect_magic(const char* magic, std::int64_t len) {
    std::vector<char> got(static_cast<std::size_t>(len));
    need(len, "magic");
    in_.read(got.data(), len);
    offset_ += len;
    if (std::memcmp(got.data(), magic, static_cast<std::size_t>(len)) != 0)
      throw format_error(what_ + ": bad magic at offset 0, expected \"" + magic + "\"");
  }

  void expect_end() {
    if (remaining() != 0)
      throw format_error(what_ + ": " + std::to_string(remaining()) +
                         " trailing bytes at offset " + std::to_string(offset_));
  }

 private:
  std::string what_;
  std::ifstream in_;
  std::int64_t size_ = 0;
  std::int64_t offset_ = 0;
};

class FileWriter {
 public:
  FileWriter(const std::filesystem::path& path, std::string what)
      : what_(std::move(what)), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw resource_error(what_ + ": cannot open " + path.string() + " for writing");
  }

  void write_raw(const void* src, std::int64_t n) {
    out_.write(static_cast<const char*>(src), n);
    if (!out_) throw resource_error(what_ + ": write failed");
  }

  void write_u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_raw(b, 4);
  }

  void write_u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_raw(b, 8);
  }

  void write_f64(double v) { write_u64(std::bit_cast<std::uint64_t>(v)); }

  void write_f64_block(const double* src, std::int64_t count) {
    if constexpr (std::endian::native == std::endian::little) {
      write_raw(src, count * 8);
    } else {
      for (std::int64_t i = 0; i < count; ++i) write_f64(src[i]);
    }
  }

  void close() {
    out_.close();
    if (!out_) throw resource_error(what_ + ": close failed");
  }

 private:
  std::string what_;
  std::ofstream out_;
};

}  // namespace detail

/// Tensor file: magic "DTEN1", u32 order N, N u64 dimensions, then the values
/// as f64 in storage order (mode 1 fastest). All fields little-endian.
inline void save_tensor(const DenseTensor& t, const std::filesystem::path& path) {
  detail::FileWriter w(path, "save_tensor(" + path.string() + ")");
  w.write_raw("DTEN1", 5);
  w.write_u32(static_cast<std::uint32_t>(t.order()));
  for (int n = 1; n <= t.order(); ++n) w.write_u64(static_cast<std::uint64_t>(t.dim(n)));
  w.write_f64_block(t.data(), t.size());
  w.close();
}

inline DenseTensor load_tensor(const std::filesystem::path& path) {
  detail::FileReader r(path, "load_tensor(" + path.string() + ")");
  r.expect_magic("DTEN1", 5);
  const std::uint32_t order = r.read_u32("order");
  if (order < 1)
    throw format_error("load_tensor(" + path.string() + "): order 0 at offset 5");

  std::vector<std::int64_t> shape(order);
  std::int64_t cells = 1;
  for (std::uint32_t n = 0; n < order; ++n) {
    const std::int64_t at = r.offset();
    const std::uint64_t dim = r.read_u64("dimension " + std::to_string(n + 1));
    if (dim < 1 || dim > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      throw format_error("load_tensor(" + path.string() + "): bad dimension " +
                         std::to_string(dim) + " at offset " + std::to_string(at));
    shape[n] = static_cast<std::int64_t>(dim);
    if (shape[n] > std::numeric_limits<std::int64_t>::max() / 8 / cells)
      throw format_error("load_tensor(" + path.string() + "): shape product overflows at offset " +
                         std::to_string(at));
    cells *= shape[n];
  }

  r.need(cells * 8, std::to_string(cells) + " values");
  std::vector<double> values(static_cast<std::size_t>(cells));
  r.read_f64_block(values.data(), cells, "values");
  r.expect_end();
  return DenseTensor(std::move(shape), std::move(values));
}

/// Factor file: magic "DFAC1", u32 order N, u32 rank F, then per factor a u64
/// row count, u64 column count (must equal F), and rows*F values row-major.
inline void save_model(const FactorModel& m, const std::filesystem::path& path) {
  detail::FileWriter w(path, "save_model(" + path.string() + ")");
  w.write_raw("DFAC1", 5);
  w.write_u32(static_cast<std::uint32_t>(m.order()));
  w.write_u32(static_cast<std::uint32_t>(m.rank()));
  for (int n = 1; n <= m.order(); ++n) {
    const auto& a = m.factor(n);
    w.write_u64(static_cast<std::uint64_t>(a.rows()));
    w.write_u64(static_cast<std::uint64_t>(a.cols()));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index f = 0; f < a.cols(); ++f) w.write_f64(a(i, f));
  }
  w.close();
}

inline FactorModel load_model(const std::filesystem::path& path) {
  const std::string what = "load_model(" + path.string() + ")";
  detail::FileReader r(path, what);
  r.expect_magic("DFAC1", 5);
  const std::uint32_t order = r.read_u32("order");
  if (order < 1) throw format_error(what + ": order 0 at offset 5");
  const std::uint32_t rank = r.read_u32("rank");
  if (rank < 1) throw format_error(what + ": rank 0 at offset 9");

  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(order);
  for (std::uint32_t n = 1; n <= order; ++n) {
    const std::string which = "factor " + std::to_string(n);
    std::int64_t at = r.offset();
    const std::uint64_t rows = r.read_u64(which + " rows");
    if (rows < 1 || rows > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) / 8 / rank)
      throw format_error(what + ": bad row count " + std::to_string(rows) + " at offset " +
                         std::to_string(at));
    at = r.offset();
    const std::uint64_t cols = r.read_u64(which + " cols");
    if (cols != rank)
      throw format_error(what + ": " + which + " has " + std::to_string(cols) +
                         " columns at offset " + std::to_string(at) + ", expected rank " +
                         std::to_string(rank));

    Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rank));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index f = 0; f < a.cols(); ++f) a(i, f) = r.read_f64(which + " values");
    factors.push_back(std::move(a));
  }
  r.expect_end();
  return FactorModel(std::move(factors));
}

}  // namespace bras
