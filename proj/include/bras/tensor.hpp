#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bras/errors.hpp"

namespace bras {

/// Address of one mode-n fiber: the vector obtained by fixing every index
/// except i_n. `mode` and `j` are 1-based; j enumerates the fibers in the
/// unfolding order defined by decode_fiber below.
struct FiberIndex {
  int mode = 1;
  std::int64_t j = 1;
};

namespace detail {

inline void check_shape(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) throw argument_error("tensor order must be at least 1");
  std::int64_t total = 1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (shape[k] < 1)
      throw argument_error("tensor dimension " + std::to_string(k + 1) +
                           " must be positive, got " + std::to_string(shape[k]));
    if (total > (std::int64_t{1} << 62) / shape[k])
      throw resource_error("tensor element count overflows 64-bit addressing");
    total *= shape[k];
  }
}

inline std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t total = 1;
  for (std::int64_t d : shape) total *= d;
  return total;
}

}  // namespace detail

/// Number of mode-`mode` fibers of a tensor with the given shape:
/// J_n = prod_{m != n} I_m. `mode` is 1-based.
inline std::int64_t fiber_count(const std::vector<std::int64_t>& shape, int mode) {
  if (mode < 1 || mode > static_cast<int>(shape.size()))
    throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                      std::to_string(shape.size()));
  return detail::element_count(shape) / shape[mode - 1];
}

/// Maps a fiber index j in 1..J_n to the remaining coordinates
/// (i_k for k != mode, in increasing k), all 1-based.
///
/// The ordering is the classical unfolding: j - 1 = sum_{k != n} (i_k - 1) J_k
/// with J_k = prod_{m < k, m != n} I_m, so the smallest remaining mode varies
/// fastest. Every other component treats this function as the single source
/// of truth for fiber ordering.
inline std::vector<std::int64_t> decode_fiber(const std::vector<std::int64_t>& shape,
                                              FiberIndex fi) {
  const int order = static_cast<int>(shape.size());
  const std::int64_t J = fiber_count(shape, fi.mode);  // validates mode
  if (fi.j < 1 || fi.j > J)
    throw index_error("fiber index " + std::to_string(fi.j) + " out of range 1.." +
                      std::to_string(J) + " for mode " + std::to_string(fi.mode));
  std::vector<std::int64_t> coords(order - 1);
  std::int64_t rem = fi.j - 1;
  int out = 0;
  for (int k = 1; k <= order; ++k) {
    if (k == fi.mode) continue;
    coords[out++] = rem % shape[k - 1] + 1;
    rem /= shape[k - 1];
  }
  return coords;
}

/// Inverse of decode_fiber: coordinates (i_k for k != mode, increasing k,
/// 1-based) back to the fiber index j.
inline std::int64_t encode_fiber(const std::vector<std::int64_t>& shape, int mode,
                                 const std::vector<std::int64_t>& coords) {
  const int order = static_cast<int>(shape.size());
  if (mode < 1 || mode > order)
    throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                      std::to_string(order));
  if (static_cast<int>(coords.size()) != order - 1)
    throw dimension_error("expected " + std::to_string(order - 1) +
                          " coordinates, got " + std::to_string(coords.size()));
  std::int64_t j = 0;
  std::int64_t radix = 1;
  int in = 0;
  for (int k = 1; k <= order; ++k) {
    if (k == mode) continue;
    const std::int64_t ik = coords[in++];
    if (ik < 1 || ik > shape[k - 1])
      throw index_error("coordinate " + std::to_string(ik) + " out of range 1.." +
                        std::to_string(shape[k - 1]) + " in mode " + std::to_string(k));
    j += (ik - 1) * radix;
    radix *= shape[k - 1];
  }
  return j + 1;
}

/// Dense real-valued tensor of order N >= 1.
///
/// Values are stored linearly with mode 1 fastest-varying:
/// offset(i_1..i_N) = sum_n (i_n - 1) * S_n, S_1 = 1, S_n = S_{n-1} * I_{n-1}.
/// A mode-1 fiber is therefore contiguous. All public indices are 1-based.
class DenseTensor {
 public:
  DenseTensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit DenseTensor(std::vector<std::int64_t> shape)
      : DenseTensor(std::move(shape), {}, true) {}

  /// Adopts `values`, which must hold exactly prod(shape) entries in the
  /// storage order described above.
  DenseTensor(std::vector<std::int64_t> shape, std::vector<double> values)
      : DenseTensor(std::move(shape), std::move(values), false) {}

  [[nodiscard]] int order() const { return static_cast<int>(shape_.size()); }
  [[nodiscard]] const std::vector<std::int64_t>& shape() const { return shape_; }

  /// Extent of mode n (1-based).
  [[nodiscard]] std::int64_t dim(int mode) const {
    check_mode(mode);
    return shape_[mode - 1];
  }

  /// Linear stride of mode n (1-based).
  [[nodiscard]] std::int64_t stride(int mode) const {
    check_mode(mode);
    return strides_[mode - 1];
  }

  [[nodiscard]] std::int64_t size() const {
    return static_cast<std::int64_t>(values_.size());
  }

  [[nodiscard]] std::int64_t fiber_count(int mode) const {
    check_mode(mode);
    return size() / shape_[mode - 1];
  }

  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] std::vector<double>& values() { return values_; }
  [[nodiscard]] const double* data() const { return values_.data(); }
  [[nodiscard]] double* data() { return values_.data(); }

  /// Linear storage offset of a full coordinate tuple (1-based, validated).
  [[nodiscard]] std::int64_t offset_of(const std::vector<std::int64_t>& coords) const {
    if (static_cast<int>(coords.size()) != order())
      throw dimension_error("expected " + std::to_string(order()) +
                            " indices, got " + std::to_string(coords.size()));
    std::int64_t off = 0;
    for (int n = 1; n <= order(); ++n) {
      const std::int64_t in = coords[n - 1];
      if (in < 1 || in > shape_[n - 1])
        throw index_error("index " + std::to_string(in) + " out of range 1.." +
                          std::to_string(shape_[n - 1]) + " in mode " + std::to_string(n));
      off += (in - 1) * strides_[n - 1];
    }
    return off;
  }

  [[nodiscard]] double entry_at(const std::vector<std::int64_t>& coords) const {
    return values_[offset_of(coords)];
  }

  double& entry_at(const std::vector<std::int64_t>& coords) {
    return values_[offset_of(coords)];
  }

  /// Storage offset of the first element of a fiber, plus validation of fi.
  [[nodiscard]] std::int64_t fiber_offset(FiberIndex fi) const {
    const auto coords = decode_fiber(shape_, fi);
    std::int64_t off = 0;
    int in = 0;
    for (int k = 1; k <= order(); ++k) {
      if (k == fi.mode) continue;
      off += (coords[in++] - 1) * strides_[k - 1];
    }
    return off;
  }

  /// The mode-fi.mode fiber as a dense vector of length I_n. O(I_n + N).
  [[nodiscard]] Eigen::VectorXd fiber_at(FiberIndex fi) const {
    const std::int64_t base = fiber_offset(fi);
    const std::int64_t len = shape_[fi.mode - 1];
    const std::int64_t step = strides_[fi.mode - 1];
    Eigen::VectorXd out(len);
    for (std::int64_t i = 0; i < len; ++i) out[i] = values_[base + i * step];
    return out;
  }

 private:
  DenseTensor(std::vector<std::int64_t> shape, std::vector<double> values, bool zero) {
    detail::check_shape(shape);
    shape_ = std::move(shape);
    const std::int64_t total = detail::element_count(shape_);
    if (zero) {
      values_.assign(static_cast<std::size_t>(total), 0.0);
    } else {
      if (static_cast<std::int64_t>(values.size()) != total)
        throw dimension_error("value buffer holds " + std::to_string(values.size()) +
                              " entries, shape requires " + std::to_string(total));
      values_ = std::move(values);
    }
    strides_.resize(shape_.size());
    std::int64_t s = 1;
    for (std::size_t n = 0; n < shape_.size(); ++n) {
      strides_[n] = s;
      s *= shape_[n];
    }
  }

  void check_mode(int mode) const {
    if (mode < 1 || mode > order())
      throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                        std::to_string(order()));
  }

  std::vector<std::int64_t> shape_;
  std::vector<std::int64_t> strides_;
  std::vector<double> values_;
};

}  // namespace bras
