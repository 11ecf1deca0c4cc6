#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/rng.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// Rank-F factor set {A_1, ..., A_N}; factor n has shape I_n x F. The model
/// represents the tensor with entries
///   X(i_1..i_N) = sum_f prod_n A_n(i_n, f).
class FactorModel {
 public:
  FactorModel() = default;

  explicit FactorModel(std::vector<Eigen::MatrixXd> factors) : factors_(std::move(factors)) {
    if (factors_.empty()) throw argument_error("factor model needs at least one factor");
    const Eigen::Index rank = factors_.front().cols();
    if (rank < 1) throw dimension_error("factor rank must be at least 1");
    for (std::size_t n = 0; n < factors_.size(); ++n) {
      if (factors_[n].rows() < 1)
        throw dimension_error("factor " + std::to_string(n + 1) + " has no rows");
      if (factors_[n].cols() != rank)
        throw dimension_error("factor " + std::to_string(n + 1) + " has rank " +
                              std::to_string(factors_[n].cols()) + ", expected " +
                              std::to_string(rank));
    }
  }

  [[nodiscard]] int order() const { return static_cast<int>(factors_.size()); }
  [[nodiscard]] std::int64_t rank() const {
    return factors_.empty() ? 0 : static_cast<std::int64_t>(factors_.front().cols());
  }

  /// Factor matrix of mode n (1-based).
  [[nodiscard]] const Eigen::MatrixXd& factor(int mode) const {
    check_mode(mode);
    return factors_[mode - 1];
  }
  Eigen::MatrixXd& factor(int mode) {
    check_mode(mode);
    return factors_[mode - 1];
  }

  /// Row counts per mode, i.e. the shape of the represented tensor.
  [[nodiscard]] std::vector<std::int64_t> shape() const {
    std::vector<std::int64_t> s(factors_.size());
    for (std::size_t n = 0; n < factors_.size(); ++n)
      s[n] = static_cast<std::int64_t>(factors_[n].rows());
    return s;
  }

  [[nodiscard]] bool conforms_to(const DenseTensor& t) const {
    if (order() != t.order()) return false;
    for (int n = 1; n <= order(); ++n)
      if (factors_[n - 1].rows() != t.dim(n)) return false;
    return true;
  }

  /// True iff every entry of every factor is finite.
  [[nodiscard]] bool all_finite() const {
    for (const auto& a : factors_)
      if (!a.allFinite()) return false;
    return true;
  }

  /// Factors filled i.i.d. uniform on [0,1), entries drawn row-major per
  /// factor in mode order.
  static FactorModel random_uniform(const std::vector<std::int64_t>& shape,
                                    std::int64_t rank, Rng& rng) {
    if (rank < 1) throw argument_error("rank must be positive");
    std::vector<Eigen::MatrixXd> factors;
    factors.reserve(shape.size());
    for (std::int64_t rows : shape) {
      Eigen::MatrixXd a(rows, rank);
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index f = 0; f < a.cols(); ++f) a(i, f) = rng.uniform01();
      factors.push_back(std::move(a));
    }
    return FactorModel(std::move(factors));
  }

 private:
  void check_mode(int mode) const {
    if (mode < 1 || mode > order())
      throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                        std::to_string(order()));
  }

  std::vector<Eigen::MatrixXd> factors_;
};

/// Model entry at a full 1-based coordinate tuple: sum_f prod_n A_n(i_n, f).
inline double model_entry(const FactorModel& m, const std::vector<std::int64_t>& coords) {
  if (static_cast<int>(coords.size()) != m.order())
    throw dimension_error("expected " + std::to_string(m.order()) + " indices, got " +
                          std::to_string(coords.size()));
  const std::int64_t rank = m.rank();
  double total = 0.0;
  for (std::int64_t f = 0; f < rank; ++f) {
    double prod = 1.0;
    for (int n = 1; n <= m.order(); ++n) {
      const auto& a = m.factor(n);
      const std::int64_t in = coords[n - 1];
      if (in < 1 || in > a.rows())
        throw index_error("index " + std::to_string(in) + " out of range 1.." +
                          std::to_string(a.rows()) + " in mode " + std::to_string(n));
      prod *= a(in - 1, f);
    }
    total += prod;
  }
  return total;
}

}  // namespace bras
