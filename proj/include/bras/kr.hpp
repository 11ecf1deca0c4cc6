#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/tensor.hpp"

namespace bras {

namespace detail {

/// Hadamard product over modes k != mode of the factor rows selected by
/// fiber j (1-based), written into `out`. `shape` must be the model shape.
/// The coordinate decoding matches decode_fiber.
inline void kr_row_into(const FactorModel& m, int mode,
                        const std::vector<std::int64_t>& shape, std::int64_t j,
                        Eigen::RowVectorXd& out) {
  out.setOnes();
  std::int64_t rem = j - 1;
  for (int k = 1; k <= m.order(); ++k) {
    if (k == mode) continue;
    const std::int64_t ik = rem % shape[k - 1];
    rem /= shape[k - 1];
    out.array() *= m.factor(k).row(ik).array();
  }
}

inline void check_conformance(const DenseTensor& t, const FactorModel& m,
                              const char* who) {
  if (m.order() != t.order())
    throw dimension_error(std::string(who) + ": model order " +
                          std::to_string(m.order()) + " vs tensor order " +
                          std::to_string(t.order()));
  for (int n = 1; n <= t.order(); ++n)
    if (m.factor(n).rows() != t.dim(n))
      throw dimension_error(std::string(who) + ": mode " + std::to_string(n) +
                            " has " + std::to_string(m.factor(n).rows()) +
                            " factor rows vs tensor extent " + std::to_string(t.dim(n)));
}

}  // namespace detail

/// Rows of the mode-`mode` Khatri-Rao product H selected by the given fiber
/// indices (1-based). Row b equals the entrywise product over k != mode of
/// A_k(i_k, :) where (i_k) = decode_fiber(fibers[b]). An empty list yields a
/// 0 x F matrix. O(|fibers| * N * F).
inline Eigen::MatrixXd kr_rows(const FactorModel& m, int mode,
                               const std::vector<std::int64_t>& fibers) {
  if (mode < 1 || mode > m.order())
    throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                      std::to_string(m.order()));
  const auto shape = m.shape();
  const std::int64_t J = fiber_count(shape, mode);
  Eigen::MatrixXd h(static_cast<Eigen::Index>(fibers.size()), m.rank());
  Eigen::RowVectorXd row(m.rank());
  for (std::size_t b = 0; b < fibers.size(); ++b) {
    const std::int64_t j = fibers[b];
    if (j < 1 || j > J)
      throw index_error("fiber index " + std::to_string(j) + " out of range 1.." +
                        std::to_string(J) + " for mode " + std::to_string(mode));
    detail::kr_row_into(m, mode, shape, j, row);
    h.row(static_cast<Eigen::Index>(b)) = row;
  }
  return h;
}

/// Gram matrix of the full mode-`mode` Khatri-Rao product without forming it:
/// H^T H = hadamard_{k != mode} A_k^T A_k. F x F, symmetric PSD. O(sum I_k F^2).
inline Eigen::MatrixXd kr_gram(const FactorModel& m, int mode) {
  if (mode < 1 || mode > m.order())
    throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                      std::to_string(m.order()));
  const Eigen::Index rank = m.rank();
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(rank, rank);
  for (int k = 1; k <= m.order(); ++k) {
    if (k == mode) continue;
    g.array() *= (m.factor(k).transpose() * m.factor(k)).array();
  }
  return g;
}

/// Full matricized-tensor-times-Khatri-Rao-product for one mode:
/// returns X_(n)^T H, an I_n x F matrix, streaming over all J_n fibers
/// without materializing H or the unfolding. O(prod(I) * F) time,
/// O(I_n * F) extra memory.
inline Eigen::MatrixXd full_mttkrp(const DenseTensor& t, const FactorModel& m, int mode) {
  detail::check_conformance(t, m, "full_mttkrp");
  const auto& shape = t.shape();
  const std::int64_t J = t.fiber_count(mode);
  const std::int64_t len = t.dim(mode);
  const std::int64_t step = t.stride(mode);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(len, m.rank());
  Eigen::RowVectorXd hrow(m.rank());
  Eigen::VectorXd fiber(len);
  for (std::int64_t j = 1; j <= J; ++j) {
    hrow.setOnes();
    std::int64_t rem = j - 1;
    std::int64_t base = 0;
    for (int k = 1; k <= t.order(); ++k) {
      if (k == mode) continue;
      const std::int64_t ik = rem % shape[k - 1];
      rem /= shape[k - 1];
      base += ik * t.stride(k);
      hrow.array() *= m.factor(k).row(ik).array();
    }
    if (step == 1) {
      fiber = Eigen::Map<const Eigen::VectorXd>(t.data() + base, len);
    } else {
      for (std::int64_t i = 0; i < len; ++i) fiber[i] = t.data()[base + i * step];
    }
    out.noalias() += fiber * hrow;
  }
  return out;
}

}  // namespace bras
