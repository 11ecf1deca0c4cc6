#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/hungarian.hpp"
#include "bras/kr.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// One row of a solver trace. Counters are monotone nondecreasing along a
/// run. mse_per_mode stays empty when no ground truth is available.
struct TraceRecord {
  std::int64_t iteration = 0;
  double mttkrp_equivalents = 0.0;
  double all_mode_mttkrp = 0.0;
  std::int64_t sampled_entries = 0;
  double wall_seconds = 0.0;
  double cost = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mse_per_mode;

  [[nodiscard]] double mse_avg() const {
    if (mse_per_mode.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (double v : mse_per_mode) total += v;
    return total / static_cast<double>(mse_per_mode.size());
  }
};

/// Normalized fitting cost (1/prod I_n) ||X - reconstruction||_F^2, streamed
/// over contiguous mode-1 fibers; the Khatri-Rao product is never formed.
inline double cost(const DenseTensor& t, const FactorModel& m) {
  detail::check_conformance(t, m, "cost");
  const auto& shape = t.shape();
  const std::int64_t J = t.fiber_count(1);
  const std::int64_t len = t.dim(1);
  const auto& a1 = m.factor(1);

  Eigen::RowVectorXd hrow(m.rank());
  Eigen::VectorXd recon(len);
  double ss = 0.0;
  for (std::int64_t j = 1; j <= J; ++j) {
    hrow.setOnes();
    std::int64_t rem = j - 1;
    for (int k = 2; k <= t.order(); ++k) {
      const std::int64_t ik = rem % shape[k - 1];
      rem /= shape[k - 1];
      hrow.array() *= m.factor(k).row(ik).array();
    }
    recon.noalias() = a1 * hrow.transpose();
    const Eigen::Map<const Eigen::VectorXd> fiber(t.data() + (j - 1) * len, len);
    ss += (fiber - recon).squaredNorm();
  }
  return ss / static_cast<double>(t.size());
}

namespace detail {

inline Eigen::MatrixXd normalized_columns(const Eigen::MatrixXd& a, int mode,
                                          const char* which) {
  Eigen::MatrixXd out(a.rows(), a.cols());
  for (Eigen::Index f = 0; f < a.cols(); ++f) {
    const double norm = a.col(f).norm();
    if (norm == 0.0)
      throw metric_error("mse: zero column " + std::to_string(f + 1) + " in " + which +
                         " factor of mode " + std::to_string(mode));
    out.col(f) = a.col(f) / norm;
  }
  return out;
}

}  // namespace detail

/// Permutation-resolved factor match error for one mode:
///   min_pi (1/F) sum_f || a_pi(f)/||a_pi(f)|| - ahat_f/||ahat_f|| ||^2,
/// solved exactly by the Hungarian algorithm on the F x F distance matrix.
/// Sign ambiguity is resolved per column pair (distance 2 - 2|u.v|), so a
/// sign-flipped exact recovery scores 0.
inline double mse(const FactorModel& est, const FactorModel& truth, int mode) {
  if (est.order() != truth.order())
    throw dimension_error("mse: order mismatch " + std::to_string(est.order()) + " vs " +
                          std::to_string(truth.order()));
  if (est.rank() != truth.rank())
    throw dimension_error("mse: rank mismatch " + std::to_string(est.rank()) + " vs " +
                          std::to_string(truth.rank()));
  if (est.factor(mode).rows() != truth.factor(mode).rows())
    throw dimension_error("mse: mode " + std::to_string(mode) + " row mismatch");

  const Eigen::MatrixXd u = detail::normalized_columns(est.factor(mode), mode, "estimated");
  const Eigen::MatrixXd v = detail::normalized_columns(truth.factor(mode), mode, "true");
  const Eigen::MatrixXd dots = u.transpose() * v;  // F x F
  const Eigen::MatrixXd dist =
      (2.0 - 2.0 * dots.array().abs()).max(0.0).matrix();  // clamp rounding
  const auto assign = min_cost_assignment(dist);
  double total = 0.0;
  for (std::size_t f = 0; f < assign.size(); ++f)
    total += dist(static_cast<Eigen::Index>(f), assign[f]);
  return total / static_cast<double>(est.rank());
}

/// Per-mode mse values in mode order.
inline std::vector<double> mse_all_modes(const FactorModel& est, const FactorModel& truth) {
  std::vector<double> out(static_cast<std::size_t>(est.order()));
  for (int n = 1; n <= est.order(); ++n) out[static_cast<std::size_t>(n - 1)] = mse(est, truth, n);
  return out;
}

/// Noise level sigma achieving the target SNR in dB against a clean tensor:
/// 10 log10( ((1/prod I)||X||^2) / sigma^2 ) = target.
inline double snr_sigma(const DenseTensor& clean, double target_snr_db) {
  double ss = 0.0;
  for (double v : clean.values()) ss += v * v;
  if (ss == 0.0) throw argument_error("snr_sigma: clean tensor is identically zero");
  const double mean_square = ss / static_cast<double>(clean.size());
  return std::sqrt(mean_square / std::pow(10.0, target_snr_db / 10.0));
}

}  // namespace bras
