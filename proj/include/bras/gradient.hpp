#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cstdint>
#include <string>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/kr.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// Stochastic block gradient for one mode. `scale` records the 1/|batch|
/// normalization applied to G, fixing the convention: G estimates the
/// gradient of the normalized block objective
///   f_n(A) = (1/(2 J_n)) || X_(n) - H A^T ||_F^2,
/// so the average of G over all B-subsets equals the full gradient exactly,
/// and the batch = {1..J_n} case reproduces it identically.
struct BlockGradient {
  int mode = 1;
  Eigen::MatrixXd G;
  std::vector<std::int64_t> batch;
  double scale = 1.0;
};

/// G = (1/B) * (A_(n) Hs^T Hs - Xs^T Hs) with Hs the sampled Khatri-Rao rows
/// and Xs the B x I_n matrix of sampled fibers. O(B * F * (I_n + N * F)).
inline BlockGradient stochastic_block_gradient(const DenseTensor& t, const FactorModel& m,
                                               int mode,
                                               const std::vector<std::int64_t>& fibers) {
  detail::check_conformance(t, m, "stochastic_block_gradient");
  if (fibers.empty()) throw argument_error("stochastic_block_gradient: empty batch");

  const Eigen::MatrixXd hs = kr_rows(m, mode, fibers);  // validates mode and ranges
  const Eigen::MatrixXd hs_gram = hs.transpose() * hs;

  const std::int64_t len = t.dim(mode);
  const std::int64_t step = t.stride(mode);
  Eigen::MatrixXd xs_t_hs = Eigen::MatrixXd::Zero(len, m.rank());
  Eigen::VectorXd fiber(len);
  for (std::size_t b = 0; b < fibers.size(); ++b) {
    const std::int64_t base = t.fiber_offset({mode, fibers[b]});
    if (step == 1) {
      fiber = Eigen::Map<const Eigen::VectorXd>(t.data() + base, len);
    } else {
      for (std::int64_t i = 0; i < len; ++i) fiber[i] = t.data()[base + i * step];
    }
    xs_t_hs.noalias() += fiber * hs.row(static_cast<Eigen::Index>(b));
  }

  BlockGradient out;
  out.mode = mode;
  out.batch = fibers;
  out.scale = 1.0 / static_cast<double>(fibers.size());
  out.G = out.scale * (m.factor(mode) * hs_gram - xs_t_hs);
  return out;
}

/// Full-batch block gradient (1/J_n)(A_(n) H^T H - X_(n)^T H), i.e. the
/// gradient of f_n above; the Gram is formed by the Hadamard identity, never
/// materializing H.
inline Eigen::MatrixXd full_block_gradient(const DenseTensor& t, const FactorModel& m,
                                           int mode) {
  detail::check_conformance(t, m, "full_block_gradient");
  const Eigen::MatrixXd gram = kr_gram(m, mode);
  const Eigen::MatrixXd mtt = full_mttkrp(t, m, mode);
  const double inv_j = 1.0 / static_cast<double>(t.fiber_count(mode));
  return inv_j * (m.factor(mode) * gram - mtt);
}

/// Block Lipschitz constant L_n = lambda_max(H^T H) / J_n, matching the
/// scaling of full_block_gradient. Uses the Hadamard Gram identity plus a
/// direct symmetric eigenvalue solve on the F x F Gram.
inline double block_lipschitz(const FactorModel& m, int mode) {
  const Eigen::MatrixXd gram = kr_gram(m, mode);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success)
    throw numerical_error("block_lipschitz: eigenvalue solve did not converge");
  const double lambda_max = std::max(0.0, eig.eigenvalues().maxCoeff());
  const std::int64_t j = fiber_count(m.shape(), mode);
  return lambda_max / static_cast<double>(j);
}

}  // namespace bras
