#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/metrics.hpp"
#include "bras/rng.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// Recipe for a synthetic instance: ground-truth factors i.i.d. uniform on
/// [0,1], optional additive zero-mean Gaussian noise calibrated to snr_db.
struct SyntheticSpec {
  std::vector<std::int64_t> shape;
  std::int64_t rank = 1;
  std::optional<double> snr_db;  // absent = noiseless
  std::uint64_t seed = 0;
  std::int64_t memory_limit_bytes = std::int64_t{8} << 30;
};

/// `clean` is present only when noise was added; otherwise `tensor` is the
/// clean reconstruction itself.
struct SyntheticInstance {
  DenseTensor tensor;
  FactorModel truth;
  std::optional<DenseTensor> clean;
};

namespace detail {

/// Dense reconstruction streamed over contiguous mode-1 fibers, mirroring the
/// storage order (mode 1 fastest, then mode 2, ...).
inline DenseTensor synthesize(const FactorModel& m) {
  const auto shape = m.shape();
  std::int64_t cells = 1;
  for (auto d : shape) cells *= d;
  const std::int64_t len = shape[0];
  const std::int64_t J = cells / len;
  const auto& a1 = m.factor(1);

  std::vector<double> values(static_cast<std::size_t>(cells));
  Eigen::RowVectorXd hrow(m.rank());
  for (std::int64_t j = 0; j < J; ++j) {
    hrow.setOnes();
    std::int64_t rem = j;
    for (int k = 2; k <= m.order(); ++k) {
      const std::int64_t ik = rem % shape[static_cast<std::size_t>(k - 1)];
      rem /= shape[static_cast<std::size_t>(k - 1)];
      hrow.array() *= m.factor(k).row(ik).array();
    }
    Eigen::Map<Eigen::VectorXd>(values.data() + j * len, len).noalias() = a1 * hrow.transpose();
  }
  return DenseTensor(shape, std::move(values));
}

}  // namespace detail

/// Builds the ground-truth model and its tensor, optionally noised. Fully
/// seed-deterministic: the factor draws come first, then (noisy case) one
/// Gaussian per entry in storage order, all from one generator stream.
inline SyntheticInstance generate(const SyntheticSpec& spec) {
  if (spec.rank < 1) throw argument_error("synthetic rank must be at least 1");
  if (spec.shape.empty()) throw argument_error("synthetic shape is empty");
  std::int64_t cells = 1;
  for (auto d : spec.shape) {
    if (d < 2) throw argument_error("synthetic shape entries must be at least 2");
    if (d > std::numeric_limits<std::int64_t>::max() / 16 / cells)
      throw resource_error("synthetic shape product overflows the memory accounting");
    cells *= d;
  }
  const std::int64_t copies = spec.snr_db ? 2 : 1;  // noisy runs hold clean + noisy
  const std::int64_t bytes = cells * 8 * copies;
  if (bytes > spec.memory_limit_bytes)
    throw resource_error("synthetic instance needs " + std::to_string(bytes) +
                         " bytes, limit is " + std::to_string(spec.memory_limit_bytes));

  Rng rng(spec.seed);
  FactorModel truth = FactorModel::random_uniform(spec.shape, spec.rank, rng);
  DenseTensor clean = detail::synthesize(truth);
  if (!spec.snr_db) return {std::move(clean), std::move(truth), std::nullopt};

  const double sigma = snr_sigma(clean, *spec.snr_db);
  DenseTensor noisy = clean;
  for (double& v : noisy.values()) v += sigma * rng.gaussian();
  return {std::move(noisy), std::move(truth), std::move(clean)};
}

}  // namespace bras
