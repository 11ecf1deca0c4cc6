#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/gradient.hpp"
#include "bras/kr.hpp"
#include "bras/metrics.hpp"
#include "bras/prox.hpp"
#include "bras/rng.hpp"
#include "bras/sampling.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// Runtime self-checks against independent reimplementations of the math,
/// exposed through the CLI. gradient_scale multiplies every stochastic
/// gradient inside the unbiasedness suite; any value other than 1 must make
/// that suite fail, which is how the checks themselves are checked.
struct VerifyOptions {
  std::uint64_t seed = 17;
  double gradient_scale = 1.0;
};

struct VerifyResult {
  std::string suite;
  bool passed = false;
  std::string detail;
};

namespace detail {

struct Checker {
  std::int64_t checks = 0;
  bool ok = true;
  std::string first_failure;

  void expect(bool cond, const std::string& what) {
    ++checks;
    if (!cond && ok) {
      ok = false;
      first_failure = what;
    }
  }

  [[nodiscard]] VerifyResult result(std::string suite) const {
    return {std::move(suite), ok,
            ok ? std::to_string(checks) + " checks" : first_failure};
  }
};

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                     double lo = -2.0, double hi = 2.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = lo + (hi - lo) * rng.uniform01();
  return m;
}

inline FactorModel random_model(Rng& rng, const std::vector<std::int64_t>& shape, int rank,
                                double lo = -2.0, double hi = 2.0) {
  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(shape.size());
  for (const std::int64_t rows : shape) factors.push_back(random_matrix(rng, rows, rank, lo, hi));
  return FactorModel(std::move(factors));
}

inline DenseTensor random_tensor_from(Rng& rng, const std::vector<std::int64_t>& shape) {
  const std::int64_t total = detail::element_count(shape);
  std::vector<double> values(static_cast<std::size_t>(total));
  for (double& v : values) v = 2.0 * rng.uniform01() - 1.0;
  return DenseTensor(shape, std::move(values));
}

/// Visits all size-B subsets of {1..J} in lexicographic order.
inline void for_each_subset(std::int64_t J, int B,
                            const std::function<void(const std::vector<std::int64_t>&)>& fn) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(B));
  std::iota(idx.begin(), idx.end(), std::int64_t{1});
  while (true) {
    fn(idx);
    int pos = B - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == J - (B - 1 - pos)) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int q = pos + 1; q < B; ++q)
      idx[static_cast<std::size_t>(q)] = idx[static_cast<std::size_t>(q - 1)] + 1;
  }
}

/// Khatri-Rao rows built from first principles: row j is the entrywise
/// product of the non-mode factor rows selected by decode_fiber.
inline Eigen::MatrixXd kr_rows_by_definition(const FactorModel& m, int mode) {
  const std::int64_t J = fiber_count(m.shape(), mode);
  Eigen::MatrixXd h(J, m.rank());
  for (std::int64_t j = 1; j <= J; ++j) {
    const auto coords = decode_fiber(m.shape(), {mode, j});
    for (int f = 0; f < m.rank(); ++f) {
      double prod = 1.0;
      int at = 0;
      for (int k = 1; k <= m.order(); ++k) {
        if (k == mode) continue;
        prod *= m.factor(k)(coords[static_cast<std::size_t>(at++)] - 1, f);
      }
      h(j - 1, f) = prod;
    }
  }
  return h;
}

/// Mode-n unfolding (J x I_n) built entry by entry through decode_fiber.
inline Eigen::MatrixXd unfold_by_definition(const DenseTensor& t, int mode) {
  const std::int64_t J = t.fiber_count(mode);
  const std::int64_t len = t.dim(mode);
  Eigen::MatrixXd unf(J, len);
  std::vector<std::int64_t> full(static_cast<std::size_t>(t.order()));
  for (std::int64_t j = 1; j <= J; ++j) {
    const auto coords = decode_fiber(t.shape(), {mode, j});
    int at = 0;
    for (int k = 1; k <= t.order(); ++k)
      if (k != mode) full[static_cast<std::size_t>(k - 1)] = coords[static_cast<std::size_t>(at++)];
    for (std::int64_t i = 1; i <= len; ++i) {
      full[static_cast<std::size_t>(mode - 1)] = i;
      unf(j - 1, i - 1) = t.entry_at(full);
    }
  }
  return unf;
}

inline double reg_value(const Regularizer& reg, const Eigen::MatrixXd& z) {
  switch (reg.kind) {
    case Regularizer::Kind::none:
    case Regularizer::Kind::nonneg:
    case Regularizer::Kind::simplex:
    case Regularizer::Kind::monotone:
      return 0.0;  // indicator kinds: candidates are feasible by construction
    case Regularizer::Kind::l1:
      return reg.weight * z.array().abs().sum();
    case Regularizer::Kind::l2:
      return reg.weight * z.norm();
    case Regularizer::Kind::l21: {
      double total = 0.0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) total += z.col(c).norm();
      return reg.weight * total;
    }
    case Regularizer::Kind::l0:
      return reg.weight * static_cast<double>((z.array() != 0.0).count());
  }
  return 0.0;
}

inline Eigen::MatrixXd make_feasible(const Regularizer& reg, Eigen::MatrixXd z) {
  switch (reg.kind) {
    case Regularizer::Kind::nonneg:
      return z.cwiseAbs();
    case Regularizer::Kind::simplex:
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        Eigen::VectorXd col = z.col(c).cwiseAbs().array() + 1e-3;
        z.col(c) = col * (reg.rho / col.sum());
      }
      return z;
    case Regularizer::Kind::monotone:
      for (Eigen::Index c = 0; c < z.cols(); ++c)
        std::sort(z.col(c).data(), z.col(c).data() + z.rows());
      return z;
    default:
      return z;
  }
}

inline double prox_objective(const Regularizer& reg, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& m, double alpha) {
  return 0.5 * (z - m).squaredNorm() + alpha * reg_value(reg, z);
}

}  // namespace detail

/// Fiber indexing: decode/encode roundtrips, coordinate ranges, and agreement
/// between fiber_at and entry_at on every fiber of several shapes.
inline VerifyResult verify_index(const VerifyOptions& opts) {
  detail::Checker c;
  Rng rng(split_seed(opts.seed, 101));
  const std::vector<std::vector<std::int64_t>> shapes = {
      {2, 3, 4}, {5, 1, 3}, {2, 2, 2, 2}};
  for (const auto& shape : shapes) {
    const DenseTensor t = detail::random_tensor_from(rng, shape);
    const int order = t.order();
    std::vector<std::int64_t> full(static_cast<std::size_t>(order));
    for (int mode = 1; mode <= order; ++mode) {
      const std::int64_t J = t.fiber_count(mode);
      c.expect(J * t.dim(mode) == t.size(), "fiber count times fiber length != size");
      for (std::int64_t j = 1; j <= J; ++j) {
        const auto coords = decode_fiber(shape, {mode, j});
        c.expect(static_cast<int>(coords.size()) == order - 1, "decode size");
        bool in_range = true;
        int at = 0;
        for (int k = 1; k <= order; ++k) {
          if (k == mode) continue;
          const std::int64_t ik = coords[static_cast<std::size_t>(at++)];
          if (ik < 1 || ik > shape[static_cast<std::size_t>(k - 1)]) in_range = false;
          full[static_cast<std::size_t>(k - 1)] = ik;
        }
        c.expect(in_range, "decoded coordinate out of range");
        c.expect(encode_fiber(shape, mode, coords) == j, "encode(decode(j)) != j");
        const Eigen::VectorXd fiber = t.fiber_at({mode, j});
        bool match = true;
        for (std::int64_t i = 1; i <= t.dim(mode); ++i) {
          full[static_cast<std::size_t>(mode - 1)] = i;
          if (fiber[i - 1] != t.entry_at(full)) match = false;
        }
        c.expect(match, "fiber_at disagrees with entry_at");
      }
    }
  }
  return c.result("index");
}

/// Sampler distribution: mode frequencies track the weights, sampled fiber
/// subsets are strictly increasing in range, and all size-B subsets appear
/// with near-uniform frequency. Margins are ~10 sigma, so a failure means a
/// broken sampler, not bad luck.
inline VerifyResult verify_sampling(const VerifyOptions& opts) {
  detail::Checker c;

  {
    SamplerState uniform(split_seed(opts.seed, 201), 3);
    std::array<std::int64_t, 3> counts{};
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) {
      const int mode = uniform.sample_mode();
      c.expect(mode >= 1 && mode <= 3, "mode out of range");
      ++counts[static_cast<std::size_t>(mode - 1)];
    }
    for (const auto count : counts) {
      const double freq = static_cast<double>(count) / draws;
      c.expect(freq > 1.0 / 3.0 - 0.03 && freq < 1.0 / 3.0 + 0.03,
               "uniform mode frequency off: " + std::to_string(freq));
    }
  }

  {
    SamplerState weighted(split_seed(opts.seed, 202), 3, {0.7, 0.2, 0.1});
    std::array<std::int64_t, 3> counts{};
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(weighted.sample_mode() - 1)];
    const std::array<double, 3> target = {0.7, 0.2, 0.1};
    for (std::size_t n = 0; n < 3; ++n) {
      const double freq = static_cast<double>(counts[n]) / draws;
      c.expect(std::abs(freq - target[n]) < 0.03,
               "weighted mode frequency off in mode " + std::to_string(n + 1));
    }
  }

  {
    SamplerState s(split_seed(opts.seed, 203), 3);
    const std::int64_t J = 6;
    const int B = 3;
    std::map<std::vector<std::int64_t>, std::int64_t> counts;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
      const auto fibers = s.sample_fibers(1, J, B);
      bool valid = static_cast<int>(fibers.size()) == B;
      for (std::size_t q = 0; q < fibers.size(); ++q) {
        if (fibers[q] < 1 || fibers[q] > J) valid = false;
        if (q > 0 && fibers[q] <= fibers[q - 1]) valid = false;
      }
      c.expect(valid, "sampled subset not strictly increasing in 1..J");
      ++counts[fibers];
    }
    c.expect(counts.size() == 20, "expected all 20 subsets of size 3, saw " +
                                      std::to_string(counts.size()));
    for (const auto& [subset, count] : counts) {
      const double freq = static_cast<double>(count) / draws;
      c.expect(freq > 0.035 && freq < 0.065, "subset frequency off: " + std::to_string(freq));
    }
  }

  return c.result("sampling");
}

/// Estimator mean: averaging the stochastic block gradient over every size-B
/// fiber subset must reproduce the full gradient exactly (to rounding).
/// gradient_scale != 1 corrupts the estimator on purpose and must trip this.
inline VerifyResult verify_unbiasedness(const VerifyOptions& opts) {
  detail::Checker c;
  const std::vector<std::pair<std::vector<std::int64_t>, int>> instances = {
      {{2, 3, 2}, 2}, {{3, 2, 2}, 3}, {{2, 2, 2, 2}, 2}};
  int inst = 0;
  for (const auto& [shape, rank] : instances) {
    Rng rng(split_seed(opts.seed, 301 + static_cast<std::uint64_t>(inst++)));
    const DenseTensor t = detail::random_tensor_from(rng, shape);
    const FactorModel m = detail::random_model(rng, shape, rank);
    for (int mode = 1; mode <= t.order(); ++mode) {
      const std::int64_t J = t.fiber_count(mode);
      const Eigen::MatrixXd full = full_block_gradient(t, m, mode);
      for (int B = 1; B <= 2; ++B) {
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(t.dim(mode), rank);
        std::int64_t subsets = 0;
        detail::for_each_subset(J, B, [&](const std::vector<std::int64_t>& fibers) {
          mean += opts.gradient_scale * stochastic_block_gradient(t, m, mode, fibers).G;
          ++subsets;
        });
        mean /= static_cast<double>(subsets);
        const double err = (mean - full).norm();
        c.expect(err <= 1e-12 * (1.0 + full.norm()),
                 "subset mean != full gradient (mode " + std::to_string(mode) + ", B=" +
                     std::to_string(B) + ", err " + std::to_string(err) + ")");
      }
    }
  }
  return c.result("unbiasedness");
}

/// Gradient values: the exact algebraic path against an unfolding built entry
/// by entry, the Gram identity against Khatri-Rao rows built from first
/// principles, and central finite differences of the block objective
/// f_n = (I_n / 2) cost at 1e-5 relative tolerance.
inline VerifyResult verify_gradient(const VerifyOptions& opts) {
  detail::Checker c;
  const std::vector<std::pair<std::vector<std::int64_t>, int>> instances = {{{3, 2, 4}, 2},
                                                                            {{2, 3, 3}, 3}};
  int inst = 0;
  for (const auto& [shape, rank] : instances) {
    Rng rng(split_seed(opts.seed, 401 + static_cast<std::uint64_t>(inst++)));
    const DenseTensor t = detail::random_tensor_from(rng, shape);
    FactorModel m = detail::random_model(rng, shape, rank);
    for (int mode = 1; mode <= t.order(); ++mode) {
      const std::int64_t J = t.fiber_count(mode);
      const Eigen::MatrixXd h = detail::kr_rows_by_definition(m, mode);

      const Eigen::MatrixXd gram = kr_gram(m, mode);
      c.expect((gram - h.transpose() * h).norm() <= 1e-12 * (1.0 + gram.norm()),
               "Gram-Hadamard identity violated in mode " + std::to_string(mode));

      const Eigen::MatrixXd unf = detail::unfold_by_definition(t, mode);
      const Eigen::MatrixXd expected =
          (m.factor(mode) * (h.transpose() * h) - unf.transpose() * h) /
          static_cast<double>(J);
      const Eigen::MatrixXd got = full_block_gradient(t, m, mode);
      c.expect((got - expected).norm() <= 1e-12 * (1.0 + expected.norm()),
               "full gradient disagrees with unfolding algebra in mode " + std::to_string(mode));

      const double half_len = 0.5 * static_cast<double>(t.dim(mode));
      Eigen::MatrixXd& a = m.factor(mode);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index f = 0; f < a.cols(); ++f) {
          const double saved = a(i, f);
          const double step = 1e-6 * std::max(1.0, std::abs(saved));
          a(i, f) = saved + step;
          const double up = half_len * cost(t, m);
          a(i, f) = saved - step;
          const double down = half_len * cost(t, m);
          a(i, f) = saved;
          const double fd = (up - down) / (2.0 * step);
          const double g = got(i, f);
          c.expect(std::abs(fd - g) <= 1e-5 * std::max(1.0, std::abs(g)),
                   "finite difference mismatch at mode " + std::to_string(mode));
        }
      }
    }
  }
  return c.result("gradient");
}

/// Prox operators: idempotence and feasibility for the projections, and
/// dominance of the prox objective 0.5||z - m||^2 + alpha h(z) over random
/// and near-solution feasible candidates for every kind.
inline VerifyResult verify_prox(const VerifyOptions& opts) {
  detail::Checker c;
  Rng rng(split_seed(opts.seed, 501));
  const std::vector<Regularizer> kinds = {
      Regularizer::none(),      Regularizer::nonneg(),    Regularizer::l1(0.7),
      Regularizer::l2(0.9),     Regularizer::l21(0.8),    Regularizer::l0(0.6),
      Regularizer::simplex(2.5), Regularizer::monotone()};
  const std::array<double, 3> spreads = {1e-3, 0.03, 1.0};

  for (const auto& reg : kinds) {
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd m = detail::random_matrix(rng, 3, 2);
      const double alpha = trial % 2 == 0 ? 0.3 : 1.0;
      const Eigen::MatrixXd p = apply_prox(reg, m, alpha);
      const double p_obj = detail::prox_objective(reg, p, m, alpha);

      if (reg.projection()) {
        const Eigen::MatrixXd again = apply_prox(reg, p, alpha);
        c.expect((again - p).norm() <= 1e-12 * (1.0 + p.norm()),
                 reg.to_string() + ": projection not idempotent");
      }
      if (reg.kind == Regularizer::Kind::simplex) {
        bool feasible = (p.array() >= 0.0).all();
        for (Eigen::Index col = 0; col < p.cols(); ++col)
          if (std::abs(p.col(col).sum() - reg.rho) > 1e-12 * (1.0 + reg.rho)) feasible = false;
        c.expect(feasible, "simplex projection infeasible");
      }
      if (reg.kind == Regularizer::Kind::monotone) {
        bool nondecreasing = true;
        for (Eigen::Index col = 0; col < p.cols(); ++col)
          for (Eigen::Index i = 1; i < p.rows(); ++i)
            if (p(i, col) < p(i - 1, col)) nondecreasing = false;
        c.expect(nondecreasing, "isotonic projection not nondecreasing");
      }

      for (int k = 0; k < 30; ++k) {
        Eigen::MatrixXd raw;
        if (k % 2 == 0) {
          raw = detail::random_matrix(rng, 3, 2, -3.0, 3.0);
        } else {
          const double spread = spreads[static_cast<std::size_t>(k / 2) % spreads.size()];
          raw = p;
          for (Eigen::Index jx = 0; jx < raw.size(); ++jx)
            raw(jx % raw.rows(), jx / raw.rows()) += spread * rng.gaussian();
        }
        const Eigen::MatrixXd cand = detail::make_feasible(reg, std::move(raw));
        const double cand_obj = detail::prox_objective(reg, cand, m, alpha);
        c.expect(p_obj <= cand_obj + 1e-9 * (1.0 + std::abs(cand_obj)),
                 reg.to_string() + ": prox beaten by a feasible candidate");
      }
    }
  }
  return c.result("prox");
}

/// Metrics: the match error is invariant to column permutation and scaling,
/// equals a brute-force minimum over all permutations, and the fitting cost
/// agrees with a per-entry reconstruction.
inline VerifyResult verify_metrics(const VerifyOptions& opts) {
  detail::Checker c;
  Rng rng(split_seed(opts.seed, 601));
  const std::vector<std::int64_t> shape = {4, 3, 5};
  const int rank = 3;

  for (int trial = 0; trial < 12; ++trial) {
    const FactorModel truth = detail::random_model(rng, shape, rank, 0.2, 2.0);

    FactorModel shuffled = truth;
    std::vector<int> perm(static_cast<std::size_t>(rank));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.bounded(i))]);
    for (int n = 1; n <= truth.order(); ++n)
      for (int f = 0; f < rank; ++f) {
        const double scale = (0.5 + 1.5 * rng.uniform01()) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
        shuffled.factor(n).col(f) = truth.factor(n).col(perm[static_cast<std::size_t>(f)]) * scale;
      }
    for (const double v : mse_all_modes(shuffled, truth))
      c.expect(v <= 1e-12, "mse not invariant to permutation and scaling");

    const FactorModel other = detail::random_model(rng, shape, rank, 0.2, 2.0);
    for (int mode = 1; mode <= truth.order(); ++mode) {
      const double got = mse(other, truth, mode);

      Eigen::MatrixXd u = other.factor(mode);
      Eigen::MatrixXd v = truth.factor(mode);
      for (Eigen::Index f = 0; f < rank; ++f) {
        u.col(f) /= u.col(f).norm();
        v.col(f) /= v.col(f).norm();
      }
      std::vector<int> assign(static_cast<std::size_t>(rank));
      std::iota(assign.begin(), assign.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double total = 0.0;
        for (int f = 0; f < rank; ++f)
          total += std::max(0.0, 2.0 - 2.0 * std::abs(u.col(f).dot(v.col(assign[static_cast<std::size_t>(f)]))));
        best = std::min(best, total / rank);
      } while (std::next_permutation(assign.begin(), assign.end()));
      c.expect(std::abs(got - best) <= 1e-12 * (1.0 + best),
               "mse disagrees with brute-force permutation minimum");
    }
  }

  {
    const std::vector<std::int64_t> small = {3, 2, 2};
    const DenseTensor t = detail::random_tensor_from(rng, small);
    const FactorModel m = detail::random_model(rng, small, 2);
    double ss = 0.0;
    std::vector<std::int64_t> coords(3);
    for (std::int64_t i3 = 1; i3 <= small[2]; ++i3)
      for (std::int64_t i2 = 1; i2 <= small[1]; ++i2)
        for (std::int64_t i1 = 1; i1 <= small[0]; ++i1) {
          coords = {i1, i2, i3};
          double rec = 0.0;
          for (int f = 0; f < 2; ++f)
            rec += m.factor(1)(i1 - 1, f) * m.factor(2)(i2 - 1, f) * m.factor(3)(i3 - 1, f);
          const double diff = t.entry_at(coords) - rec;
          ss += diff * diff;
        }
    const double expected = ss / static_cast<double>(t.size());
    c.expect(std::abs(cost(t, m) - expected) <= 1e-12 * (1.0 + expected),
             "cost disagrees with per-entry reconstruction");
  }

  return c.result("metrics");
}

/// Runs one suite by name, or all of them for "all". Unknown names are
/// config errors listing the valid suites.
inline std::vector<VerifyResult> run_verify(std::string_view selector = "all",
                                            const VerifyOptions& opts = {}) {
  using Suite = VerifyResult (*)(const VerifyOptions&);
  static constexpr std::pair<const char*, Suite> suites[] = {
      {"index", verify_index},       {"sampling", verify_sampling},
      {"unbiasedness", verify_unbiasedness}, {"gradient", verify_gradient},
      {"prox", verify_prox},         {"metrics", verify_metrics}};

  std::vector<VerifyResult> results;
  bool matched = false;
  for (const auto& [name, fn] : suites) {
    if (selector == "all" || selector == name) {
      results.push_back(fn(opts));
      matched = true;
    }
  }
  if (!matched) {
    std::string names;
    for (const auto& [name, fn] : suites) {
      (void)fn;
      names += std::string(names.empty() ? "" : " ") + name;
    }
    throw config_error("unknown verify suite \"" + std::string(selector) + "\"; available: all " +
                       names);
  }
  return results;
}

}  // namespace bras
