// Acceptance gate: one line per criterion, PASS or FAIL, exit code = number
// of failures. Each check pins the tolerance it enforces and reports the
// measured margin, so a regression is visible in the output, not just in the
// exit code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bras/config.hpp"
#include "bras/experiment.hpp"
#include "bras/gradient.hpp"
#include "bras/metrics.hpp"
#include "bras/prox.hpp"
#include "bras/rng.hpp"
#include "bras/solver.hpp"
#include "bras/synthetic.hpp"
#include "bras/tensor.hpp"
#include "oracles.hpp"

namespace {

using namespace bras;

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt(double v) { return detail::format_double(v); }

/// budget_seconds <= 0 means the criterion has no wall-time bound.
void report(int number, const std::string& name, bool pass, const std::string& detail_text,
            double seconds, double budget_seconds) {
  const bool in_budget = budget_seconds <= 0.0 || seconds < budget_seconds;
  const bool ok = pass && in_budget;
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << number << " (" << name
            << "): " << detail_text << "; " << fmt(seconds) << "s";
  if (budget_seconds > 0.0) std::cout << " (budget " << fmt(budget_seconds) << "s)";
  if (!in_budget) std::cout << " OVER BUDGET";
  std::cout << "\n" << std::flush;
  if (!ok) ++failures;
}

DenseTensor random_tensor(Rng& rng, const std::vector<std::int64_t>& shape) {
  std::vector<double> values(static_cast<std::size_t>(detail::element_count(shape)));
  for (double& v : values) v = rng.uniform01();
  return DenseTensor(shape, std::move(values));
}

std::vector<std::int64_t> random_small_shape(Rng& rng, std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> shape(3);
  for (auto& d : shape) d = lo + static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(hi - lo + 1)));
  return shape;
}

// ---------------------------------------------------------------------------

void criterion_1_unbiasedness() {
  Timer timer;
  Rng meta(split_seed(1001, 1));
  double max_err = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto shape = random_small_shape(meta, 2, 4);
    const int rank = 1 + static_cast<int>(meta.bounded(3));
    const DenseTensor t = random_tensor(meta, shape);
    const FactorModel m = FactorModel::random_uniform(shape, rank, meta);
    for (int mode = 1; mode <= 3; ++mode) {
      const Eigen::MatrixXd full = full_block_gradient(t, m, mode);
      const std::int64_t J = t.fiber_count(mode);
      for (std::int64_t B = 1; B <= 2; ++B) {
        const auto subsets = oracle::enumerate_subsets(J, B);
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(t.dim(mode), rank);
        for (const auto& fibers : subsets)
          mean += stochastic_block_gradient(t, m, mode, fibers).G;
        mean /= static_cast<double>(subsets.size());
        max_err = std::max(max_err, (mean - full).cwiseAbs().maxCoeff());
      }
    }
  }
  report(1, "stochastic gradient unbiasedness", max_err <= 1e-12,
         "subset-enumerated mean vs full gradient, 20 instances, B in {1,2}: max entrywise "
         "error " +
             fmt(max_err) + " (tol 1e-12)",
         timer.seconds(), 10.0);
}

void criterion_2_gradient() {
  Timer timer;
  Rng meta(split_seed(1002, 1));
  double max_rel = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto shape = random_small_shape(meta, 2, 4);
    const int rank = 1 + static_cast<int>(meta.bounded(3));
    const DenseTensor t = random_tensor(meta, shape);
    const FactorModel m = FactorModel::random_uniform(shape, rank, meta);
    for (int mode = 1; mode <= 3; ++mode) {
      const Eigen::MatrixXd g = full_block_gradient(t, m, mode);
      const Eigen::MatrixXd fd = oracle::fd_gradient(t, m, mode, 1e-6);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index f = 0; f < g.cols(); ++f)
          max_rel = std::max(max_rel,
                             std::abs(g(i, f) - fd(i, f)) / std::max(1.0, std::abs(fd(i, f))));
    }
  }
  report(2, "full gradient vs finite differences", max_rel <= 1e-5,
         "central differences (step 1e-6), 20 instances: max relative error " + fmt(max_rel) +
             " (tol 1e-5)",
         timer.seconds(), 10.0);
}

void criterion_3_prox() {
  Timer timer;
  Rng rng(split_seed(1003, 1));
  const std::vector<Regularizer> kinds = {
      Regularizer::none(),       Regularizer::nonneg(),  Regularizer::l1(0.6),
      Regularizer::l2(0.8),      Regularizer::l21(0.7),  Regularizer::l0(0.5),
      Regularizer::simplex(2.0), Regularizer::monotone()};
  const double alphas[] = {0.25, 1.0, 3.0};

  double worst_margin = std::numeric_limits<double>::infinity();
  double worst_idem = 0.0;
  bool dominated = true;
  for (const auto& reg : kinds) {
    for (int input = 0; input < 100; ++input) {
      const Eigen::Index rows = 1 + input % 3;
      const Eigen::Index cols = 1 + input % 2;
      Eigen::MatrixXd x(rows, cols);
      for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) x(r, c) = 1.5 * rng.gaussian();
      const double alpha = alphas[input % 3];

      const Eigen::MatrixXd p = apply_prox(reg, x, alpha);
      const double p_obj = oracle::prox_objective(reg, x, p, alpha);

      if (reg.projection()) {
        const double idem = (apply_prox(reg, p, alpha) - p).cwiseAbs().maxCoeff();
        worst_idem = std::max(worst_idem, idem);
      }
      for (int k = 0; k < 10000; ++k) {
        const Eigen::MatrixXd cand = oracle::random_feasible_candidate(reg, p, rng);
        const double c_obj = oracle::prox_objective(reg, x, cand, alpha);
        const double margin = c_obj - p_obj;
        worst_margin = std::min(worst_margin, margin);
        if (margin < -1e-12 * (1.0 + std::abs(c_obj))) dominated = false;
      }
    }
  }
  report(3, "prox optimality against random candidates", dominated && worst_idem <= 1e-12,
         "8 operators x 100 inputs x 10000 feasible candidates: worst candidate margin " +
             fmt(worst_margin) + " (>= 0 expected), projection idempotence " + fmt(worst_idem) +
             " (tol 1e-12)",
         timer.seconds(), 30.0);
}

// Shared recovery-run helper: synthetic instance, uniform random init, and a
// 30-MTTKRP-equivalent run with B=20.
RunResult recovery_run(const std::vector<std::int64_t>& shape, std::int64_t rank,
                       std::optional<double> snr_db, const Regularizer& reg, Algorithm algo,
                       const StepSchedule& schedule, std::uint64_t master, int seed_index) {
  SyntheticSpec spec;
  spec.shape = shape;
  spec.rank = rank;
  spec.snr_db = snr_db;
  spec.seed = split_seed(master, 100 + static_cast<std::uint64_t>(seed_index));
  const SyntheticInstance inst = generate(spec);

  Rng init_rng(split_seed(master, 200 + static_cast<std::uint64_t>(seed_index)));
  FactorModel init = FactorModel::random_uniform(shape, rank, init_rng);

  SolverOptions opts;
  opts.algorithm = algo;
  opts.schedule = schedule;
  opts.batch = BatchSchedule::fixed(20);
  opts.seed = split_seed(master, 300 + static_cast<std::uint64_t>(seed_index));
  opts.truth = &inst.truth;

  StoppingRule stop;
  stop.max_mttkrp_equivalents = 30.0;

  const std::vector<Regularizer> regs(3, reg);
  return run(inst.tensor, std::move(init), regs, opts, stop);
}

double best_mse(const RunResult& res) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : res.trace) best = std::min(best, rec.mse_avg());
  return best;
}

double final_mse(const RunResult& res) {
  if (res.status != RunStatus::finished || res.trace.empty())
    return std::numeric_limits<double>::infinity();
  return res.trace.back().mse_avg();
}

void criterion_4_desk_scale() {
  Timer timer;
  const std::vector<std::int64_t> shape = {100, 100, 100};
  const Regularizer nonneg = Regularizer::nonneg();

  std::vector<double> ada_mse;
  std::vector<double> bras_mse;
  for (int k = 0; k < 10; ++k) {
    ada_mse.push_back(best_mse(recovery_run(shape, 10, std::nullopt, nonneg, Algorithm::ada,
                                            StepSchedule::adagrad(1.0, 1e-6, 0.0), 1004, k)));
    bras_mse.push_back(best_mse(recovery_run(shape, 10, std::nullopt, nonneg, Algorithm::bras,
                                             StepSchedule::power_decay(0.05, 1e-6), 1004, k)));
  }
  const double ada_median = detail::median_of(ada_mse);
  const double bras_median = detail::median_of(bras_mse);
  report(4, "noiseless 100^3 rank-10 nonnegative recovery",
         ada_median <= 1e-3 && bras_median <= 1e-3,
         "median avg-MSE over 10 seeds within 30 MTTKRP-equivalents, B=20: adaptive " +
             fmt(ada_median) + ", decaying-step " + fmt(bras_median) + " (tol 1e-3 each)",
         timer.seconds(), 600.0);
}

void criterion_5_noisy_trend() {
  Timer timer;
  const std::vector<std::int64_t> shape = {60, 60, 60};
  const Regularizer nonneg = Regularizer::nonneg();
  const StepSchedule ada = StepSchedule::adagrad(1.0, 1e-6, 0.0);

  const auto median_final = [&](double snr) {
    std::vector<double> vals;
    for (int k = 0; k < 10; ++k)
      vals.push_back(
          final_mse(recovery_run(shape, 10, snr, nonneg, Algorithm::ada, ada, 1005, k)));
    return detail::median_of(vals);
  };

  const double at30 = median_final(30.0);
  const double at40 = median_final(40.0);
  const double at10 = median_final(10.0);
  report(5, "noisy 60^3 recovery and SNR trend", at30 <= 1e-2 && at40 < at10,
         "median avg-MSE after 30 MTTKRP-equivalents: SNR30 " + fmt(at30) +
             " (tol 1e-2), SNR40 " + fmt(at40) + " < SNR10 " + fmt(at10),
         timer.seconds(), 300.0);
}

void criterion_6_simplex() {
  Timer timer;
  const std::vector<std::int64_t> shape = {60, 60, 60};
  const double rho = 60.0;
  std::vector<double> ratios;

  for (int k = 0; k < 10; ++k) {
    // Feasible ground truth: uniform factors with every column scaled onto
    // the rho-simplex, then noise at SNR 40.
    Rng data_rng(split_seed(1006, 100 + static_cast<std::uint64_t>(k)));
    FactorModel truth = FactorModel::random_uniform(shape, 10, data_rng);
    for (int n = 1; n <= 3; ++n)
      for (Eigen::Index f = 0; f < truth.factor(n).cols(); ++f)
        truth.factor(n).col(f) *= rho / truth.factor(n).col(f).sum();
    DenseTensor t = detail::synthesize(truth);
    const double sigma = snr_sigma(t, 40.0);
    for (double& v : t.values()) v += sigma * data_rng.gaussian();

    Rng init_rng(split_seed(1006, 200 + static_cast<std::uint64_t>(k)));
    FactorModel init = FactorModel::random_uniform(shape, 10, init_rng);

    SolverOptions opts;
    opts.algorithm = Algorithm::ada;
    opts.schedule = StepSchedule::adagrad(1.0, 1e-6, 0.0);
    opts.batch = BatchSchedule::fixed(20);
    opts.seed = split_seed(1006, 300 + static_cast<std::uint64_t>(k));

    StoppingRule stop;
    stop.max_mttkrp_equivalents = 30.0;

    const std::vector<Regularizer> regs(3, Regularizer::simplex(rho));
    const RunResult res = run(t, std::move(init), regs, opts, stop);
    if (res.status != RunStatus::finished || res.trace.size() < 2) {
      ratios.push_back(0.0);
      continue;
    }
    ratios.push_back(res.trace.front().cost / res.trace.back().cost);
  }
  const double median_ratio = detail::median_of(ratios);
  report(6, "simplex-constrained 60^3 cost reduction", median_ratio >= 10.0,
         "scaled simplex rho=60 on every mode at SNR 40: median init/final cost ratio over 10 "
         "seeds " +
             fmt(median_ratio) + " (>= 10 required)",
         timer.seconds(), 300.0);
}

void criterion_7_determinism() {
  Timer timer;
  const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
      "synthetic_shape = 20x18x16\n"
      "synthetic_rank = 3\n"
      "rank = 3\n"
      "algorithm = ada\n"
      "batch = 5\n"
      "reg = nonneg\n"
      "max_iterations = 300\n"
      "trials = 2\n"
      "seed = 17\n"));

  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  const auto base = std::filesystem::temp_directory_path() /
                    ("bras_accept_" + std::to_string(::getpid()));
  std::filesystem::remove_all(base);
  run_experiment(cfg, base / "a");
  run_experiment(cfg, base / "b");
  run_experiment(cfg, base / "c", 2);

  bool identical = true;
  for (const char* name : {"trial_1.csv", "trial_2.csv", "summary.csv"}) {
    const std::string first = slurp(base / "a" / name);
    identical = identical && !first.empty() && first == slurp(base / "b" / name) &&
                first == slurp(base / "c" / name);
  }
  std::filesystem::remove_all(base);
  report(7, "byte-identical traces across reruns", identical,
         std::string("two serial runs and one 2-thread run of the same config: trace and "
                     "summary files ") +
             (identical ? "match byte for byte" : "DIFFER"),
         timer.seconds(), 0.0);
}

void criterion_8_divergence() {
  Timer timer;
  bool diverged = false;
  bool finite_model = false;
  bool no_throw = true;
  std::int64_t iterations = -1;
  std::string reason;
  try {
    SyntheticSpec spec;
    spec.shape = {50, 50, 50};
    spec.rank = 10;
    spec.seed = split_seed(1008, 100);
    const SyntheticInstance inst = generate(spec);
    Rng init_rng(split_seed(1008, 200));
    FactorModel init = FactorModel::random_uniform(spec.shape, 10, init_rng);

    SolverOptions opts;
    opts.algorithm = Algorithm::bras;
    opts.schedule = StepSchedule::power_decay(1e3, 1e-6);
    opts.batch = BatchSchedule::fixed(20);
    opts.seed = split_seed(1008, 300);

    StoppingRule stop;
    stop.max_iterations = 2000;

    const std::vector<Regularizer> regs(3, Regularizer::nonneg());
    const RunResult res = run(inst.tensor, std::move(init), regs, opts, stop);
    diverged = res.status == RunStatus::diverged;
    finite_model = res.model.all_finite();
    iterations = res.iterations;
    reason = res.stop_reason;
  } catch (const std::exception& e) {
    no_throw = false;
    reason = std::string("threw: ") + e.what();
  }
  report(8, "divergence reported as a status", no_throw && diverged && finite_model &&
                                                   iterations >= 0 && iterations <= 2000,
         "stepsize 1e3 on a random 50^3 instance: status " +
             std::string(diverged ? "diverged" : "NOT diverged") + " after " +
             std::to_string(iterations) + " iterations (bound 2000), last model " +
             (finite_model ? "finite" : "non-finite") + ", reason \"" + reason + "\"",
         timer.seconds(), 0.0);
}

void criterion_9_mse() {
  Timer timer;
  Rng rng(split_seed(1009, 1));
  double max_diff = 0.0;
  double max_invariance = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const auto shape = random_small_shape(rng, 3, 8);
    const int rank = 1 + static_cast<int>(rng.bounded(7));
    std::vector<Eigen::MatrixXd> factors_a;
    std::vector<Eigen::MatrixXd> factors_b;
    for (const std::int64_t rows : shape) {
      Eigen::MatrixXd a(rows, rank);
      Eigen::MatrixXd b(rows, rank);
      for (Eigen::Index f = 0; f < rank; ++f)
        for (Eigen::Index i = 0; i < rows; ++i) {
          a(i, f) = rng.gaussian();
          b(i, f) = rng.gaussian();
        }
      factors_a.push_back(std::move(a));
      factors_b.push_back(std::move(b));
    }
    const FactorModel est(std::move(factors_a));
    const FactorModel truth(std::move(factors_b));
    for (int mode = 1; mode <= 3; ++mode)
      max_diff = std::max(
          max_diff, std::abs(mse(est, truth, mode) - oracle::brute_mse(est, truth, mode)));

    // invariance under column permutation and positive column scaling
    FactorModel shuffled = truth;
    std::vector<int> perm(static_cast<std::size_t>(rank));
    for (int f = 0; f < rank; ++f) perm[static_cast<std::size_t>(f)] = f;
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.bounded(i))]);
    for (int n = 1; n <= 3; ++n)
      for (int f = 0; f < rank; ++f)
        shuffled.factor(n).col(f) =
            truth.factor(n).col(perm[static_cast<std::size_t>(f)]) * (0.3 + 2.7 * rng.uniform01());
    for (int mode = 1; mode <= 3; ++mode)
      max_invariance = std::max(max_invariance, mse(shuffled, truth, mode));
  }
  report(9, "match error equals brute-force permutation minimum",
         max_diff <= 1e-12 && max_invariance <= 1e-12,
         "100 random pairs, ranks up to 7: max |assignment - brute force| " + fmt(max_diff) +
             ", max error after permutation+scaling " + fmt(max_invariance) + " (tol 1e-12)",
         timer.seconds(), 0.0);
}

}  // namespace

int main() {
  criterion_1_unbiasedness();
  criterion_2_gradient();
  criterion_3_prox();
  criterion_4_desk_scale();
  criterion_5_noisy_trend();
  criterion_6_simplex();
  criterion_7_determinism();
  criterion_8_divergence();
  criterion_9_mse();
  if (failures == 0)
    std::cout << "all acceptance criteria passed\n";
  else
    std::cout << failures << " acceptance criteria FAILED\n";
  return failures;
}
