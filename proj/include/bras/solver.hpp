#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/factor_model.hpp"
#include "bras/gradient.hpp"
#include "bras/kr.hpp"
#include "bras/metrics.hpp"
#include "bras/prox.hpp"
#include "bras/sampling.hpp"
#include "bras/tensor.hpp"

namespace bras {

/// Stepsize schedule for the block updates. power_decay is the classic
/// alpha0 / r^beta rule; adagrad derives entrywise stepsizes from a running
/// sum of squared gradients, eta / (b + sum G^2)^(1/2 + epsilon).
struct StepSchedule {
  enum class Kind { power_decay, adagrad };

  Kind kind = Kind::power_decay;
  double alpha0 = 0.0;   // power_decay
  double beta = 0.0;     // power_decay
  double eta = 0.0;      // adagrad
  double b = 0.0;        // adagrad
  double epsilon = 0.0;  // adagrad

  static StepSchedule power_decay(double alpha0, double beta) {
    if (!(alpha0 > 0.0)) throw argument_error("alpha0 must be positive");
    if (!(beta >= 0.0)) throw argument_error("beta must be nonnegative");
    StepSchedule s;
    s.kind = Kind::power_decay;
    s.alpha0 = alpha0;
    s.beta = beta;
    return s;
  }

  static StepSchedule adagrad(double eta, double b, double epsilon) {
    if (!(eta > 0.0)) throw argument_error("eta must be positive");
    if (!(b >= 0.0)) throw argument_error("b must be nonnegative");
    if (!(epsilon >= 0.0)) throw argument_error("epsilon must be nonnegative");
    StepSchedule s;
    s.kind = Kind::adagrad;
    s.eta = eta;
    s.b = b;
    s.epsilon = epsilon;
    return s;
  }

  /// True iff the decay exponent gives a strict Robbins-Monro sequence
  /// (square-summable but not summable), i.e. 1/2 < beta <= 1. The common
  /// practical choice beta ~ 1e-6 fails this and is flagged in trace headers.
  [[nodiscard]] bool robbins_monro() const {
    return kind == Kind::power_decay && beta > 0.5 && beta <= 1.0;
  }

  /// Scalar stepsize alpha0 / r^beta at iteration r >= 1.
  [[nodiscard]] double alpha_at(std::int64_t r) const {
    if (kind != Kind::power_decay) throw argument_error("alpha_at needs a power_decay schedule");
    if (r < 1) throw argument_error("iteration counter starts at 1");
    return alpha0 / std::pow(static_cast<double>(r), beta);
  }
};

/// Effective stepsize under the proximal boundedness safeguard
/// mu * ||A - A_prev||_F^2: the safeguarded update equals an unsafeguarded
/// prox step at A - alpha' G with alpha' = alpha / (1 + 2 alpha mu).
inline double safeguarded_stepsize(double alpha, double mu) {
  if (!(mu >= 0.0)) throw argument_error("safeguard mu must be nonnegative");
  return alpha / (1.0 + 2.0 * alpha * mu);
}

/// Run bounds; the first one reached stops the run. At least one must be set.
struct StoppingRule {
  std::optional<std::int64_t> max_iterations;
  std::optional<double> max_mttkrp_equivalents;
  std::optional<double> max_wall_seconds;
  std::optional<double> target_cost;

  void validate() const {
    if (!max_iterations && !max_mttkrp_equivalents && !max_wall_seconds && !target_cost)
      throw config_error("stopping rule has no bounds set");
    if (max_iterations && *max_iterations < 0)
      throw config_error("max_iterations must be nonnegative");
    if (max_mttkrp_equivalents && !(*max_mttkrp_equivalents >= 0.0))
      throw config_error("max_mttkrp_equivalents must be nonnegative");
    if (max_wall_seconds && !(*max_wall_seconds > 0.0))
      throw config_error("max_wall_seconds must be positive");
  }
};

/// Mutable per-run state shared by both step rules. grad_accum holds the
/// Adagrad running sums of squared gradients (zeros until a mode is touched
/// by ada_step); mttkrp_per_mode counts fractional MTTKRP equivalents, each
/// iteration adding B / J_n to the sampled mode's slot.
struct SolverState {
  FactorModel model;
  SamplerState sampler;
  std::int64_t iteration = 0;
  std::vector<Eigen::MatrixXd> grad_accum;
  std::vector<double> mttkrp_per_mode;
  std::int64_t sampled_entries = 0;

  SolverState(FactorModel m, SamplerState s) : model(std::move(m)), sampler(std::move(s)) {
    if (model.order() != sampler.num_modes())
      throw dimension_error("sampler covers " + std::to_string(sampler.num_modes()) +
                            " modes, model has " + std::to_string(model.order()));
    grad_accum.reserve(static_cast<std::size_t>(model.order()));
    for (int n = 1; n <= model.order(); ++n)
      grad_accum.emplace_back(Eigen::MatrixXd::Zero(model.factor(n).rows(), model.rank()));
    mttkrp_per_mode.assign(static_cast<std::size_t>(model.order()), 0.0);
  }

  /// Total fractional MTTKRPs across modes (the work counter traces report).
  [[nodiscard]] double mttkrp_equivalents() const {
    double total = 0.0;
    for (double v : mttkrp_per_mode) total += v;
    return total;
  }

  /// All-mode MTTKRP equivalents: the per-mode total normalized by N.
  [[nodiscard]] double all_mode_mttkrp() const {
    return mttkrp_equivalents() / static_cast<double>(model.order());
  }

  /// Counter bump done by every step, whether or not the update was applied.
  void advance(int mode, std::int64_t batch, std::int64_t fiber_total) {
    ++iteration;
    mttkrp_per_mode[static_cast<std::size_t>(mode - 1)] +=
        static_cast<double>(batch) / static_cast<double>(fiber_total);
    sampled_entries += batch * model.factor(mode).rows();
  }
};

/// Which mode a step touched and whether the computed update was finite. A
/// non-finite update is rejected (the factor keeps its previous value) so the
/// caller can stop with the last finite state intact.
struct StepReport {
  int mode = 0;
  bool finite = true;
};

namespace detail {

inline void check_step_inputs(const SolverState& state, const DenseTensor& t,
                              const std::vector<Regularizer>& regs, const char* who) {
  if (!state.model.conforms_to(t))
    throw dimension_error(std::string(who) + ": model shape does not match the tensor");
  if (static_cast<int>(regs.size()) != t.order())
    throw dimension_error(std::string(who) + ": expected " + std::to_string(t.order()) +
                          " regularizers, got " + std::to_string(regs.size()));
}

/// Entrywise Adagrad stepsizes eta / (b + accum)^(1/2 + epsilon). A zero
/// denominator (b = 0 with an all-zero gradient history) maps to stepsize 0
/// instead of dividing by zero; the corresponding step is zero anyway.
inline Eigen::MatrixXd ada_stepsizes(const Eigen::MatrixXd& accum, const StepSchedule& s) {
  if (s.kind != StepSchedule::Kind::adagrad)
    throw argument_error("ada_stepsizes needs an adagrad schedule");
  const double expo = 0.5 + s.epsilon;
  const bool plain_sqrt = s.epsilon == 0.0;
  Eigen::MatrixXd eta(accum.rows(), accum.cols());
  for (Eigen::Index c = 0; c < accum.cols(); ++c) {
    for (Eigen::Index r = 0; r < accum.rows(); ++r) {
      const double denom = s.b + accum(r, c);
      if (denom > 0.0)
        eta(r, c) = s.eta / (plain_sqrt ? std::sqrt(denom) : std::pow(denom, expo));
      else
        eta(r, c) = 0.0;
    }
  }
  return eta;
}

struct SampledBatch {
  int mode;
  std::int64_t fiber_total;
  std::vector<std::int64_t> fibers;
};

/// Draws the mode and fiber batch for one iteration. Batch sizes above the
/// mode's fiber count clamp to the full fiber set, which makes the gradient
/// coincide with the exact block gradient.
inline SampledBatch draw_batch(SolverState& state, const DenseTensor& t,
                               const BatchSchedule& batch) {
  SampledBatch out;
  out.mode = state.sampler.sample_mode();
  out.fiber_total = t.fiber_count(out.mode);
  const std::int64_t size =
      std::min(batch.size_at(state.iteration + 1, out.fiber_total), out.fiber_total);
  out.fibers = state.sampler.sample_fibers(out.mode, out.fiber_total, size);
  return out;
}

}  // namespace detail

/// One block-randomized proximal gradient step with the power-decay stepsize
/// alpha^(r) = alpha0 / r^beta, r = state.iteration + 1:
///   A_(n) <- prox(A_(n) - alpha' G, alpha'),
/// with alpha' the safeguarded stepsize. Only the sampled mode changes;
/// counters advance either way.
inline StepReport bras_step(SolverState& state, const DenseTensor& t,
                            const std::vector<Regularizer>& regs, const StepSchedule& schedule,
                            const BatchSchedule& batch, double safeguard_mu = 0.0) {
  if (schedule.kind != StepSchedule::Kind::power_decay)
    throw argument_error("bras_step needs a power_decay schedule");
  detail::check_step_inputs(state, t, regs, "bras_step");
  const double alpha =
      safeguarded_stepsize(schedule.alpha_at(state.iteration + 1), safeguard_mu);

  const auto drawn = detail::draw_batch(state, t, batch);
  const BlockGradient g = stochastic_block_gradient(t, state.model, drawn.mode, drawn.fibers);

  const Regularizer& reg = regs[static_cast<std::size_t>(drawn.mode - 1)];
  Eigen::MatrixXd updated = apply_prox(reg, state.model.factor(drawn.mode) - alpha * g.G, alpha);

  StepReport report{drawn.mode, updated.allFinite()};
  if (report.finite) state.model.factor(drawn.mode) = std::move(updated);
  state.advance(drawn.mode, static_cast<std::int64_t>(drawn.fibers.size()), drawn.fiber_total);
  return report;
}

/// One adaptive step. The squared gradient enters the accumulator before the
/// stepsizes are read off (standard Adagrad order), so a mode's first touch
/// already takes a normalized step and b = 0 never divides by zero. A
/// rejected (non-finite) update leaves factor and accumulator untouched.
/// Nonseparable prox kinds cannot take an entrywise stepsize; they get the
/// scalar mean of the entrywise values.
inline StepReport ada_step(SolverState& state, const DenseTensor& t,
                           const std::vector<Regularizer>& regs, const StepSchedule& schedule,
                           const BatchSchedule& batch, double safeguard_mu = 0.0) {
  if (schedule.kind != StepSchedule::Kind::adagrad)
    throw argument_error("ada_step needs an adagrad schedule");
  detail::check_step_inputs(state, t, regs, "ada_step");
  if (!(safeguard_mu >= 0.0)) throw argument_error("safeguard mu must be nonnegative");

  const auto drawn = detail::draw_batch(state, t, batch);
  const BlockGradient g = stochastic_block_gradient(t, state.model, drawn.mode, drawn.fibers);

  const std::size_t slot = static_cast<std::size_t>(drawn.mode - 1);
  const Regularizer& reg = regs[slot];
  Eigen::MatrixXd accum =
      (state.grad_accum[slot].array() + g.G.array().square()).matrix();
  Eigen::MatrixXd eta = detail::ada_stepsizes(accum, schedule);

  Eigen::MatrixXd updated;
  if (reg.separable()) {
    if (safeguard_mu > 0.0)
      eta = eta.unaryExpr(
          [safeguard_mu](double a) { return safeguarded_stepsize(a, safeguard_mu); });
    updated = apply_prox(reg, state.model.factor(drawn.mode) - eta.cwiseProduct(g.G), eta);
  } else {
    const double scalar = safeguarded_stepsize(eta.mean(), safeguard_mu);
    updated = apply_prox(reg, state.model.factor(drawn.mode) - scalar * g.G, scalar);
  }

  StepReport report{drawn.mode, updated.allFinite()};
  if (report.finite) {
    state.model.factor(drawn.mode) = std::move(updated);
    state.grad_accum[slot] = std::move(accum);
  }
  state.advance(drawn.mode, static_cast<std::int64_t>(drawn.fibers.size()), drawn.fiber_total);
  return report;
}

/// Exact unconstrained least-squares update of one factor,
///   A_(n) = X_(n)^T H (H^T H)^(-1),
/// via the Gram-Hadamard identity and a streaming MTTKRP. When the Gram's
/// condition estimate exceeds 1e12 a ridge of 1e-12 * trace/F is added
/// (disabled via regularize=false, which then reports a numerical error).
inline Eigen::MatrixXd als_update(const DenseTensor& t, const FactorModel& m, int mode,
                                  bool regularize = true) {
  detail::check_conformance(t, m, "als_update");
  Eigen::MatrixXd gram = kr_gram(m, mode);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success)
    throw numerical_error("als_update: Gram eigenvalue solve failed");
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  const bool ill = !(lmin > 0.0) || lmax / lmin > 1e12;
  if (ill) {
    if (!regularize) throw numerical_error("als_update: singular Khatri-Rao Gram");
    gram.diagonal().array() += 1e-12 * gram.trace() / static_cast<double>(m.rank());
  }

  const Eigen::MatrixXd mtt = full_mttkrp(t, m, mode);  // X_(n)^T H
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw numerical_error("als_update: Gram factorization failed");
  Eigen::MatrixXd a = ldlt.solve(mtt.transpose()).transpose();
  if (!a.allFinite()) throw numerical_error("als_update: non-finite solution");
  return a;
}

enum class Algorithm { bras, ada };
enum class RunStatus { finished, diverged };

struct RunResult {
  RunStatus status = RunStatus::finished;
  FactorModel model;
  std::vector<TraceRecord> trace;
  std::int64_t iterations = 0;
  std::string stop_reason;
};

/// Everything a run needs besides the data, the initialization, and the
/// stopping rule. `truth` (optional, non-owning) switches on per-mode MSE in
/// the trace. With real_timing=false the trace's wall_seconds column is
/// written as 0 so that traces are byte-identical across reruns; stopping on
/// max_wall_seconds always uses the real clock.
struct SolverOptions {
  Algorithm algorithm = Algorithm::bras;
  StepSchedule schedule = StepSchedule::power_decay(0.05, 1e-6);
  BatchSchedule batch = BatchSchedule::fixed(1);
  std::vector<double> mode_weights;  // empty = uniform
  double safeguard_mu = 0.0;
  std::uint64_t seed = 0;
  double trace_cadence = 1.0;  // emit when mttkrp_equivalents crosses a multiple
  bool real_timing = false;
  double divergence_ratio = 1e6;
  const FactorModel* truth = nullptr;
};

/// Runs BrasCPD or AdaCPD from `init` until the stopping rule fires or the
/// iterates diverge. Trace records are emitted at iteration 0, whenever
/// mttkrp_equivalents crosses a multiple of trace_cadence (at most one record
/// per iteration), and at termination. Divergence (a non-finite update, or
/// cost above divergence_ratio times the initial scale at a trace point) ends
/// the run with status=diverged and the last finite model; it is an outcome,
/// not an exception. Cost-based checks, including target_cost, happen only at
/// trace points.
inline RunResult run(const DenseTensor& t, FactorModel init, const std::vector<Regularizer>& regs,
                     const SolverOptions& opts, const StoppingRule& stopping,
                     const std::function<void(const TraceRecord&)>& sink = {}) {
  stopping.validate();
  if (t.order() < 3) throw argument_error("run: tensor order must be at least 3");
  if (!init.conforms_to(t)) throw dimension_error("run: initialization does not match the tensor");
  if (static_cast<int>(regs.size()) != t.order())
    throw dimension_error("run: expected " + std::to_string(t.order()) + " regularizers, got " +
                          std::to_string(regs.size()));
  if (!(opts.trace_cadence > 0.0)) throw argument_error("run: trace cadence must be positive");
  if (!(opts.divergence_ratio > 0.0))
    throw argument_error("run: divergence ratio must be positive");

  RunResult out;
  SolverState state(std::move(init), SamplerState(opts.seed, t.order(), opts.mode_weights));

  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&started] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  const auto emit = [&]() -> const TraceRecord& {
    TraceRecord rec;
    rec.iteration = state.iteration;
    rec.mttkrp_equivalents = state.mttkrp_equivalents();
    rec.all_mode_mttkrp = state.all_mode_mttkrp();
    rec.sampled_entries = state.sampled_entries;
    rec.wall_seconds = opts.real_timing ? elapsed() : 0.0;
    rec.cost = cost(t, state.model);
    if (opts.truth) {
      // A zero column (a legal transient under e.g. the nonneg prox) has no
      // defined MSE; record NaN for that mode instead of aborting the run.
      rec.mse_per_mode.resize(static_cast<std::size_t>(t.order()));
      for (int n = 1; n <= t.order(); ++n) {
        double value = std::numeric_limits<double>::quiet_NaN();
        try {
          value = mse(state.model, *opts.truth, n);
        } catch (const metric_error&) {
        }
        rec.mse_per_mode[static_cast<std::size_t>(n - 1)] = value;
      }
    }
    out.trace.push_back(std::move(rec));
    if (sink) sink(out.trace.back());
    return out.trace.back();
  };

  const auto finish = [&](RunStatus status, std::string reason) {
    out.status = status;
    out.stop_reason = std::move(reason);
    if (out.trace.back().iteration != state.iteration) emit();
    out.iterations = state.iteration;
    out.model = std::move(state.model);
    return std::move(out);
  };

  const double initial_cost = emit().cost;
  if (!std::isfinite(initial_cost)) return finish(RunStatus::diverged, "non-finite initial cost");
  if (stopping.target_cost && initial_cost <= *stopping.target_cost)
    return finish(RunStatus::finished, "target_cost");

  // Divergence scale: the initial cost, floored by the data's mean square so
  // an exact (zero-cost) initialization cannot make every later cost count as
  // a blow-up.
  double mean_square = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) mean_square += t.data()[i] * t.data()[i];
  mean_square /= static_cast<double>(t.size());
  const double blowup_at = opts.divergence_ratio * std::max(initial_cost, mean_square);

  std::int64_t next_mark = 1;
  while (true) {
    if (stopping.max_iterations && state.iteration >= *stopping.max_iterations)
      return finish(RunStatus::finished, "max_iterations");
    if (stopping.max_mttkrp_equivalents &&
        state.mttkrp_equivalents() >= *stopping.max_mttkrp_equivalents)
      return finish(RunStatus::finished, "max_mttkrp_equivalents");
    if (stopping.max_wall_seconds && elapsed() >= *stopping.max_wall_seconds)
      return finish(RunStatus::finished, "max_wall_seconds");

    const StepReport report =
        opts.algorithm == Algorithm::bras
            ? bras_step(state, t, regs, opts.schedule, opts.batch, opts.safeguard_mu)
            : ada_step(state, t, regs, opts.schedule, opts.batch, opts.safeguard_mu);
    if (!report.finite)
      return finish(RunStatus::diverged,
                    "non-finite update in mode " + std::to_string(report.mode));

    if (state.mttkrp_equivalents() >= opts.trace_cadence * static_cast<double>(next_mark)) {
      next_mark = static_cast<std::int64_t>(
                      std::floor(state.mttkrp_equivalents() / opts.trace_cadence)) +
                  1;
      const TraceRecord& rec = emit();
      if (!std::isfinite(rec.cost) || rec.cost > blowup_at)
        return finish(RunStatus::diverged, "cost exceeded " + std::to_string(opts.divergence_ratio) +
                                               "x the initial scale");
      if (stopping.target_cost && rec.cost <= *stopping.target_cost)
        return finish(RunStatus::finished, "target_cost");
    }
  }
}

}  // namespace bras
