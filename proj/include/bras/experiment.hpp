#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bras/config.hpp"
#include "bras/errors.hpp"
#include "bras/io.hpp"
#include "bras/metrics.hpp"
#include "bras/rng.hpp"
#include "bras/solver.hpp"
#include "bras/synthetic.hpp"
#include "bras/version.hpp"

namespace bras {

namespace detail {

/// Shortest round-trip decimal form; NaN prints as "nan". All numeric output
/// goes through here so traces are byte-stable across platforms.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

// Seed tree: one split per trial, then one split per purpose within a trial,
// so trials are independent of each other and of the trial count.
inline constexpr std::uint64_t seed_purpose_data = 1;
inline constexpr std::uint64_t seed_purpose_init = 2;
inline constexpr std::uint64_t seed_purpose_solver = 3;

inline std::uint64_t trial_seed(std::uint64_t master, std::int64_t trial_index_zero_based) {
  return split_seed(master, static_cast<std::uint64_t>(trial_index_zero_based) + 1);
}

/// The shared '#' preamble for all text outputs: artifact version, generator
/// identity, master seed, solver setup, and a full echo of the config file.
/// seed/trials echo the effective values so command-line overrides are
/// visible in the artifact.
inline void write_header_block(std::ostream& os, const ExperimentConfig& cfg) {
  os << "# brascpd " << artifact_version << "\n";
  os << "# prng " << prng_identity << "\n";
  os << "# master_seed " << cfg.seed << "\n";
  os << "# algorithm " << (cfg.algorithm == Algorithm::bras ? "bras" : "ada") << "\n";
  if (cfg.schedule.kind == StepSchedule::Kind::power_decay) {
    os << "# schedule power_decay alpha0=" << format_double(cfg.schedule.alpha0)
       << " beta=" << format_double(cfg.schedule.beta)
       << " robbins_monro=" << (cfg.schedule.robbins_monro() ? "true" : "false") << "\n";
  } else {
    os << "# schedule adagrad eta=" << format_double(cfg.schedule.eta)
       << " b=" << format_double(cfg.schedule.b)
       << " epsilon=" << format_double(cfg.schedule.epsilon) << "\n";
  }
  for (const auto& e : cfg.source.entries()) {
    os << "# config " << e.key << " = ";
    if (e.key == "seed")
      os << cfg.seed;
    else if (e.key == "trials")
      os << cfg.trials;
    else
      os << e.value;
    os << "\n";
  }
}

inline void write_trace_file(const std::filesystem::path& path, const ExperimentConfig& cfg,
                             std::int64_t trial_index_one_based, std::uint64_t seed,
                             const RunResult& res, int order, bool with_mse) {
  std::ofstream os(path, std::ios::binary);  // binary: no newline translation
  if (!os) throw resource_error("cannot write trace file " + path.string());
  write_header_block(os, cfg);
  os << "# trial " << trial_index_one_based << " of " << cfg.trials << "\n";
  os << "# trial_seed " << seed << "\n";
  os << "# status " << (res.status == RunStatus::finished ? "finished" : "diverged")
     << " reason=" << res.stop_reason << "\n";

  os << "iteration,mttkrp_eq,all_mode_mttkrp_eq,sampled_entries,wall_seconds,cost";
  if (with_mse) {
    for (int n = 1; n <= order; ++n) os << ",mse_mode_" << n;
    os << ",mse_avg";
  }
  os << "\n";
  for (const auto& rec : res.trace) {
    os << rec.iteration << ',' << format_double(rec.mttkrp_equivalents) << ','
       << format_double(rec.all_mode_mttkrp) << ',' << rec.sampled_entries << ','
       << format_double(rec.wall_seconds) << ',' << format_double(rec.cost);
    if (with_mse) {
      for (double v : rec.mse_per_mode) os << ',' << format_double(v);
      os << ',' << format_double(rec.mse_avg());
    }
    os << "\n";
  }
  os.close();
  if (!os) throw resource_error("failed writing trace file " + path.string());
}

}  // namespace detail

/// Final state of one trial as reported in summary.csv. Diverged trials keep
/// their counters but carry NaN metrics.
struct TrialRow {
  std::int64_t trial = 0;  // 1-based
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::finished;
  std::string stop_reason;
  std::int64_t iterations = 0;
  double mttkrp_eq = 0.0;
  double cost = std::numeric_limits<double>::quiet_NaN();
  double mse_avg = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentSummary {
  std::int64_t trials = 0;
  std::int64_t diverged = 0;
  bool with_mse = false;
  std::vector<TrialRow> rows;
  // Aggregates over trials that finished; NaN when every trial diverged.
  double cost_mean = std::numeric_limits<double>::quiet_NaN();
  double cost_median = std::numeric_limits<double>::quiet_NaN();
  double mse_mean = std::numeric_limits<double>::quiet_NaN();
  double mse_median = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void write_summary_file(const std::filesystem::path& path, const ExperimentConfig& cfg,
                               const ExperimentSummary& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw resource_error("cannot write summary file " + path.string());
  write_header_block(os, cfg);
  os << "# trials " << s.trials << "\n";
  os << "# diverged_trials " << s.diverged << "\n";
  os << "trial,seed,status,iterations,mttkrp_eq,cost,mse_avg\n";
  for (const auto& r : s.rows) {
    os << r.trial << ',' << r.seed << ','
       << (r.status == RunStatus::finished ? "finished" : "diverged") << ',' << r.iterations << ','
       << format_double(r.mttkrp_eq) << ',' << format_double(r.cost) << ','
       << format_double(r.mse_avg) << "\n";
  }
  os << "mean,,,,," << format_double(s.cost_mean) << ',' << format_double(s.mse_mean) << "\n";
  os << "median,,,,," << format_double(s.cost_median) << ',' << format_double(s.mse_median)
     << "\n";
  os.close();
  if (!os) throw resource_error("failed writing summary file " + path.string());
}

}  // namespace detail

/// Runs cfg.trials independent trials, writing out_dir/trial_<k>.csv per
/// trial and out_dir/summary.csv at the end. Trial k (1-based) derives all
/// its randomness from split_seed(master, k), so results are reproducible
/// per trial and independent of `parallel`. A tensor_file is loaded once and
/// shared; synthetic instances are regenerated per trial from the trial's
/// data stream. Ground-truth MSE is reported only when the fitted rank
/// matches the synthetic rank. Divergence is recorded, never thrown.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                        const std::filesystem::path& out_dir, int parallel = 1) {
  if (parallel < 1) throw argument_error("parallel must be at least 1");
  std::filesystem::create_directories(out_dir);

  std::optional<DenseTensor> shared_tensor;
  if (cfg.tensor_file) shared_tensor.emplace(load_tensor(*cfg.tensor_file));

  std::optional<FactorModel> shared_init;
  if (cfg.init_model) {
    shared_init.emplace(load_model(*cfg.init_model));
    if (shared_init->rank() != cfg.rank)
      throw config_error("init_model has rank " + std::to_string(shared_init->rank()) +
                         ", config rank is " + std::to_string(cfg.rank));
  }

  const bool with_mse = cfg.synthetic_shape && cfg.synthetic_rank == cfg.rank;

  ExperimentSummary summary;
  summary.trials = cfg.trials;
  summary.with_mse = with_mse;
  summary.rows.resize(static_cast<std::size_t>(cfg.trials));

  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(cfg.trials));
  std::atomic<std::int64_t> next{0};

  const auto run_trial = [&](std::int64_t k) {  // k is 0-based
    const std::uint64_t tseed = detail::trial_seed(cfg.seed, k);

    const DenseTensor* tensor = nullptr;
    std::optional<SyntheticInstance> instance;
    if (cfg.synthetic_shape) {
      SyntheticSpec spec;
      spec.shape = *cfg.synthetic_shape;
      spec.rank = cfg.synthetic_rank;
      spec.snr_db = cfg.snr_db;
      spec.seed = split_seed(tseed, detail::seed_purpose_data);
      spec.memory_limit_bytes = cfg.memory_limit_bytes;
      instance.emplace(generate(spec));
      tensor = &instance->tensor;
    } else {
      tensor = &*shared_tensor;
    }

    FactorModel init = [&] {
      if (shared_init) {
        if (!shared_init->conforms_to(*tensor))
          throw dimension_error("init_model does not match the tensor dimensions");
        return *shared_init;
      }
      Rng rng(split_seed(tseed, detail::seed_purpose_init));
      return FactorModel::random_uniform(tensor->shape(), cfg.rank, rng);
    }();

    SolverOptions opts;
    opts.algorithm = cfg.algorithm;
    opts.schedule = cfg.schedule;
    opts.batch = cfg.batch;
    opts.safeguard_mu = cfg.safeguard_mu;
    opts.seed = split_seed(tseed, detail::seed_purpose_solver);
    opts.trace_cadence = cfg.trace_cadence;
    opts.real_timing = cfg.real_timing;
    if (with_mse) opts.truth = &instance->truth;

    const RunResult res =
        run(*tensor, std::move(init), cfg.regularizers_for(tensor->order()), opts, cfg.stopping);

    detail::write_trace_file(out_dir / ("trial_" + std::to_string(k + 1) + ".csv"), cfg, k + 1,
                             tseed, res, tensor->order(), with_mse);

    TrialRow row;
    row.trial = k + 1;
    row.seed = tseed;
    row.status = res.status;
    row.stop_reason = res.stop_reason;
    row.iterations = res.iterations;
    row.mttkrp_eq = res.trace.empty() ? 0.0 : res.trace.back().mttkrp_equivalents;
    if (res.status == RunStatus::finished && !res.trace.empty()) {
      row.cost = res.trace.back().cost;
      if (with_mse) row.mse_avg = res.trace.back().mse_avg();
    }
    summary.rows[static_cast<std::size_t>(k)] = std::move(row);
  };

  const auto worker = [&] {
    while (true) {
      const std::int64_t k = next.fetch_add(1);
      if (k >= cfg.trials) break;
      try {
        run_trial(k);
      } catch (...) {
        failures[static_cast<std::size_t>(k)] = std::current_exception();
      }
    }
  };

  const int threads = static_cast<int>(std::min<std::int64_t>(parallel, cfg.trials));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  std::vector<double> costs;
  std::vector<double> mses;
  for (const auto& r : summary.rows) {
    if (r.status != RunStatus::finished) {
      ++summary.diverged;
      continue;
    }
    costs.push_back(r.cost);
    if (with_mse) mses.push_back(r.mse_avg);
  }
  summary.cost_mean = detail::mean_of(costs);
  summary.cost_median = detail::median_of(costs);
  summary.mse_mean = detail::mean_of(mses);
  summary.mse_median = detail::median_of(mses);

  detail::write_summary_file(out_dir / "summary.csv", cfg, summary);
  return summary;
}

}  // namespace bras
