#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bras/config.hpp"
#include "bras/errors.hpp"
#include "bras/experiment.hpp"
#include "bras/io.hpp"
#include "bras/synthetic.hpp"
#include "bras/verify.hpp"

namespace {

// Exit codes: 0 success, 1 divergence or failed checks, 2 bad input.
constexpr int exit_ok = 0;
constexpr int exit_failed = 1;
constexpr int exit_bad_input = 2;

int do_generate(const std::string& config_path, const std::string& out,
                std::optional<std::uint64_t> seed) {
  bras::GenerateConfig cfg = bras::GenerateConfig::from_file(config_path);
  if (seed) cfg.seed = *seed;

  bras::SyntheticSpec spec;
  spec.shape = cfg.shape;
  spec.rank = cfg.rank;
  spec.snr_db = cfg.snr_db;
  spec.seed = cfg.seed;
  spec.memory_limit_bytes = cfg.memory_limit_bytes;

  const bras::SyntheticInstance inst = bras::generate(spec);
  const std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);
  bras::save_tensor(inst.tensor, dir / "tensor.bin");
  bras::save_model(inst.truth, dir / "truth.bin");
  if (inst.clean) bras::save_tensor(*inst.clean, dir / "clean.bin");

  std::cout << "wrote " << (dir / "tensor.bin").string() << " (" << inst.tensor.size()
            << " entries) and " << (dir / "truth.bin").string();
  if (inst.clean) std::cout << " and " << (dir / "clean.bin").string();
  std::cout << "\n";
  return exit_ok;
}

int do_run(const std::string& config_path, const std::string& out,
           std::optional<std::int64_t> trials, std::optional<std::uint64_t> seed, int parallel) {
  bras::ExperimentConfig cfg = bras::ExperimentConfig::from_file(config_path);
  if (trials) {
    if (*trials < 1) throw bras::config_error("--trials must be at least 1");
    cfg.trials = *trials;
  }
  if (seed) cfg.seed = *seed;

  std::filesystem::path dir;
  if (!out.empty())
    dir = out;
  else if (cfg.out_dir)
    dir = *cfg.out_dir;
  else
    throw bras::config_error("no output directory: pass --out or set out_dir in the config");

  const bras::ExperimentSummary s = bras::run_experiment(cfg, dir, parallel);

  std::cout << s.trials << " trial" << (s.trials == 1 ? "" : "s") << ", " << s.diverged
            << " diverged\n";
  if (s.trials > s.diverged) {
    std::cout << "final cost: mean " << bras::detail::format_double(s.cost_mean) << ", median "
              << bras::detail::format_double(s.cost_median) << "\n";
    if (s.with_mse)
      std::cout << "final mse: mean " << bras::detail::format_double(s.mse_mean) << ", median "
                << bras::detail::format_double(s.mse_median) << "\n";
  }
  std::cout << "summary: " << (dir / "summary.csv").string() << "\n";
  return s.diverged > 0 ? exit_failed : exit_ok;
}

int do_verify(const std::string& suite, std::optional<std::uint64_t> seed) {
  bras::VerifyOptions opts;
  if (seed) opts.seed = *seed;
  const auto results = bras::run_verify(suite, opts);
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.suite << " (" << r.detail << ")\n";
    all_ok = all_ok && r.passed;
  }
  return all_ok ? exit_ok : exit_failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-randomized stochastic CPD experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::optional<std::int64_t> trials;
  std::optional<std::uint64_t> seed;
  int parallel = 1;
  std::string suite = "all";

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic tensor and its true factors");
  gen->add_option("--config", config_path, "config file (key = value lines)")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "override the config seed");

  CLI::App* run = app.add_subcommand("run", "run factorization trials and write traces");
  run->add_option("--config", config_path, "config file (key = value lines)")->required();
  run->add_option("--out", out, "output directory (overrides out_dir in the config)");
  run->add_option("--trials", trials, "override the number of trials");
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--parallel", parallel, "worker threads for independent trials")
      ->check(CLI::PositiveNumber);

  CLI::App* verify = app.add_subcommand("verify", "run built-in self-checks");
  verify->add_option("--suite", suite,
                     "index, sampling, unbiasedness, gradient, prox, metrics, or all");
  verify->add_option("--seed", seed, "seed for the randomized checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return do_generate(config_path, out, seed);
    if (run->parsed()) return do_run(config_path, out, trials, seed, parallel);
    return do_verify(suite, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_bad_input;
  }
}
