#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bras/config.hpp"
#include "bras/experiment.hpp"
#include "bras/metrics.hpp"
#include "bras/rng.hpp"
#include "bras/synthetic.hpp"
#include "bras/verify.hpp"
#include "catch2/catch_amalgamated.hpp"

namespace {

using namespace bras;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("bras_cfg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

const char* base_config =
    "synthetic_shape = 8x7x6\n"
    "synthetic_rank = 2\n"
    "rank = 2\n"
    "algorithm = bras\n"
    "batch = 4\n"
    "alpha0 = 0.1\n"
    "max_iterations = 60\n"
    "seed = 99\n"
    "trials = 2\n";

}  // namespace

TEST_CASE("key=value parsing") {
  SECTION("values, comments, whitespace, CRLF") {
    const auto kv = KeyValueFile::parse_text(
        "# comment line\n"
        "\n"
        "  alpha  =  0.5  \n"
        "name=plain\r\n"
        "path = /tmp/x y.bin\n",
        "demo.cfg");
    CHECK(kv.origin() == "demo.cfg");
    REQUIRE(kv.entries().size() == 3);
    CHECK(kv.entries()[0].line == 3);
    CHECK(*kv.get_double("alpha") == 0.5);
    CHECK(*kv.get_string("name") == "plain");
    CHECK(*kv.get_string("path") == "/tmp/x y.bin");
    CHECK(!kv.get_string("missing"));
    kv.reject_unknown();
  }

  SECTION("diagnostics name origin and line") {
    CHECK_THROWS_MATCHES(KeyValueFile::parse_text("a = 1\nbroken line\n", "f.cfg"), config_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("f.cfg:2")));
    CHECK_THROWS_MATCHES(
        KeyValueFile::parse_text("x = 1\ny = 2\nx = 3\n", "f.cfg"), config_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("f.cfg:3") &&
                                        Catch::Matchers::ContainsSubstring("duplicate") &&
                                        Catch::Matchers::ContainsSubstring("line 1")));
    CHECK_THROWS_AS(KeyValueFile::parse_text("= 1\n"), config_error);
    CHECK_THROWS_AS(KeyValueFile::parse_text("k =\n"), config_error);
  }

  SECTION("typed getters reject junk with context") {
    const auto kv = KeyValueFile::parse_text("n = twelve\nx = 1.5.2\n", "g.cfg");
    CHECK_THROWS_MATCHES(kv.get_int("n"), config_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("g.cfg:1") &&
                             Catch::Matchers::ContainsSubstring("twelve")));
    CHECK_THROWS_AS(kv.get_double("x"), config_error);
  }

  SECTION("unconsumed keys are flagged") {
    const auto kv = KeyValueFile::parse_text("good = 1\ntypo_key = 2\n", "h.cfg");
    (void)kv.get_int("good");
    CHECK_THROWS_MATCHES(kv.reject_unknown(), config_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("h.cfg:2") &&
                             Catch::Matchers::ContainsSubstring("typo_key")));
  }

  SECTION("missing file") {
    CHECK_THROWS_AS(KeyValueFile::parse_file("/nonexistent/nowhere.cfg"), resource_error);
  }
}

TEST_CASE("experiment config") {
  SECTION("full ada config") {
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
        "synthetic_shape = 50x40x30\n"
        "synthetic_rank = 5\n"
        "snr_db = 20\n"
        "rank = 5\n"
        "algorithm = ada\n"
        "eta = 0.8\n"
        "b = 1e-4\n"
        "epsilon = 0.1\n"
        "batch = 18\n"
        "batch_kind = growing\n"
        "batch_growth_epsilon = 0.2\n"
        "safeguard_mu = 0.5\n"
        "reg = nonneg\n"
        "reg_mode_2 = l1:0.25\n"
        "seed = 7\n"
        "trials = 3\n"
        "max_iterations = 100\n"
        "max_mttkrp = 40\n"
        "trace_cadence = 0.5\n"
        "timing = real\n"
        "out_dir = /tmp/somewhere\n"));
    CHECK(cfg.synthetic_shape == std::vector<std::int64_t>{50, 40, 30});
    CHECK(cfg.synthetic_rank == 5);
    CHECK(cfg.snr_db == 20.0);
    CHECK(cfg.rank == 5);
    CHECK(cfg.algorithm == Algorithm::ada);
    CHECK(cfg.schedule.kind == StepSchedule::Kind::adagrad);
    CHECK(cfg.schedule.eta == 0.8);
    CHECK(cfg.schedule.b == 1e-4);
    CHECK(cfg.schedule.epsilon == 0.1);
    CHECK(cfg.batch.size_at(1, 1000) >= 18);
    CHECK(cfg.safeguard_mu == 0.5);
    CHECK(cfg.default_reg.kind == Regularizer::Kind::nonneg);
    REQUIRE(cfg.mode_regs.count(2) == 1);
    CHECK(cfg.mode_regs.at(2).kind == Regularizer::Kind::l1);
    CHECK(cfg.seed == 7);
    CHECK(cfg.trials == 3);
    CHECK(*cfg.stopping.max_iterations == 100);
    CHECK(*cfg.stopping.max_mttkrp_equivalents == 40.0);
    CHECK(cfg.trace_cadence == 0.5);
    CHECK(cfg.real_timing);
    CHECK(*cfg.out_dir == "/tmp/somewhere");

    const auto regs = cfg.regularizers_for(3);
    CHECK(regs[0].kind == Regularizer::Kind::nonneg);
    CHECK(regs[1].kind == Regularizer::Kind::l1);
    CHECK(regs[2].kind == Regularizer::Kind::nonneg);
    CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValueFile::parse_text(
                        std::string(base_config) + "reg_mode_7 = l1:0.5\n"))
                        .regularizers_for(3),
                    config_error);
  }

  SECTION("bras defaults") {
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(base_config));
    CHECK(cfg.algorithm == Algorithm::bras);
    CHECK(cfg.schedule.kind == StepSchedule::Kind::power_decay);
    CHECK(cfg.schedule.alpha0 == 0.1);
    CHECK(cfg.schedule.beta == 1e-6);
    CHECK(!cfg.schedule.robbins_monro());
    CHECK(cfg.batch.size_at(5, 1000) == 4);
    CHECK(cfg.default_reg.kind == Regularizer::Kind::none);
    CHECK(cfg.trace_cadence == 1.0);
    CHECK(!cfg.real_timing);
    CHECK(!cfg.snr_db);
  }

  SECTION("rejections") {
    const auto wants = [](const char* text, const char* needle) {
      CHECK_THROWS_MATCHES(ExperimentConfig::from_kv(KeyValueFile::parse_text(text)),
                           config_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring(needle)));
    };
    // cross-algorithm schedule keys
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\n"
          "batch = 1\neta = 1\nmax_iterations = 5\n",
          "eta");
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = ada\n"
          "batch = 1\nalpha0 = 0.1\nmax_iterations = 5\n",
          "alpha0");
    // instance source
    wants("rank = 2\nalgorithm = bras\nbatch = 1\nmax_iterations = 5\n", "tensor_file");
    wants("tensor_file = a.bin\nsynthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\n"
          "algorithm = bras\nbatch = 1\nmax_iterations = 5\n",
          "not both");
    wants("tensor_file = a.bin\nsnr_db = 10\nrank = 2\nalgorithm = bras\nbatch = 1\n"
          "max_iterations = 5\n",
          "snr_db");
    wants("synthetic_shape = 4x4x4\nrank = 2\nalgorithm = bras\nbatch = 1\nmax_iterations = 5\n",
          "synthetic_rank");
    wants("synthetic_shape = 4xx4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\nbatch = 1\n"
          "max_iterations = 5\n",
          "100x100x100");
    // required scalars and bounds
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nalgorithm = bras\nbatch = 1\n"
          "max_iterations = 5\n",
          "rank");
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nbatch = 1\n"
          "max_iterations = 5\n",
          "algorithm");
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\n"
          "max_iterations = 5\n",
          "batch");
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\nbatch = 1\n",
          "max_iterations");
    wants((std::string(base_config) + "trials = 0\n").c_str(), "duplicate");
    wants("synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\nbatch = 1\n"
          "max_iterations = 5\ntrials = 0\n",
          "trials");
    wants((std::string(base_config) + "timing = maybe\n").c_str(), "timing");
    wants((std::string(base_config) + "trace_cadence = 0\n").c_str(), "trace_cadence");
    wants((std::string(base_config) + "batch_kind = growing\n").c_str(),
          "batch_growth_epsilon");
    wants((std::string(base_config) + "batch_growth_epsilon = 0.5\n").c_str(),
          "batch_growth_epsilon");
    wants((std::string(base_config) + "reg = unimodal\n").c_str(), "unimodal");
    wants((std::string(base_config) + "reg_mode_0 = nonneg\n").c_str(), "reg_mode_0");
    wants((std::string(base_config) + "mystery = 1\n").c_str(), "mystery");
  }

  SECTION("generate config") {
    const auto cfg = GenerateConfig::from_kv(KeyValueFile::parse_text(
        "synthetic_shape = 10x11x12\nsynthetic_rank = 3\nsnr_db = 25\nseed = 4\n"));
    CHECK(cfg.shape == std::vector<std::int64_t>{10, 11, 12});
    CHECK(cfg.rank == 3);
    CHECK(cfg.snr_db == 25.0);
    CHECK(cfg.seed == 4);
    CHECK_THROWS_AS(
        GenerateConfig::from_kv(KeyValueFile::parse_text("synthetic_rank = 3\n")),
        config_error);
    CHECK_THROWS_AS(GenerateConfig::from_kv(KeyValueFile::parse_text(
                        "synthetic_shape = 4x4x4\nsynthetic_rank = 3\nrank = 3\n")),
                    config_error);
  }
}

TEST_CASE("experiment runs") {
  SECTION("trace and summary artifacts") {
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(base_config));
    TempDir dir;
    const auto summary = run_experiment(cfg, dir.path);

    REQUIRE(summary.trials == 2);
    CHECK(summary.diverged == 0);
    CHECK(summary.with_mse);
    REQUIRE(summary.rows.size() == 2);
    CHECK(summary.rows[0].trial == 1);
    CHECK(summary.rows[0].seed == split_seed(99, 1));
    CHECK(summary.rows[1].seed == split_seed(99, 2));
    CHECK(summary.rows[0].status == RunStatus::finished);
    CHECK(summary.rows[0].iterations == 60);
    CHECK(std::isfinite(summary.cost_mean));
    CHECK(std::isfinite(summary.mse_median));

    const std::string trace = slurp(dir.path / "trial_1.csv");
    const auto tl = lines_of(trace);
    CHECK(tl[0] == "# brascpd 0.1.0");
    CHECK(tl[1] == std::string("# prng ") + prng_identity);
    CHECK(tl[2] == "# master_seed 99");
    CHECK(tl[3] == "# algorithm bras");
    CHECK(tl[4] == "# schedule power_decay alpha0=0.1 beta=1e-06 robbins_monro=false");

    std::size_t header_row = 0;
    for (std::size_t i = 0; i < tl.size(); ++i)
      if (tl[i].rfind("# ", 0) != 0) {
        header_row = i;
        break;
      }
    CHECK(tl[header_row] ==
          "iteration,mttkrp_eq,all_mode_mttkrp_eq,sampled_entries,wall_seconds,cost,"
          "mse_mode_1,mse_mode_2,mse_mode_3,mse_avg");
    REQUIRE(tl.size() > header_row + 2);
    CHECK(tl[header_row + 1].rfind("0,0,0,0,0,", 0) == 0);
    // echo of every config line is present
    CHECK(trace.find("# config synthetic_shape = 8x7x6\n") != std::string::npos);
    CHECK(trace.find("# config seed = 99\n") != std::string::npos);
    CHECK(trace.find("# trial 1 of 2\n") != std::string::npos);
    CHECK(trace.find("# status finished reason=max_iterations\n") != std::string::npos);

    const std::string sum = slurp(dir.path / "summary.csv");
    CHECK(sum.find("# trials 2\n") != std::string::npos);
    CHECK(sum.find("# diverged_trials 0\n") != std::string::npos);
    CHECK(sum.find("trial,seed,status,iterations,mttkrp_eq,cost,mse_avg\n") != std::string::npos);
    const auto sl = lines_of(sum);
    CHECK(sl[sl.size() - 2].rfind("mean,", 0) == 0);
    CHECK(sl[sl.size() - 1].rfind("median,", 0) == 0);

    // reruns are byte-identical, serial or parallel
    TempDir rerun;
    run_experiment(cfg, rerun.path);
    CHECK(slurp(rerun.path / "trial_1.csv") == trace);
    CHECK(slurp(rerun.path / "trial_2.csv") == slurp(dir.path / "trial_2.csv"));
    CHECK(slurp(rerun.path / "summary.csv") == sum);

    TempDir par;
    run_experiment(cfg, par.path, 2);
    CHECK(slurp(par.path / "trial_1.csv") == trace);
    CHECK(slurp(par.path / "trial_2.csv") == slurp(dir.path / "trial_2.csv"));
    CHECK(slurp(par.path / "summary.csv") == sum);
  }

  SECTION("zero-iteration run reports the initialization") {
    auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
        "synthetic_shape = 6x5x4\n"
        "synthetic_rank = 2\n"
        "rank = 2\n"
        "algorithm = ada\n"
        "batch = 2\n"
        "max_iterations = 0\n"
        "seed = 123\n"));
    TempDir dir;
    const auto summary = run_experiment(cfg, dir.path);
    REQUIRE(summary.trials == 1);
    REQUIRE(summary.rows[0].iterations == 0);

    // reproduce the trial's instance and init from the seed tree
    const std::uint64_t tseed = split_seed(123, 1);
    SyntheticSpec spec;
    spec.shape = {6, 5, 4};
    spec.rank = 2;
    spec.seed = split_seed(tseed, 1);
    const auto inst = generate(spec);
    Rng init_rng(split_seed(tseed, 2));
    const auto init = FactorModel::random_uniform(spec.shape, 2, init_rng);

    CHECK(summary.rows[0].cost == cost(inst.tensor, init));
    double acc = 0.0;
    for (const double v : mse_all_modes(init, inst.truth)) acc += v;
    CHECK(summary.rows[0].mse_avg == acc / 3.0);
  }

  SECTION("file-backed tensors skip mse columns") {
    TempDir dir;
    SyntheticSpec spec;
    spec.shape = {7, 6, 5};
    spec.rank = 2;
    spec.seed = 5;
    save_tensor(generate(spec).tensor, dir.path / "t.bin");

    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
        "tensor_file = " + (dir.path / "t.bin").string() + "\n" +
        "rank = 2\nalgorithm = bras\nbatch = 3\nalpha0 = 0.05\nmax_iterations = 20\nseed = 11\n"));
    const auto summary = run_experiment(cfg, dir.path / "out");
    CHECK(!summary.with_mse);
    CHECK(std::isfinite(summary.cost_median));
    CHECK(std::isnan(summary.mse_median));

    const auto tl = lines_of(slurp(dir.path / "out" / "trial_1.csv"));
    for (const auto& line : tl)
      if (line.rfind("iteration,", 0) == 0)
        CHECK(line == "iteration,mttkrp_eq,all_mode_mttkrp_eq,sampled_entries,wall_seconds,cost");
  }

  SECTION("diverged trials become nan rows") {
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
        "synthetic_shape = 10x9x8\n"
        "synthetic_rank = 2\n"
        "rank = 2\n"
        "algorithm = bras\n"
        "alpha0 = 1e9\n"
        "batch = 4\n"
        "max_iterations = 500\n"
        "trials = 2\n"
        "seed = 3\n"));
    TempDir dir;
    const auto summary = run_experiment(cfg, dir.path);
    REQUIRE(summary.diverged == 2);
    CHECK(std::isnan(summary.rows[0].cost));
    CHECK(std::isnan(summary.cost_mean));
    CHECK(std::isnan(summary.cost_median));

    const std::string sum = slurp(dir.path / "summary.csv");
    CHECK(sum.find("# diverged_trials 2\n") != std::string::npos);
    CHECK(sum.find(",diverged,") != std::string::npos);
    CHECK(sum.find(",nan,nan\n") != std::string::npos);
  }

  SECTION("init_model rank must match") {
    TempDir dir;
    Rng rng(1);
    save_model(FactorModel::random_uniform({4, 4, 4}, 3, rng), dir.path / "m.bin");
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(
        "synthetic_shape = 4x4x4\nsynthetic_rank = 2\nrank = 2\nalgorithm = bras\nbatch = 1\n"
        "max_iterations = 5\ninit_model = " +
        (dir.path / "m.bin").string() + "\n"));
    CHECK_THROWS_AS(run_experiment(cfg, dir.path / "out"), config_error);
  }

  SECTION("parallel bound validation") {
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_text(base_config));
    TempDir dir;
    CHECK_THROWS_AS(run_experiment(cfg, dir.path, 0), argument_error);
  }
}

TEST_CASE("verify suites") {
  SECTION("all pass with the default options") {
    const auto results = run_verify();
    REQUIRE(results.size() == 6);
    for (const auto& r : results) {
      INFO(r.suite << ": " << r.detail);
      CHECK(r.passed);
    }
  }

  SECTION("selector picks one suite") {
    const auto results = run_verify("prox");
    REQUIRE(results.size() == 1);
    CHECK(results[0].suite == "prox");
    CHECK(results[0].passed);
    CHECK_THROWS_AS(run_verify("bogus"), config_error);
  }

  SECTION("corrupted gradients trip the unbiasedness suite") {
    VerifyOptions opts;
    opts.gradient_scale = 0.9;
    const auto results = run_verify("unbiasedness", opts);
    REQUIRE(results.size() == 1);
    CHECK(!results[0].passed);
  }

  SECTION("seeds change the draws, not the verdict") {
    VerifyOptions opts;
    opts.seed = 9001;
    for (const auto& r : run_verify("all", opts)) {
      INFO(r.suite << ": " << r.detail);
      CHECK(r.passed);
    }
  }
}
