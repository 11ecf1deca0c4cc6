#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/prox.hpp"
#include "bras/sampling.hpp"
#include "bras/solver.hpp"

namespace bras {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Flat key=value config text. Blank lines and lines starting with '#' are
/// skipped; keys are unique; every diagnostic carries origin and line number.
/// Typed getters record which keys were consumed so a final reject_unknown()
/// can flag typos.
class KeyValueFile {
 public:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };

  static KeyValueFile parse_text(std::string_view text, std::string origin = "<inline>") {
    KeyValueFile kv;
    kv.origin_ = std::move(origin);
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = text.find('\n', pos);
      std::string_view line =
          text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      line = detail::trim(line);
      if (line.empty() || line.front() == '#') continue;

      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos)
        throw config_error(kv.origin_ + ":" + std::to_string(line_no) +
                           ": expected key = value, got \"" + std::string(line) + "\"");
      const std::string key{detail::trim(line.substr(0, eq))};
      const std::string value{detail::trim(line.substr(eq + 1))};
      if (key.empty())
        throw config_error(kv.origin_ + ":" + std::to_string(line_no) + ": empty key");
      if (value.empty())
        throw config_error(kv.origin_ + ":" + std::to_string(line_no) + ": empty value for \"" +
                           key + "\"");
      if (const auto it = kv.index_.find(key); it != kv.index_.end())
        throw config_error(kv.origin_ + ":" + std::to_string(line_no) + ": duplicate key \"" +
                           key + "\" (first on line " +
                           std::to_string(kv.entries_[it->second].line) + ")");
      kv.index_.emplace(key, kv.entries_.size());
      kv.entries_.push_back({key, value, line_no});
    }
    return kv;
  }

  static KeyValueFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw resource_error("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path.string());
  }

  [[nodiscard]] const std::string& origin() const { return origin_; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] bool has(const std::string& key) const { return index_.count(key) != 0; }

  [[nodiscard]] std::optional<std::string> get_string(const std::string& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    consumed_.insert(key);
    return entries_[it->second].value;
  }

  [[nodiscard]] std::optional<std::int64_t> get_int(const std::string& key) const {
    const auto raw = get_string(key);
    if (!raw) return std::nullopt;
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc{} || ptr != raw->data() + raw->size())
      fail(key, "expected an integer, got \"" + *raw + "\"");
    return v;
  }

  [[nodiscard]] std::optional<std::uint64_t> get_uint(const std::string& key) const {
    const auto raw = get_string(key);
    if (!raw) return std::nullopt;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc{} || ptr != raw->data() + raw->size())
      fail(key, "expected a nonnegative integer, got \"" + *raw + "\"");
    return v;
  }

  [[nodiscard]] std::optional<double> get_double(const std::string& key) const {
    const auto raw = get_string(key);
    if (!raw) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc{} || ptr != raw->data() + raw->size())
      fail(key, "expected a number, got \"" + *raw + "\"");
    return v;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const auto it = index_.find(key);
    const std::string where =
        it == index_.end() ? origin_
                           : origin_ + ":" + std::to_string(entries_[it->second].line);
    throw config_error(where + ": " + key + ": " + msg);
  }

  /// Rejects keys that no getter consumed; catches typos and stale keys.
  void reject_unknown() const {
    for (const auto& e : entries_)
      if (consumed_.count(e.key) == 0)
        throw config_error(origin_ + ":" + std::to_string(e.line) + ": unknown key \"" + e.key +
                           "\"");
  }

 private:
  std::string origin_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  mutable std::set<std::string> consumed_;
};

namespace detail {

inline std::vector<std::int64_t> parse_shape(const KeyValueFile& kv, const std::string& key,
                                             const std::string& raw) {
  std::vector<std::int64_t> shape;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    const std::size_t x = raw.find('x', pos);
    const std::string part = raw.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size() || v < 2)
      kv.fail(key, "expected dimensions like 100x100x100 with entries >= 2, got \"" + raw + "\"");
    shape.push_back(v);
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return shape;
}

inline Regularizer parse_reg(const KeyValueFile& kv, const std::string& key,
                             const std::string& raw) {
  try {
    return Regularizer::parse(raw);
  } catch (const config_error& e) {
    kv.fail(key, e.what());
  }
}

}  // namespace detail

/// One experiment: instance source, solver setup, per-mode regularizers,
/// stopping rule, and trial bookkeeping. Built from a KeyValueFile; every
/// violation is a config_error naming origin, line, and key.
struct ExperimentConfig {
  // instance source: exactly one of the two
  std::optional<std::string> tensor_file;
  std::optional<std::vector<std::int64_t>> synthetic_shape;
  std::int64_t synthetic_rank = 0;
  std::optional<double> snr_db;
  std::int64_t memory_limit_bytes = std::int64_t{8} << 30;

  std::int64_t rank = 0;
  std::optional<std::string> init_model;

  Algorithm algorithm = Algorithm::bras;
  StepSchedule schedule = StepSchedule::power_decay(0.05, 1e-6);
  BatchSchedule batch = BatchSchedule::fixed(1);
  double safeguard_mu = 0.0;
  Regularizer default_reg;  // none
  std::map<int, Regularizer> mode_regs;

  std::uint64_t seed = 0;
  std::int64_t trials = 1;
  StoppingRule stopping;
  double trace_cadence = 1.0;
  bool real_timing = false;
  std::optional<std::string> out_dir;

  KeyValueFile source;  // retained for the config echo in output headers

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueFile::parse_file(path));
  }

  static ExperimentConfig from_kv(KeyValueFile kv) {
    ExperimentConfig cfg;

    cfg.tensor_file = kv.get_string("tensor_file");
    if (const auto raw = kv.get_string("synthetic_shape"))
      cfg.synthetic_shape = detail::parse_shape(kv, "synthetic_shape", *raw);
    if (cfg.tensor_file && cfg.synthetic_shape)
      kv.fail("tensor_file", "give either tensor_file or synthetic_shape, not both");
    if (!cfg.tensor_file && !cfg.synthetic_shape)
      throw config_error(kv.origin() + ": one of tensor_file or synthetic_shape is required");

    if (const auto v = kv.get_int("synthetic_rank")) {
      if (!cfg.synthetic_shape) kv.fail("synthetic_rank", "only applies to synthetic_shape");
      if (*v < 1) kv.fail("synthetic_rank", "must be at least 1");
      cfg.synthetic_rank = *v;
    } else if (cfg.synthetic_shape) {
      throw config_error(kv.origin() + ": synthetic_shape requires synthetic_rank");
    }
    if (const auto v = kv.get_double("snr_db")) {
      if (!cfg.synthetic_shape) kv.fail("snr_db", "only applies to synthetic_shape");
      cfg.snr_db = *v;
    }
    if (const auto v = kv.get_int("memory_limit_bytes")) {
      if (*v < 1) kv.fail("memory_limit_bytes", "must be positive");
      cfg.memory_limit_bytes = *v;
    }

    if (const auto v = kv.get_int("rank")) {
      if (*v < 1) kv.fail("rank", "must be at least 1");
      cfg.rank = *v;
    } else {
      throw config_error(kv.origin() + ": rank is required");
    }
    cfg.init_model = kv.get_string("init_model");

    const auto algo = kv.get_string("algorithm");
    if (!algo) throw config_error(kv.origin() + ": algorithm is required (bras or ada)");
    if (*algo == "bras")
      cfg.algorithm = Algorithm::bras;
    else if (*algo == "ada")
      cfg.algorithm = Algorithm::ada;
    else
      kv.fail("algorithm", "expected bras or ada, got \"" + *algo + "\"");

    // Schedule parameters: each family is valid only for its algorithm, so a
    // stray key is caught instead of silently ignored.
    const auto alpha0 = kv.get_double("alpha0");
    const auto beta = kv.get_double("beta");
    const auto eta = kv.get_double("eta");
    const auto b = kv.get_double("b");
    const auto epsilon = kv.get_double("epsilon");
    if (cfg.algorithm == Algorithm::bras) {
      if (eta) kv.fail("eta", "only applies to algorithm = ada");
      if (b) kv.fail("b", "only applies to algorithm = ada");
      if (epsilon) kv.fail("epsilon", "only applies to algorithm = ada");
      try {
        cfg.schedule = StepSchedule::power_decay(alpha0.value_or(0.05), beta.value_or(1e-6));
      } catch (const argument_error& e) {
        kv.fail(alpha0 ? "alpha0" : "beta", e.what());
      }
    } else {
      if (alpha0) kv.fail("alpha0", "only applies to algorithm = bras");
      if (beta) kv.fail("beta", "only applies to algorithm = bras");
      try {
        cfg.schedule =
            StepSchedule::adagrad(eta.value_or(1.0), b.value_or(1e-6), epsilon.value_or(0.0));
      } catch (const argument_error& e) {
        kv.fail(eta ? "eta" : (b ? "b" : "epsilon"), e.what());
      }
    }

    const std::int64_t batch_base = kv.get_int("batch").value_or(0);
    if (batch_base < 1)
      throw config_error(kv.origin() + ": batch is required and must be at least 1");
    const auto batch_kind = kv.get_string("batch_kind").value_or("fixed");
    const auto growth = kv.get_double("batch_growth_epsilon");
    if (batch_kind == "fixed") {
      if (growth) kv.fail("batch_growth_epsilon", "only applies to batch_kind = growing");
      cfg.batch = BatchSchedule::fixed(batch_base);
    } else if (batch_kind == "growing") {
      if (!growth) kv.fail("batch_kind", "batch_kind = growing requires batch_growth_epsilon");
      try {
        cfg.batch = BatchSchedule::growing(batch_base, *growth);
      } catch (const argument_error& e) {
        kv.fail("batch_growth_epsilon", e.what());
      }
    } else {
      kv.fail("batch_kind", "expected fixed or growing, got \"" + batch_kind + "\"");
    }

    if (const auto v = kv.get_double("safeguard_mu")) {
      if (!(*v >= 0.0)) kv.fail("safeguard_mu", "must be nonnegative");
      cfg.safeguard_mu = *v;
    }

    if (const auto v = kv.get_string("reg"))
      cfg.default_reg = detail::parse_reg(kv, "reg", *v);
    for (const auto& e : kv.entries()) {
      if (e.key.rfind("reg_mode_", 0) != 0) continue;
      const std::string suffix = e.key.substr(9);
      int mode = 0;
      const auto [ptr, ec] = std::from_chars(suffix.data(), suffix.data() + suffix.size(), mode);
      if (ec != std::errc{} || ptr != suffix.data() + suffix.size() || mode < 1)
        kv.fail(e.key, "mode index must be a positive integer");
      cfg.mode_regs[mode] = detail::parse_reg(kv, e.key, *kv.get_string(e.key));
    }

    cfg.seed = kv.get_uint("seed").value_or(0);
    if (const auto v = kv.get_int("trials")) {
      if (*v < 1) kv.fail("trials", "must be at least 1");
      cfg.trials = *v;
    }

    cfg.stopping.max_iterations = kv.get_int("max_iterations");
    cfg.stopping.max_mttkrp_equivalents = kv.get_double("max_mttkrp");
    cfg.stopping.max_wall_seconds = kv.get_double("max_wall_seconds");
    cfg.stopping.target_cost = kv.get_double("target_cost");
    try {
      cfg.stopping.validate();
    } catch (const config_error& e) {
      throw config_error(kv.origin() + ": " + e.what() +
                         " (set max_iterations, max_mttkrp, max_wall_seconds, or target_cost)");
    }

    if (const auto v = kv.get_double("trace_cadence")) {
      if (!(*v > 0.0)) kv.fail("trace_cadence", "must be positive");
      cfg.trace_cadence = *v;
    }
    if (const auto v = kv.get_string("timing")) {
      if (*v == "real")
        cfg.real_timing = true;
      else if (*v != "off")
        kv.fail("timing", "expected off or real, got \"" + *v + "\"");
    }
    cfg.out_dir = kv.get_string("out_dir");

    kv.reject_unknown();
    cfg.source = std::move(kv);
    return cfg;
  }

  /// Default regularizer everywhere, then per-mode overrides; mode indices
  /// beyond the order are config errors.
  [[nodiscard]] std::vector<Regularizer> regularizers_for(int order) const {
    std::vector<Regularizer> regs(static_cast<std::size_t>(order), default_reg);
    for (const auto& [mode, reg] : mode_regs) {
      if (mode > order)
        throw config_error("reg_mode_" + std::to_string(mode) + " given, but the tensor order is " +
                           std::to_string(order));
      regs[static_cast<std::size_t>(mode - 1)] = reg;
    }
    return regs;
  }
};

/// Config subset for the generate verb: just the synthetic source and seed.
struct GenerateConfig {
  std::vector<std::int64_t> shape;
  std::int64_t rank = 0;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
  std::int64_t memory_limit_bytes = std::int64_t{8} << 30;
  KeyValueFile source;

  static GenerateConfig from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueFile::parse_file(path));
  }

  static GenerateConfig from_kv(KeyValueFile kv) {
    GenerateConfig cfg;
    const auto raw = kv.get_string("synthetic_shape");
    if (!raw) throw config_error(kv.origin() + ": synthetic_shape is required");
    cfg.shape = detail::parse_shape(kv, "synthetic_shape", *raw);
    const auto rank = kv.get_int("synthetic_rank");
    if (!rank) throw config_error(kv.origin() + ": synthetic_rank is required");
    if (*rank < 1) kv.fail("synthetic_rank", "must be at least 1");
    cfg.rank = *rank;
    cfg.snr_db = kv.get_double("snr_db");
    cfg.seed = kv.get_uint("seed").value_or(0);
    if (const auto v = kv.get_int("memory_limit_bytes")) {
      if (*v < 1) kv.fail("memory_limit_bytes", "must be positive");
      cfg.memory_limit_bytes = *v;
    }
    kv.reject_unknown();
    cfg.source = std::move(kv);
    return cfg;
  }
};

}  // namespace bras
