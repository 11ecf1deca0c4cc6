#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "bras/errors.hpp"

namespace bras {

/// Regularizer h(A) attached to one mode. `weight` is the multiplier for the
/// norm-based kinds; `rho` is the scaled-simplex target sum. Axis semantics
/// are fixed per kind: l21, simplex and monotone act per column, l1/l0/nonneg
/// act entrywise, l2 treats the whole matrix as one block.
struct Regularizer {
  enum class Kind { none, nonneg, l1, l2, l21, l0, simplex, monotone };

  Kind kind = Kind::none;
  double weight = 0.0;
  double rho = 1.0;

  static Regularizer none() { return {}; }
  static Regularizer nonneg() { return {Kind::nonneg, 0.0, 1.0}; }
  static Regularizer l1(double w) { return weighted(Kind::l1, w); }
  static Regularizer l2(double w) { return weighted(Kind::l2, w); }
  static Regularizer l21(double w) { return weighted(Kind::l21, w); }
  static Regularizer l0(double w) { return weighted(Kind::l0, w); }
  static Regularizer simplex(double rho) {
    if (!(rho > 0.0)) throw argument_error("simplex scale rho must be positive");
    return {Kind::simplex, 0.0, rho};
  }
  static Regularizer monotone() { return {Kind::monotone, 0.0, 1.0}; }

  /// Parses the config-file syntax: "none", "nonneg", "monotone", or
  /// "kind:param" for the parametrized kinds ("l1:0.1", "simplex:300").
  static Regularizer parse(std::string_view text);

  /// Separable kinds admit an entrywise stepsize matrix in apply_prox.
  [[nodiscard]] bool separable() const {
    return kind == Kind::none || kind == Kind::nonneg || kind == Kind::l1 ||
           kind == Kind::l0;
  }

  /// Projections ignore the stepsize entirely.
  [[nodiscard]] bool projection() const {
    return kind == Kind::nonneg || kind == Kind::simplex || kind == Kind::monotone;
  }

  [[nodiscard]] bool convex() const { return kind != Kind::l0; }

  /// Config-file spelling, inverse of parse.
  [[nodiscard]] std::string to_string() const;

 private:
  static Regularizer weighted(Kind k, double w) {
    if (w < 0.0) throw argument_error("regularizer weight must be nonnegative");
    return {k, w, 1.0};
  }
};

/// prox of t*||.||_2 at v: group shrinkage v * max(1 - t/||v||, 0); 0 -> 0.
inline Eigen::VectorXd prox_l2_column(const Eigen::VectorXd& v, double t) {
  if (t < 0.0) throw argument_error("prox stepsize must be nonnegative");
  const double norm = v.norm();
  if (norm <= t) return Eigen::VectorXd::Zero(v.size());
  return v * (1.0 - t / norm);
}

/// Block soft-thresholding: prox_l2_column on every column.
inline Eigen::MatrixXd prox_l21(const Eigen::MatrixXd& m, double t) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    out.col(c) = prox_l2_column(m.col(c), t);
  return out;
}

/// Hard-thresholding: entry kept iff x^2 > 2t; ties go to zero. Compared as
/// |x| > sqrt(2t) so subnormal entries survive t = 0.
inline Eigen::MatrixXd prox_l0(const Eigen::MatrixXd& m, double t) {
  if (t < 0.0) throw argument_error("prox stepsize must be nonnegative");
  const double bar = std::sqrt(2.0 * t);
  return m.unaryExpr([bar](double x) { return std::abs(x) > bar ? x : 0.0; });
}

/// Euclidean projection onto the scaled simplex {z >= 0, sum z = rho}.
/// Deterministic sort-based algorithm, O(d log d).
inline Eigen::VectorXd project_simplex_column(const Eigen::VectorXd& v, double rho) {
  if (!(rho > 0.0)) throw argument_error("simplex scale rho must be positive");
  const Eigen::Index d = v.size();
  if (d == 0) return v;
  std::vector<double> u(v.data(), v.data() + d);
  std::sort(u.begin(), u.end(), std::greater<double>());
  // k* = max{k : u_k - (sum_{i<=k} u_i - rho)/k > 0}; k = 1 always qualifies.
  double cumsum = 0.0;
  std::size_t k_star = 0;
  double cumsum_at_k = u[0];
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    if (u[k] - (cumsum - rho) / static_cast<double>(k + 1) > 0.0) {
      k_star = k;
      cumsum_at_k = cumsum;
    }
  }
  const double tau = (cumsum_at_k - rho) / static_cast<double>(k_star + 1);
  return v.unaryExpr([tau](double x) { return std::max(x - tau, 0.0); });
}

/// Euclidean projection onto the nondecreasing cone {z_1 <= ... <= z_d} via
/// pool-adjacent-violators; O(d).
inline Eigen::VectorXd isotonic_column(const Eigen::VectorXd& v) {
  const Eigen::Index d = v.size();
  std::vector<double> value;   // block means
  std::vector<double> count;   // block sizes
  value.reserve(static_cast<std::size_t>(d));
  count.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    value.push_back(v[i]);
    count.push_back(1.0);
    while (value.size() > 1 && value[value.size() - 2] >= value.back()) {
      const double total = value[value.size() - 2] * count[count.size() - 2] +
                           value.back() * count.back();
      const double n = count[count.size() - 2] + count.back();
      value.pop_back();
      count.pop_back();
      value.back() = total / n;
      count.back() = n;
    }
  }
  Eigen::VectorXd out(d);
  Eigen::Index at = 0;
  for (std::size_t b = 0; b < value.size(); ++b) {
    const auto len = static_cast<Eigen::Index>(count[b]);
    for (Eigen::Index i = 0; i < len; ++i) out[at++] = value[b];
  }
  return out;
}

/// argmin_Z 0.5 ||Z - M||_F^2 + alpha * h(Z) for the regularizer's h.
inline Eigen::MatrixXd apply_prox(const Regularizer& reg, const Eigen::MatrixXd& m,
                                  double alpha) {
  if (alpha < 0.0) throw argument_error("prox stepsize must be nonnegative");
  const double t = reg.weight * alpha;
  switch (reg.kind) {
    case Regularizer::Kind::none:
      return m;
    case Regularizer::Kind::nonneg:
      return m.cwiseMax(0.0);
    case Regularizer::Kind::l1:
      return m.unaryExpr([t](double x) {
        return x > t ? x - t : (x < -t ? x + t : 0.0);
      });
    case Regularizer::Kind::l2: {
      // whole matrix as one block: rescale by max(1 - t/||M||_F, 0)
      const double norm = m.norm();
      if (norm <= t) return Eigen::MatrixXd::Zero(m.rows(), m.cols());
      return m * (1.0 - t / norm);
    }
    case Regularizer::Kind::l21:
      return prox_l21(m, t);
    case Regularizer::Kind::l0:
      return prox_l0(m, t);
    case Regularizer::Kind::simplex: {
      Eigen::MatrixXd out(m.rows(), m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        out.col(c) = project_simplex_column(m.col(c), reg.rho);
      return out;
    }
    case Regularizer::Kind::monotone: {
      Eigen::MatrixXd out(m.rows(), m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = isotonic_column(m.col(c));
      return out;
    }
  }
  throw argument_error("apply_prox: unknown regularizer kind");
}

/// Entrywise-stepsize overload for the adaptive solver. Only separable kinds
/// (none, nonneg, l1, l0) admit a stepsize matrix; the result is then the
/// exact entrywise prox. Nonseparable kinds reject it.
inline Eigen::MatrixXd apply_prox(const Regularizer& reg, const Eigen::MatrixXd& m,
                                  const Eigen::MatrixXd& alpha) {
  if (!reg.separable())
    throw argument_error("regularizer '" + reg.to_string() +
                         "' is not separable: entrywise stepsizes need a scalar prox");
  if (alpha.rows() != m.rows() || alpha.cols() != m.cols())
    throw dimension_error("stepsize matrix shape does not match the iterate");
  if ((alpha.array() < 0.0).any())
    throw argument_error("prox stepsize must be nonnegative");
  switch (reg.kind) {
    case Regularizer::Kind::none:
      return m;
    case Regularizer::Kind::nonneg:
      return m.cwiseMax(0.0);
    case Regularizer::Kind::l1: {
      const double w = reg.weight;
      return m.binaryExpr(alpha, [w](double x, double a) {
        const double t = w * a;
        return x > t ? x - t : (x < -t ? x + t : 0.0);
      });
    }
    case Regularizer::Kind::l0: {
      const double w = reg.weight;
      return m.binaryExpr(alpha, [w](double x, double a) {
        return std::abs(x) > std::sqrt(2.0 * w * a) ? x : 0.0;
      });
    }
    default:
      break;
  }
  throw argument_error("apply_prox: unknown separable regularizer kind");
}

inline Regularizer Regularizer::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string kind(text.substr(0, colon));
  const bool has_param = colon != std::string_view::npos;
  double param = 0.0;
  if (has_param) {
    const std::string raw(text.substr(colon + 1));
    std::size_t used = 0;
    try {
      param = std::stod(raw, &used);
    } catch (const std::exception&) {
      throw config_error("regularizer '" + std::string(text) + "': unparsable parameter");
    }
    if (used != raw.size())
      throw config_error("regularizer '" + std::string(text) + "': unparsable parameter");
  }

  const auto need_param = [&](const char* what) {
    if (!has_param)
      throw config_error("regularizer '" + kind + "' requires a " + std::string(what) +
                         ", e.g. '" + kind + ":0.1'");
  };
  const auto no_param = [&]() {
    if (has_param)
      throw config_error("regularizer '" + kind + "' takes no parameter");
  };

  try {
    if (kind == "none") {
      no_param();
      return none();
    }
    if (kind == "nonneg") {
      no_param();
      return nonneg();
    }
    if (kind == "monotone") {
      no_param();
      return monotone();
    }
    if (kind == "l1") {
      need_param("weight");
      return l1(param);
    }
    if (kind == "l2") {
      need_param("weight");
      return l2(param);
    }
    if (kind == "l21") {
      need_param("weight");
      return l21(param);
    }
    if (kind == "l0") {
      need_param("weight");
      return l0(param);
    }
    if (kind == "simplex") {
      need_param("scale");
      return simplex(param);
    }
  } catch (const argument_error& e) {
    throw config_error("regularizer '" + std::string(text) + "': " + e.what());
  }
  if (kind == "unimodal")
    throw config_error("unimodal regression is not supported; "
                       "available kinds: none nonneg l1 l2 l21 l0 simplex monotone");
  throw config_error("unknown regularizer kind '" + kind +
                     "'; available: none nonneg l1 l2 l21 l0 simplex monotone");
}

inline std::string Regularizer::to_string() const {
  switch (kind) {
    case Kind::none:
      return "none";
    case Kind::nonneg:
      return "nonneg";
    case Kind::l1:
      return "l1:" + std::to_string(weight);
    case Kind::l2:
      return "l2:" + std::to_string(weight);
    case Kind::l21:
      return "l21:" + std::to_string(weight);
    case Kind::l0:
      return "l0:" + std::to_string(weight);
    case Kind::simplex:
      return "simplex:" + std::to_string(rho);
    case Kind::monotone:
      return "monotone";
  }
  return "none";
}

}  // namespace bras
