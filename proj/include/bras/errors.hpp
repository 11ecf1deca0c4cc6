#pragma once

#include <stdexcept>
#include <string>

namespace bras {

/// Out-of-range tensor/factor index (modes and entries are 1-based).
class index_error : public std::out_of_range {
 public:
  explicit index_error(const std::string& what) : std::out_of_range(what) {}
};

/// Shape disagreement between objects that must conform.
class dimension_error : public std::invalid_argument {
 public:
  explicit dimension_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Invalid argument value (batch sizes, stepsizes, weights, ...).
class argument_error : public std::invalid_argument {
 public:
  explicit argument_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed on-disk artifact (bad magic, truncation, inconsistent header).
class format_error : public std::runtime_error {
 public:
  explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

/// Request exceeds a configured resource bound (e.g. tensor memory limit).
class resource_error : public std::runtime_error {
 public:
  explicit resource_error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad experiment configuration (unknown key, unparsable value, bad combination).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Metric preconditions violated (zero column under normalization, rank mismatch).
class metric_error : public std::runtime_error {
 public:
  explicit metric_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure in a direct solve (singular system with safeguards disabled).
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bras
