#pragma once

#include <stdexcept>
#include <string>

namespace diec {

// Tensor/matrix dimension contract violations.
class shape_error : public std::runtime_error {
 public:
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-facing parameters or configuration.
class param_error : public std::invalid_argument {
 public:
  explicit param_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed or inconsistent input files.
class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: non-finite values, failed factorizations.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Cholesky factorization failed even after jitter.
class singularity_error : public numeric_error {
 public:
  explicit singularity_error(const std::string& msg) : numeric_error(msg) {}
};

// A cluster lost all of its mass; the training loop decides how to recover.
class degenerate_cluster_error : public numeric_error {
 public:
  degenerate_cluster_error(const std::string& msg, int cluster)
      : numeric_error(msg), cluster_index(cluster) {}
  int cluster_index;
};

}  // namespace diec
