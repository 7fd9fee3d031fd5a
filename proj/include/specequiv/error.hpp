#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace specequiv {

/// Malformed or inconsistent user input: bad config, bad CLI argument,
/// dimension mismatches.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point or diagonal outside the region where an operation is defined
/// (Im z <= 0, L outside the solver domain, singular resolvent).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver exhausted its budget.
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(std::size_t iterations, double last_residual,
                 const std::string& where = {})
      : std::runtime_error(describe(iterations, last_residual, where)),
        iterations_(iterations),
        last_residual_(last_residual),
        where_(where) {}

  std::size_t iterations() const noexcept { return iterations_; }
  double last_residual() const noexcept { return last_residual_; }
  const std::string& where() const noexcept { return where_; }

  /// Index of the failing point when raised from a path or grid solve.
  std::ptrdiff_t index = -1;

 private:
  static std::string describe(std::size_t iterations, double residual, const std::string& where) {
    std::ostringstream os;
    os << "fixed point did not converge after " << iterations
       << " iterations (last d_s residual " << residual << ")";
    if (!where.empty()) os << " at " << where;
    return os.str();
  }

  std::size_t iterations_;
  double last_residual_;
  std::string where_;
};

}  // namespace specequiv
