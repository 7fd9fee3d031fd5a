#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/error.hpp"

namespace specequiv {

using cplx = std::complex<double>;

/// A complex diagonal with strictly positive imaginary parts.
class UpperDiagonal {
 public:
  UpperDiagonal() = default;

  explicit UpperDiagonal(Eigen::VectorXcd d) : d_(std::move(d)) {
    for (Eigen::Index i = 0; i < d_.size(); ++i) {
      if (!(d_(i).imag() > 0.0) || !std::isfinite(d_(i).real()) ||
          !std::isfinite(d_(i).imag())) {
        throw DomainError("UpperDiagonal entry " + std::to_string(i) +
                          " must be finite with positive imaginary part");
      }
    }
  }

  UpperDiagonal(std::initializer_list<cplx> values)
      : UpperDiagonal(Eigen::Map<const Eigen::VectorXcd>(
            values.begin(), static_cast<Eigen::Index>(values.size()))) {}

  /// n copies of value.
  static UpperDiagonal constant(Eigen::Index n, cplx value) {
    return UpperDiagonal(Eigen::VectorXcd::Constant(n, value));
  }

  const Eigen::VectorXcd& values() const noexcept { return d_; }
  Eigen::Index size() const noexcept { return d_.size(); }
  cplx operator[](Eigen::Index i) const { return d_(i); }

 private:
  Eigen::VectorXcd d_;
};

namespace detail {

/// max_i |a_i - b_i| / (sqrt(Im a_i) sqrt(Im b_i)); inputs assumed valid.
inline double ds_raw(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double num = std::abs(a(i) - b(i));
    if (num == 0.0) continue;
    worst = std::max(worst, num / (std::sqrt(a(i).imag()) * std::sqrt(b(i).imag())));
  }
  return worst;
}

inline bool entry_in_domain(cplx d, cplx z) {
  return d.imag() > 0.0 && (d / z).imag() > 0.0;
}

inline void require_upper(cplx z, const char* what = "z") {
  if (!(z.imag() > 0.0) || !std::isfinite(z.real()) || !std::isfinite(z.imag())) {
    throw DomainError(std::string(what) + " must lie in the open upper half-plane");
  }
}

}  // namespace detail

/// Semi-metric d_s(D, D') = max_i |D_i - D'_i| / sqrt(Im D_i Im D'_i).
/// Does not satisfy the triangle inequality.
inline double d_s(const UpperDiagonal& a, const UpperDiagonal& b) {
  if (a.size() != b.size()) {
    throw ConfigError("d_s: length mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  return detail::ds_raw(a.values(), b.values());
}

/// Scalar form on the upper half-plane.
inline double d_s(cplx a, cplx b) {
  detail::require_upper(a, "first argument");
  detail::require_upper(b, "second argument");
  return std::abs(a - b) / (std::sqrt(a.imag()) * std::sqrt(b.imag()));
}

/// Membership in {D : Im D_i > 0 and Im(D_i / z) > 0 for all i}.
inline bool in_solver_domain(const Eigen::VectorXcd& d, cplx z) {
  detail::require_upper(z);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!detail::entry_in_domain(d(i), z)) return false;
  }
  return true;
}

inline bool in_solver_domain(const UpperDiagonal& d, cplx z) {
  return in_solver_domain(d.values(), z);
}

struct Atom {
  double location = 0.0;
  double mass = 0.0;
};

struct LipschitzCheck {
  double lhs = 0.0;  ///< |g(z) - g(z')|
  double rhs = 0.0;  ///< sqrt(Im g(z) Im g(z')) d_s(z, z')
  bool holds(double rel = 1e-12) const { return lhs <= rhs * (1.0 + rel); }
};

/// Stieltjes transform of a finite discrete measure.
inline cplx discrete_stieltjes(std::span<const Atom> atoms, cplx z) {
  cplx g = 0.0;
  for (const auto& a : atoms) g += a.mass / (a.location - z);
  return g;
}

/// Evaluates both sides of |g(z) - g(z')| <= sqrt(Im g(z) Im g(z')) d_s(z, z')
/// for the Stieltjes transform g of a discrete measure.
inline LipschitzCheck stieltjes_lipschitz_check(std::span<const Atom> atoms, cplx z,
                                                cplx zp) {
  if (atoms.empty()) throw ConfigError("stieltjes_lipschitz_check: empty atom list");
  double total = 0.0;
  for (const auto& a : atoms) {
    if (!(a.mass >= 0.0)) throw ConfigError("atom masses must be >= 0");
    total += a.mass;
  }
  if (!(total > 0.0)) throw ConfigError("total mass must be positive");
  detail::require_upper(z);
  detail::require_upper(zp, "z'");
  const cplx g = discrete_stieltjes(atoms, z);
  const cplx gp = discrete_stieltjes(atoms, zp);
  LipschitzCheck out;
  out.lhs = std::abs(g - gp);
  out.rhs = std::sqrt(g.imag() * gp.imag()) * d_s(z, zp);
  return out;
}

}  // namespace specequiv
