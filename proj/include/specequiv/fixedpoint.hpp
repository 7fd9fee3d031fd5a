#pragma once

// The map I^z(L)_i = z - (1/n) tr(Sigma_i Qt(L)), Qt(L) = (I - (1/n) sum_j
// Sigma_j / L_j)^{-1}, and the solver for its unique fixed point on
// {L : Im L_i > 0, Im(L_i / z) > 0}.
//
// I^z(L)_i only depends on the group of column i, so the solver iterates on
// one value per column group and expands at the end.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/error.hpp"
#include "specequiv/iteration.hpp"
#include "specequiv/model.hpp"
#include "specequiv/resolvent.hpp"
#include "specequiv/semimetric.hpp"

namespace specequiv {

struct FixedPointResult {
  cplx z;
  UpperDiagonal lambda;          ///< per column
  Eigen::VectorXcd group_lambda; ///< one entry per column group
  std::size_t iterations = 0;
  double residual_ds = 0.0;           ///< d_s between the last two iterates
  /// Stopping threshold applied: tol_ds, raised to the rounding floor of d_s
  /// only when lambda is within ~1e-3 of the real axis.
  double tolerance = 0.0;
  double contraction_estimate = 0.0;  ///< 1 - phi, local Lipschitz bound of I^z
  double phi = 0.0;                   ///< Im z / max_i Im I^z(lambda)_i
};

namespace detail {

/// I^z on group-level vectors, sharing one resolvent plan across z values.
class GroupMap {
 public:
  GroupMap(const ResolventPlan& plan, cplx z) : plan_(&plan), z_(z) {
    require_upper(z);
    const auto& model = plan.model();
    counts_.resize(static_cast<Eigen::Index>(model.group_count()));
    for (std::size_t g = 0; g < model.group_count(); ++g) {
      counts_(static_cast<Eigen::Index>(g)) = static_cast<double>(model.group_size(g));
    }
  }

  cplx z() const noexcept { return z_; }
  const EnsembleModel& model() const noexcept { return plan_->model(); }

  /// z - (1/n) tr(Sigma_g Q) for Q built from per-group weights.
  Eigen::VectorXcd apply_weights(const Eigen::VectorXcd& group_w) const {
    const auto eval = plan_->evaluate(group_w);
    const double n = static_cast<double>(model().n());
    Eigen::VectorXcd out = -eval.group_traces() / n;
    out.array() += z_;
    return out;
  }

  Eigen::VectorXcd apply(const Eigen::VectorXcd& x) const {
    return apply_weights(counts_.cast<cplx>().cwiseQuotient(x));
  }

  /// I^z applied at the boundary point z 1.
  Eigen::VectorXcd initial() const {
    return apply_weights(counts_.cast<cplx>() / z_);
  }

  bool in_domain(const Eigen::VectorXcd& x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x(i).real()) || !entry_in_domain(x(i), z_)) return false;
    }
    return true;
  }

  Eigen::VectorXcd expand(const Eigen::VectorXcd& x) const {
    const auto& m = model();
    Eigen::VectorXcd out(m.n());
    for (Eigen::Index i = 0; i < m.n(); ++i) {
      out(i) = x(static_cast<Eigen::Index>(m.group_of(i)));
    }
    return out;
  }

 private:
  const ResolventPlan* plan_;
  cplx z_;
  Eigen::VectorXd counts_;
};

inline double phi_of(cplx z, const Eigen::VectorXcd& image) {
  return z.imag() / image.imag().maxCoeff();
}

inline std::string describe_point(cplx z) {
  std::ostringstream os;
  os.precision(17);
  os << "z = " << z.real() << (z.imag() < 0 ? " - " : " + ") << std::abs(z.imag()) << "i";
  return os.str();
}

inline FixedPointResult solve_groups(const GroupMap& map, Eigen::VectorXcd x,
                                     const SolverOptions& opts) {
  auto outcome = iterate_fixed_point([&](const Eigen::VectorXcd& v) { return map.apply(v); },
                                     [&](const Eigen::VectorXcd& v) { return map.in_domain(v); },
                                     std::move(x), opts, describe_point(map.z()));
  FixedPointResult out;
  out.z = map.z();
  out.phi = phi_of(map.z(), map.apply(outcome.image));
  out.contraction_estimate = 1.0 - out.phi;
  out.lambda = UpperDiagonal(map.expand(outcome.image));
  out.group_lambda = std::move(outcome.image);
  out.iterations = outcome.iterations;
  out.residual_ds = outcome.residual;
  out.tolerance = outcome.tolerance;
  return out;
}

/// Moves a previous solution into the domain at a new z: imaginary parts are
/// floored at Im z, entries still outside fall back to the default start.
inline Eigen::VectorXcd project_warm_start(const GroupMap& map, Eigen::VectorXcd x) {
  std::optional<Eigen::VectorXcd> fallback;
  const cplx z = map.z();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i).imag() < z.imag()) x(i).imag(z.imag());
    if (!std::isfinite(x(i).real()) || !entry_in_domain(x(i), z)) {
      if (!fallback) fallback = map.initial();
      x(i) = (*fallback)(i);
    }
  }
  return x;
}

/// Extrapolates the last (up to three) solutions of a path to z_next with the
/// Lagrange polynomial through their z values.
inline Eigen::VectorXcd predict_start(const std::vector<FixedPointResult>& done, cplx z_next) {
  constexpr std::size_t kOrder = 3;
  const std::size_t m = std::min(kOrder, done.size());
  const std::size_t first = done.size() - m;
  for (std::size_t j = first; j < done.size(); ++j) {
    for (std::size_t k = j + 1; k < done.size(); ++k) {
      if (done[j].z == done[k].z) return done.back().group_lambda;
    }
  }
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(done.back().group_lambda.size());
  for (std::size_t j = first; j < done.size(); ++j) {
    cplx w = 1.0;
    for (std::size_t k = first; k < done.size(); ++k) {
      if (k != j) w *= (z_next - done[k].z) / (done[j].z - done[k].z);
    }
    x += w * done[j].group_lambda;
  }
  return x;
}

inline void check_length(const EnsembleModel& model, const UpperDiagonal& d, const char* what) {
  if (d.size() != model.n()) {
    throw ConfigError(std::string(what) + " has " + std::to_string(d.size()) +
                      " entries, model has n = " + std::to_string(model.n()));
  }
}

}  // namespace detail

/// Qt(L) = (I_p - (1/n) sum_i Sigma_i / L_i)^{-1}.
inline MatrixXcd q_tilde(const EnsembleModel& model, const UpperDiagonal& l) {
  detail::check_length(model, l, "L");
  const detail::ResolventPlan plan(model);
  return plan.evaluate(model.group_weights(l.values().cwiseInverse())).dense();
}

/// I^z(L)_i = z - (1/n) tr(Sigma_i Qt(L)); L must lie in the solver domain.
inline UpperDiagonal apply_Iz(const EnsembleModel& model, cplx z, const UpperDiagonal& l) {
  detail::check_length(model, l, "L");
  if (!in_solver_domain(l, z)) throw DomainError("apply_Iz: L is outside the solver domain");
  const detail::ResolventPlan plan(model);
  const detail::GroupMap map(plan, z);
  const Eigen::VectorXcd image =
      map.apply_weights(model.group_weights(l.values().cwiseInverse()));
  return UpperDiagonal(map.expand(image));
}

/// phi(z, L) = Im z / max_i Im I^z(L)_i.
inline double phi(const EnsembleModel& model, cplx z, const UpperDiagonal& l) {
  return detail::phi_of(z, apply_Iz(model, z, l).values());
}

/// sqrt((1 - phi(z, L)) (1 - phi(z, L'))), a Lipschitz bound of I^z between
/// L and L' for d_s.
inline double contraction_factor(const EnsembleModel& model, cplx z, const UpperDiagonal& l,
                                 const UpperDiagonal& lp) {
  const double a = phi(model, z, l);
  const double b = phi(model, z, lp);
  return std::sqrt(std::max(0.0, 1.0 - a) * std::max(0.0, 1.0 - b));
}

/// Solves L = I^z(L). Without a warm start the iteration begins at
/// I^z(z 1); a warm start must lie in the solver domain.
inline FixedPointResult solve_lambda(const EnsembleModel& model, cplx z,
                                     const SolverOptions& opts = {},
                                     const std::optional<UpperDiagonal>& warm = std::nullopt) {
  opts.validate();
  detail::require_upper(z);
  const detail::ResolventPlan plan(model);
  const detail::GroupMap map(plan, z);
  Eigen::VectorXcd x0;
  if (warm) {
    detail::check_length(model, *warm, "warm start");
    if (!in_solver_domain(*warm, z)) {
      throw DomainError("solve_lambda: warm start is outside the solver domain");
    }
    x0 = map.apply_weights(model.group_weights(warm->values().cwiseInverse()));
  } else {
    x0 = map.initial();
  }
  return detail::solve_groups(map, std::move(x0), opts);
}

/// Solves along an ordered path, warm-starting each point from a polynomial
/// extrapolation of the previous solutions.
inline std::vector<FixedPointResult> continuation_solve(const EnsembleModel& model,
                                                        std::span<const cplx> zs,
                                                        const SolverOptions& opts = {}) {
  opts.validate();
  if (zs.empty()) throw ConfigError("continuation_solve: empty path");
  for (const cplx z : zs) detail::require_upper(z);
  const detail::ResolventPlan plan(model);
  std::vector<FixedPointResult> out;
  out.reserve(zs.size());
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const detail::GroupMap map(plan, zs[k]);
    Eigen::VectorXcd x0 = out.empty()
                              ? map.initial()
                              : detail::project_warm_start(map, detail::predict_start(out, zs[k]));
    try {
      out.push_back(detail::solve_groups(map, std::move(x0), opts));
    } catch (NonConvergence& e) {
      e.index = static_cast<std::ptrdiff_t>(k);
      throw;
    }
  }
  return out;
}

/// Psi(D, D')_ij = (1/n^2) tr(Sigma_i Qt(D) Sigma_j Qt(D')) / (D_j D'_j).
inline MatrixXcd psi_matrix(const EnsembleModel& model, const UpperDiagonal& d,
                            const UpperDiagonal& dp) {
  detail::check_length(model, d, "D");
  detail::check_length(model, dp, "D'");
  const MatrixXcd q = q_tilde(model, d);
  const MatrixXcd qp = q_tilde(model, dp);
  const std::size_t groups = model.group_count();
  std::vector<MatrixXcd> left(groups), right(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const MatrixXcd sigma = model.realize_group_sigma(g).cast<cplx>();
    left[g] = sigma * q;
    right[g] = (sigma * qp).transpose();
  }
  const double n = static_cast<double>(model.n());
  MatrixXcd t(static_cast<Eigen::Index>(groups), static_cast<Eigen::Index>(groups));
  for (std::size_t a = 0; a < groups; ++a) {
    for (std::size_t b = 0; b < groups; ++b) {
      t(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          (left[a].array() * right[b].array()).sum() / (n * n);
    }
  }
  MatrixXcd psi(model.n(), model.n());
  for (Eigen::Index j = 0; j < model.n(); ++j) {
    const auto gj = static_cast<Eigen::Index>(model.group_of(j));
    const cplx denom = d[j] * dp[j];
    for (Eigen::Index i = 0; i < model.n(); ++i) {
      psi(i, j) = t(static_cast<Eigen::Index>(model.group_of(i)), gj) / denom;
    }
  }
  return psi;
}

/// d lambda / dz at a converged fixed point: solves (I - Psi(lambda, lambda)) x = 1.
inline Eigen::VectorXcd lambda_derivative(const EnsembleModel& model, cplx z,
                                          const UpperDiagonal& lambda) {
  detail::require_upper(z);
  const MatrixXcd psi = psi_matrix(model, lambda, lambda);
  const Eigen::Index n = model.n();
  Eigen::PartialPivLU<MatrixXcd> lu(MatrixXcd::Identity(n, n) - psi);
  if (!(lu.rcond() > 1e-14)) {
    throw ConfigError("lambda_derivative: I - Psi is singular; lambda is not a fixed point");
  }
  return lu.solve(Eigen::VectorXcd::Ones(n));
}

}  // namespace specequiv
