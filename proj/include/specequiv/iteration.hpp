#pragma once

// Picard / Anderson iteration on complex vectors with a d_s stopping rule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "specequiv/error.hpp"
#include "specequiv/semimetric.hpp"

namespace specequiv {

enum class Acceleration { kNone, kAnderson };

struct SolverOptions {
  double tol_ds = 1e-12;
  std::size_t max_iter = 50'000;
  Acceleration acceleration = Acceleration::kAnderson;
  int anderson_window = 5;
  /// Picard steps are L <- (1 - damping) L + damping F(L).
  double damping = 1.0;

  void validate() const {
    if (!(tol_ds > 0.0)) throw ConfigError("tol_ds must be > 0");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("damping must lie in (0, 1]");
    if (acceleration == Acceleration::kAnderson && anderson_window < 1) {
      throw ConfigError("anderson window must be >= 1");
    }
  }
};

namespace detail {

struct IterationOutcome {
  Eigen::VectorXcd image;  ///< F(x) at the accepted iterate
  std::size_t iterations = 0;
  double residual = 0.0;   ///< d_s(F(x), x)
  double tolerance = 0.0;  ///< stopping threshold actually applied
};

/// Smallest d_s step that rounding can resolve near x: a relative error of
/// eps in x_i moves d_s by about eps |x_i| / Im x_i, which exceeds 1e-12 once
/// Im x_i is within ~1e-3 of the real axis.
inline double roundoff_floor(const Eigen::VectorXcd& x) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(x(i)) / x(i).imag());
  }
  return 64.0 * std::numeric_limits<double>::epsilon() * worst;
}

/// Iterates x <- F(x) until d_s(F(x), x) < max(tol, roundoff_floor). Anderson
/// (type II) steps that leave the domain are replaced by a damped Picard step
/// and the history is dropped.
template <class Map, class InDomain>
IterationOutcome iterate_fixed_point(Map&& apply, InDomain&& in_domain, Eigen::VectorXcd x,
                                     const SolverOptions& opts, const std::string& where) {
  using Eigen::MatrixXcd;
  using Eigen::VectorXcd;
  const bool anderson = opts.acceleration == Acceleration::kAnderson;
  const auto window = static_cast<std::size_t>(std::max(1, opts.anderson_window));
  std::deque<VectorXcd> d_f, d_g;
  VectorXcd prev_f, prev_g;
  bool have_prev = false;
  double residual = std::numeric_limits<double>::infinity();
  double best = residual;

  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    VectorXcd g = apply(x);
    const VectorXcd f = g - x;
    residual = ds_raw(g, x);
    if (!std::isfinite(residual)) throw NonConvergence(it, residual, where);
    const double tol = std::max(opts.tol_ds, roundoff_floor(g));
    if (residual < tol) return {std::move(g), it, residual, tol};

    if (anderson) {
      if (residual > 1e4 * best) {
        d_f.clear();
        d_g.clear();
      }
      best = std::min(best, residual);
      if (have_prev) {
        d_f.push_back(f - prev_f);
        d_g.push_back(g - prev_g);
        if (d_f.size() > window) {
          d_f.pop_front();
          d_g.pop_front();
        }
      }
      prev_f = f;
      prev_g = g;
      have_prev = true;
      if (!d_f.empty()) {
        const auto cols = static_cast<Eigen::Index>(d_f.size());
        MatrixXcd df(x.size(), cols), dg(x.size(), cols);
        for (Eigen::Index c = 0; c < cols; ++c) {
          df.col(c) = d_f[static_cast<std::size_t>(c)];
          dg.col(c) = d_g[static_cast<std::size_t>(c)];
        }
        const VectorXcd gamma = df.completeOrthogonalDecomposition().solve(f);
        const double beta = opts.damping;
        VectorXcd candidate = x + beta * f - ((dg - df) + beta * df) * gamma;
        if (candidate.allFinite() && in_domain(candidate)) {
          x = std::move(candidate);
          continue;
        }
        d_f.clear();
        d_g.clear();
      }
    }
    x += opts.damping * f;
  }
  throw NonConvergence(opts.max_iter, residual, where);
}

}  // namespace detail
}  // namespace specequiv
