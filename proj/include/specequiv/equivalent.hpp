#pragma once

// Deterministic equivalents built from a solved Lambda: the resolvent
// Rt(z), the Stieltjes transform gt(z), the spectral density obtained by
// inversion at height y, and a support scan.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/csv.hpp"
#include "specequiv/error.hpp"
#include "specequiv/fixedpoint.hpp"
#include "specequiv/model.hpp"
#include "specequiv/parallel.hpp"
#include "specequiv/semimetric.hpp"

namespace specequiv {

/// Rt(z) = ((1/n) sum_i (z / lambda_i) Sigma_i - z I_p)^{-1}, which equals
/// -(1/z) Qt(lambda).
inline MatrixXcd r_tilde(const EnsembleModel& model, cplx z, const UpperDiagonal& lambda) {
  detail::require_upper(z);
  detail::check_length(model, lambda, "lambda");
  MatrixXcd m = model.mixture_from_group_weights(
      model.group_weights(z * lambda.values().cwiseInverse()));
  m.diagonal().array() -= z;
  Eigen::PartialPivLU<MatrixXcd> lu(m);
  if (!(lu.rcond() > 1e-14)) throw ConfigError("r_tilde: singular matrix, inconsistent lambda");
  return lu.inverse();
}

/// gt(z) = (1/z)(n/p - 1) - (1/p) sum_i 1/lambda_i.
inline cplx stieltjes_g(const EnsembleModel& model, cplx z, const UpperDiagonal& lambda) {
  detail::require_upper(z);
  detail::check_length(model, lambda, "lambda");
  const double p = static_cast<double>(model.p());
  const double n = static_cast<double>(model.n());
  return (n / p - 1.0) / z - lambda.values().cwiseInverse().sum() / p;
}

inline cplx stieltjes_g(const EnsembleModel& model, const FixedPointResult& r) {
  return stieltjes_g(model, r.z, r.lambda);
}

/// -1/lambda_i, the Stieltjes transform of the i-th per-column measure.
inline cplx per_column_stieltjes(const UpperDiagonal& lambda, Eigen::Index i) {
  if (i < 0 || i >= lambda.size()) {
    throw ConfigError("column index " + std::to_string(i) + " out of range");
  }
  return -1.0 / lambda[i];
}

/// tr(A R).
inline cplx linear_functional(const MatrixXcd& a, const MatrixXcd& r) {
  if (a.rows() != r.cols() || a.cols() != r.rows()) {
    throw ConfigError("linear_functional: dimension mismatch");
  }
  return (a.array() * r.transpose().array()).sum();
}

/// Mass of the atom at zero forced by rank deficiency, max(0, 1 - n/p).
inline double dirac_at_zero(const EnsembleModel& model) {
  return std::max(0.0, 1.0 - static_cast<double>(model.n()) / static_cast<double>(model.p()));
}

namespace detail {

/// Points per continuation chunk in grid solves. Fixed so that results do
/// not depend on the number of workers.
inline constexpr std::size_t kChunk = 16;

/// Continuation solves over consecutive chunks of zs, chunks in parallel.
inline std::vector<FixedPointResult> chunked_solve(const EnsembleModel& model,
                                                   std::span<const cplx> zs,
                                                   const SolverOptions& opts, unsigned jobs) {
  const std::size_t chunks = (zs.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<FixedPointResult>> parts(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t len = std::min(kChunk, zs.size() - lo);
    try {
      parts[c] = continuation_solve(model, zs.subspan(lo, len), opts);
    } catch (NonConvergence& e) {
      e.index += static_cast<std::ptrdiff_t>(lo);
      throw;
    }
  });
  std::vector<FixedPointResult> out;
  out.reserve(zs.size());
  for (auto& part : parts) {
    for (auto& r : part) out.push_back(std::move(r));
  }
  return out;
}

/// Density of the continuous part at x + iy. For p > n the (n/p - 1)/z term
/// of gt is exactly the atom at zero and is left out.
inline double continuous_density(const EnsembleModel& model, const FixedPointResult& r) {
  const double p = static_cast<double>(model.p());
  cplx g = -r.lambda.values().cwiseInverse().sum() / p;
  if (model.p() <= model.n()) g += (static_cast<double>(model.n()) / p - 1.0) / r.z;
  return std::max(0.0, g.imag() / std::numbers::pi);
}

}  // namespace detail

struct DensityGrid {
  std::vector<double> xs;
  double y = 0.0;
  std::vector<double> density;
  double dirac_at_zero = 0.0;
};

/// Im gt(x + iy) / pi at each abscissa, with any atom at zero reported
/// separately.
inline DensityGrid density_grid(const EnsembleModel& model, std::span<const double> xs, double y,
                                const SolverOptions& opts = {}, unsigned jobs = 1) {
  if (!(y > 0.0) || !std::isfinite(y)) throw ConfigError("density_grid: y must be > 0");
  if (xs.empty()) throw ConfigError("density_grid: empty abscissa list");
  std::vector<cplx> zs;
  zs.reserve(xs.size());
  for (const double x : xs) zs.emplace_back(x, y);
  std::vector<FixedPointResult> solved;
  try {
    solved = detail::chunked_solve(model, zs, opts, jobs);
  } catch (const NonConvergence& e) {
    NonConvergence tagged(e.iterations(), e.last_residual(),
                          "x = " + std::to_string(xs[static_cast<std::size_t>(e.index)]));
    tagged.index = e.index;
    throw tagged;
  }
  DensityGrid grid;
  grid.xs.assign(xs.begin(), xs.end());
  grid.y = y;
  grid.dirac_at_zero = dirac_at_zero(model);
  grid.density.reserve(xs.size());
  for (const auto& r : solved) grid.density.push_back(detail::continuous_density(model, r));
  return grid;
}

/// Equispaced grid of count points in [x_lo, x_hi].
inline DensityGrid density_grid(const EnsembleModel& model, double x_lo, double x_hi,
                                std::size_t count, double y, const SolverOptions& opts = {},
                                unsigned jobs = 1) {
  if (!(x_lo < x_hi)) throw ConfigError("density_grid: need x_lo < x_hi");
  if (count < 2) throw ConfigError("density_grid: need count >= 2");
  std::vector<double> xs(count);
  for (std::size_t k = 0; k < count; ++k) {
    xs[k] = x_lo + (x_hi - x_lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  xs.back() = x_hi;
  return density_grid(model, std::span<const double>(xs), y, opts, jobs);
}

inline void write_density_csv(std::ostream& os, const DensityGrid& grid) {
  using detail::csv_number;
  os << "# dirac_at_zero=" << csv_number(grid.dirac_at_zero) << ", y=" << csv_number(grid.y)
     << "\n";
  os << "x,density\n";
  for (std::size_t k = 0; k < grid.xs.size(); ++k) {
    os << csv_number(grid.xs[k]) << "," << csv_number(grid.density[k]) << "\n";
  }
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SupportEstimate {
  std::vector<Interval> intervals;
  double threshold = 0.0;
  double upper_bound_x0 = 0.0;

  /// Distance from x to the estimated support (0 inside an interval).
  double distance(double x) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& iv : intervals) {
      if (x >= iv.lo && x <= iv.hi) return 0.0;
      best = std::min({best, std::abs(x - iv.lo), std::abs(x - iv.hi)});
    }
    return best;
  }
};

/// 1.5 max((8/n) sup_i tr Sigma_i, 4 nu_hat), an upper bound for the support.
inline double support_upper_bound(const EnsembleModel& model) {
  return 1.5 * std::max(8.0 / static_cast<double>(model.n()) * model.max_trace(),
                        4.0 * model.nu_hat());
}

/// Maximal intervals of [0, x0] where the density exceeds threshold: coarse
/// stride x0/200, then each cell containing a crossing is split 16 ways.
///
/// Points are classified by 2 rho(y/2) - rho(y). Off the support, rho(y) is a
/// Lorentzian tail that grows linearly in y (near 0 for an MP law it is about
/// y E[1/lambda^2] / pi, above 1e-3 at y = 1e-3), and the extrapolation
/// cancels it.
inline SupportEstimate support_scan(const EnsembleModel& model, double y, double threshold = 1e-3,
                                    const SolverOptions& opts = {}, unsigned jobs = 1) {
  if (!(threshold > 0.0)) throw ConfigError("support_scan: threshold must be > 0");
  if (!(y > 0.0) || !std::isfinite(y)) throw ConfigError("support_scan: y must be > 0");
  constexpr std::size_t kCoarse = 200;
  constexpr std::size_t kRefine = 16;
  SupportEstimate out;
  out.threshold = threshold;
  out.upper_bound_x0 = support_upper_bound(model);
  const double x0 = out.upper_bound_x0;
  const double stride = x0 / static_cast<double>(kCoarse);

  auto limit_density = [&](std::span<const double> xs) {
    const DensityGrid full = density_grid(model, xs, y, opts, jobs);
    const DensityGrid half = density_grid(model, xs, y / 2, opts, jobs);
    std::vector<double> rho(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) rho[k] = 2.0 * half.density[k] - full.density[k];
    return rho;
  };

  std::vector<double> coarse_xs(kCoarse + 1);
  for (std::size_t k = 0; k <= kCoarse; ++k) coarse_xs[k] = stride * static_cast<double>(k);
  coarse_xs.back() = x0;
  const std::vector<double> coarse = limit_density(coarse_xs);
  std::vector<bool> above(kCoarse + 1);
  for (std::size_t k = 0; k <= kCoarse; ++k) above[k] = coarse[k] > threshold;

  std::vector<std::size_t> cells;
  for (std::size_t k = 0; k < kCoarse; ++k) {
    if (above[k] != above[k + 1]) cells.push_back(k);
  }
  std::vector<double> fine_xs;
  for (const std::size_t k : cells) {
    for (std::size_t j = 1; j < kRefine; ++j) {
      fine_xs.push_back(coarse_xs[k] + stride * static_cast<double>(j) / kRefine);
    }
  }
  std::vector<double> fine;
  if (!fine_xs.empty()) fine = limit_density(fine_xs);

  // Crossing abscissa inside cell c: first fine point above threshold for a
  // rising edge, last one above for a falling edge.
  auto crossing = [&](std::size_t c, bool rising) {
    const std::size_t k = cells[c];
    const std::size_t base = c * (kRefine - 1);
    if (rising) {
      for (std::size_t j = 0; j < kRefine - 1; ++j) {
        if (fine[base + j] > threshold) return fine_xs[base + j];
      }
      return coarse_xs[k + 1];
    }
    for (std::size_t j = kRefine - 1; j-- > 0;) {
      if (fine[base + j] > threshold) return fine_xs[base + j];
    }
    return coarse_xs[k];
  };

  std::size_t c = 0;
  double open = 0.0;
  for (std::size_t k = 0; k < kCoarse; ++k) {
    if (above[k] == above[k + 1]) continue;
    if (above[k + 1]) {
      open = crossing(c, true);
    } else {
      out.intervals.push_back({open, crossing(c, false)});
    }
    ++c;
  }
  if (above[kCoarse]) out.intervals.push_back({open, x0});
  return out;
}

}  // namespace specequiv
