#pragma once

// Monte Carlo side: Gaussian draws matching a model, spectra of (1/n) X X^T,
// empirical Stieltjes transforms and projections, and the comparison report
// against the deterministic predictions.
//
// Column i of trial t is x_i = m_i + C_i^{1/2} g with g drawn from the
// Philox substream (seed, sampling, i, t).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include <json.hpp>

#include "specequiv/contour.hpp"
#include "specequiv/csv.hpp"
#include "specequiv/equivalent.hpp"
#include "specequiv/error.hpp"
#include "specequiv/model.hpp"
#include "specequiv/parallel.hpp"
#include "specequiv/rng.hpp"

namespace specequiv {

/// Draws p x n matrices for a model. Square roots are computed once.
class Sampler {
 public:
  explicit Sampler(const EnsembleModel& model) : model_(&model) {
    const Eigen::Index p = model.p();
    for (std::size_t g = 0; g < model.group_count(); ++g) {
      const auto& grp = model.group(g);
      std::optional<VectorXd> shift = grp.mean;
      switch (model.structure(g)) {
        case EnsembleModel::Structure::kDiagonal:
          roots_.emplace_back(VectorXd(model.diagonal_part(g).cwiseMax(0.0).cwiseSqrt()));
          break;
        case EnsembleModel::Structure::kLowRank: {
          const auto& lr = std::get<LowRankPlusIdentityCov>(grp.cov);
          roots_.emplace_back(VectorXd(VectorXd::Constant(p, std::sqrt(lr.sigma2))));
          shift = lr.u;
          break;
        }
        case EnsembleModel::Structure::kDense: {
          const MatrixXd& c = model.dense_covariance(g);
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
          const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
          if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
            throw ConfigError("covariance of column group " + std::to_string(g) +
                              " is not positive semidefinite");
          }
          const VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
          roots_.emplace_back(MatrixXd(es.eigenvectors() * s.asDiagonal() *
                                       es.eigenvectors().transpose()));
          break;
        }
      }
      shifts_.push_back(std::move(shift));
    }
  }

  MatrixXd sample(std::uint64_t seed, std::uint32_t trial = 0) const {
    const Eigen::Index p = model_->p();
    MatrixXd x(p, model_->n());
    VectorXd g(p);
    for (Eigen::Index i = 0; i < model_->n(); ++i) {
      rng::GaussianStream stream(seed, rng::Domain::kSampling, static_cast<std::uint32_t>(i),
                                 trial);
      for (Eigen::Index r = 0; r < p; ++r) g(r) = stream.next();
      const std::size_t grp = model_->group_of(i);
      if (const auto* d = std::get_if<VectorXd>(&roots_[grp])) {
        x.col(i) = d->cwiseProduct(g);
      } else {
        x.col(i).noalias() = std::get<MatrixXd>(roots_[grp]) * g;
      }
      if (shifts_[grp]) x.col(i) += *shifts_[grp];
    }
    return x;
  }

 private:
  const EnsembleModel* model_;
  std::vector<std::variant<VectorXd, MatrixXd>> roots_;
  std::vector<std::optional<VectorXd>> shifts_;
};

inline MatrixXd sample_matrix(const EnsembleModel& model, std::uint64_t seed,
                              std::uint32_t trial = 0) {
  return Sampler(model).sample(seed, trial);
}

/// Eigenvalues of (1/n) X X^T, nonincreasing, with tiny negatives set to 0.
inline std::vector<double> spectrum(const MatrixXd& x) {
  const MatrixXd m = (x * x.transpose()) / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + m.rows());
  std::reverse(out.begin(), out.end());
  for (double& v : out) {
    if (v < 0.0 && v > -1e-10) v = 0.0;
  }
  return out;
}

struct EigenPairs {
  VectorXd values;   ///< nonincreasing
  MatrixXd vectors;  ///< matching columns
};

inline EigenPairs eigen_decompose(const MatrixXd& x) {
  const MatrixXd m = (x * x.transpose()) / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  EigenPairs out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < out.values.size(); ++k) {
    if (out.values(k) < 0.0 && out.values(k) > -1e-10) out.values(k) = 0.0;
  }
  return out;
}

/// (1/p) sum_k 1/(lambda_k - z).
inline cplx empirical_stieltjes(std::span<const double> eigs, cplx z) {
  if (eigs.empty()) throw ConfigError("empirical_stieltjes: empty spectrum");
  cplx g = 0.0;
  for (const double l : eigs) {
    if (std::abs(l - z) < 1e-12) throw DomainError("empirical_stieltjes: z is at an eigenvalue");
    g += 1.0 / (l - z);
  }
  return g / static_cast<double>(eigs.size());
}

/// Re tr(Pi A), Pi the spectral projector on eigenvalues in [lo, hi].
inline double empirical_projection(const EigenPairs& eig, const MatrixXcd& a, double lo,
                                   double hi) {
  if (a.rows() != eig.vectors.rows() || a.cols() != eig.vectors.rows()) {
    throw ConfigError("empirical_projection: A must be p x p");
  }
  double out = 0.0;
  for (Eigen::Index k = 0; k < eig.values.size(); ++k) {
    if (eig.values(k) < lo || eig.values(k) > hi) continue;
    const Eigen::VectorXcd v = eig.vectors.col(k).cast<cplx>();
    out += v.dot(a * v).real();
  }
  return out;
}

inline double empirical_projection(const MatrixXd& x, const MatrixXcd& a, double lo, double hi) {
  return empirical_projection(eigen_decompose(x), a, lo, hi);
}

/// max_i |z / Lambda_i - Qc_ii| with Lambda_i = z - (1/n) x_i^T Q_{-i} x_i
/// from explicit leave-one-out resolvents and Qc = (I_n - X^T X / (z n))^{-1}.
inline double resolvent_identity_check(const MatrixXd& x, cplx z) {
  detail::require_upper(z);
  const Eigen::Index p = x.rows(), n = x.cols();
  if (n < 1 || p < 1) throw ConfigError("resolvent_identity_check: empty matrix");
  const MatrixXcd xc = x.cast<cplx>();
  const double nn = static_cast<double>(n);
  Eigen::PartialPivLU<MatrixXcd> co(MatrixXcd::Identity(n, n) -
                                    (xc.transpose() * xc) / (z * nn));
  if (!(co.rcond() > 1e-14)) throw DomainError("co-resolvent is singular");
  const MatrixXcd qc = co.inverse();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    MatrixXcd rest(p, n - 1);
    rest << xc.leftCols(i), xc.rightCols(n - 1 - i);
    Eigen::PartialPivLU<MatrixXcd> lu(MatrixXcd::Identity(p, p) -
                                      (rest * rest.transpose()) / (z * nn));
    if (!(lu.rcond() > 1e-14)) throw DomainError("leave-one-out resolvent is singular");
    const Eigen::VectorXcd xi = xc.col(i);
    const cplx lambda = z - xi.dot(lu.solve(xi)) / nn;
    worst = std::max(worst, std::abs(z / lambda - qc(i, i)));
  }
  return worst;
}

struct SampleBatch {
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<std::vector<double>> eigenvalue_sets;
};

inline SampleBatch sample_batch(const EnsembleModel& model, std::size_t trials,
                                std::uint64_t seed, unsigned jobs = 1) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  const Sampler sampler(model);
  SampleBatch batch{seed, trials, std::vector<std::vector<double>>(trials)};
  parallel_for(trials, jobs, [&](std::size_t t) {
    batch.eigenvalue_sets[t] = spectrum(sampler.sample(seed, static_cast<std::uint32_t>(t)));
  });
  return batch;
}

// ---------------------------------------------------------------------------
// Comparison report
// ---------------------------------------------------------------------------

struct NamedFunctional {
  std::string name;
  MatrixXcd a;
  ContourSpec contour;
};

struct CompareConfig {
  double y = 1e-3;
  /// Histogram bin width; by default max eigenvalue / 30.
  std::optional<double> bin_width;
  /// Trapezoid sub-intervals per bin for the predicted bin masses.
  int sub_points = 8;
  /// Height and resolution of the line where Stieltjes transforms are compared.
  double g_line_y = 0.5;
  std::size_t g_points = 33;
  std::vector<NamedFunctional> functionals;
};

struct Histogram {
  std::vector<double> edges;
  std::vector<double> mass;       ///< fraction of pooled eigenvalues per bin
  std::vector<double> frequency;  ///< mass / width, a density
};

struct FunctionalRow {
  ProjectionRow predicted;
  double empirical_mean = 0.0;
  std::optional<double> empirical_std;
  std::size_t trials = 0;
};

struct ComparisonReport {
  DensityGrid grid;
  Histogram histogram;
  std::vector<double> predicted_mass;
  double sup_g_error = 0.0;
  double l1_density_error = 0.0;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<FunctionalRow> functionals;
};

namespace detail {

inline Histogram make_histogram(const std::vector<std::vector<double>>& sets, double width) {
  double top = 0.0;
  std::size_t total = 0;
  for (const auto& s : sets) {
    for (const double v : s) top = std::max(top, v);
    total += s.size();
  }
  const auto bins = static_cast<std::size_t>(std::ceil(top / width)) + 1;
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = width * static_cast<double>(b);
  std::vector<std::size_t> counts(bins, 0);
  for (const auto& s : sets) {
    for (const double v : s) {
      const auto b = static_cast<std::size_t>(std::max(0.0, v) / width);
      ++counts[std::min(b, bins - 1)];
    }
  }
  for (std::size_t b = 0; b < bins; ++b) {
    h.mass.push_back(static_cast<double>(counts[b]) / static_cast<double>(total));
    h.frequency.push_back(h.mass.back() / width);
  }
  return h;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::optional<double> sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Predicted mass of [lo, hi] for each consecutive pair of edges, by the
/// trapezoid rule on sub_points cells per bin. The atom at zero goes into
/// the first bin.
inline std::vector<double> predicted_bin_mass(const DensityGrid& grid, std::size_t bins,
                                              int sub_points) {
  std::vector<double> out(bins, 0.0);
  const auto sub = static_cast<std::size_t>(sub_points);
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t j = 0; j < sub; ++j) {
      const std::size_t k = b * sub + j;
      out[b] += 0.5 * (grid.density[k] + grid.density[k + 1]) * (grid.xs[k + 1] - grid.xs[k]);
    }
  }
  if (bins > 0) out[0] += grid.dirac_at_zero;
  return out;
}

inline ComparisonReport compare(const EnsembleModel& model, std::size_t trials,
                                std::uint64_t seed, const CompareConfig& config,
                                const SolverOptions& opts = {}, unsigned jobs = 1) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (config.sub_points < 1) throw ConfigError("sub_points must be >= 1");
  if (config.g_points < 2) throw ConfigError("g_points must be >= 2");
  if (config.bin_width && !(*config.bin_width > 0.0)) throw ConfigError("bin width must be > 0");

  const Sampler sampler(model);
  const bool need_vectors = !config.functionals.empty();
  std::vector<std::vector<double>> sets(trials);
  std::vector<std::vector<double>> fvalues(config.functionals.size(),
                                           std::vector<double>(trials));
  parallel_for(trials, jobs, [&](std::size_t t) {
    const MatrixXd x = sampler.sample(seed, static_cast<std::uint32_t>(t));
    if (!need_vectors) {
      sets[t] = spectrum(x);
      return;
    }
    const EigenPairs eig = eigen_decompose(x);
    sets[t].assign(eig.values.data(), eig.values.data() + eig.values.size());
    for (std::size_t f = 0; f < config.functionals.size(); ++f) {
      const auto& fn = config.functionals[f];
      fvalues[f][t] = empirical_projection(eig, fn.a, fn.contour.a, fn.contour.b);
    }
  });

  ComparisonReport report;
  report.seed = seed;
  report.trials = trials;

  double top = 0.0;
  for (const auto& s : sets) top = std::max(top, s.front());
  const double width = config.bin_width.value_or(top > 0.0 ? top / 30.0 : 1.0);
  report.histogram = detail::make_histogram(sets, width);
  const std::size_t bins = report.histogram.mass.size();

  const std::size_t points = bins * static_cast<std::size_t>(config.sub_points) + 1;
  std::vector<double> xs(points);
  for (std::size_t k = 0; k < points; ++k) {
    xs[k] = width * static_cast<double>(k) / config.sub_points;
  }
  report.grid = density_grid(model, std::span<const double>(xs), config.y, opts, jobs);
  report.predicted_mass = predicted_bin_mass(report.grid, bins, config.sub_points);
  for (std::size_t b = 0; b < bins; ++b) {
    report.l1_density_error += std::abs(report.histogram.mass[b] - report.predicted_mass[b]);
  }

  std::vector<double> pooled;
  for (const auto& s : sets) pooled.insert(pooled.end(), s.begin(), s.end());
  const double x_end = std::max(support_upper_bound(model), top);
  std::vector<cplx> line(config.g_points);
  for (std::size_t k = 0; k < config.g_points; ++k) {
    line[k] = cplx(x_end * static_cast<double>(k) / static_cast<double>(config.g_points - 1),
                   config.g_line_y);
  }
  const auto solved = detail::chunked_solve(model, line, opts, jobs);
  for (std::size_t k = 0; k < line.size(); ++k) {
    const cplx diff = empirical_stieltjes(pooled, line[k]) - stieltjes_g(model, solved[k]);
    report.sup_g_error = std::max(report.sup_g_error, std::abs(diff));
  }

  // Functionals sharing a contour share the node solves.
  std::map<std::tuple<double, double, double, int>, ContourSolution> contours;
  for (std::size_t f = 0; f < config.functionals.size(); ++f) {
    const auto& fn = config.functionals[f];
    const auto key = std::make_tuple(fn.contour.a, fn.contour.b, fn.contour.h,
                                     fn.contour.nodes_per_side);
    auto it = contours.find(key);
    if (it == contours.end()) {
      it = contours.try_emplace(key, model, fn.contour, opts, nullptr, jobs).first;
    }
    FunctionalRow row;
    row.predicted = {fn.name, fn.contour, it->second.project(fn.a)};
    row.empirical_mean = detail::mean(fvalues[f]);
    row.empirical_std = detail::sample_std(fvalues[f]);
    row.trials = trials;
    report.functionals.push_back(std::move(row));
  }
  return report;
}

inline void write_histogram_csv(std::ostream& os, const Histogram& h) {
  using detail::csv_number;
  os << "bin_lo,bin_hi,frequency\n";
  for (std::size_t b = 0; b < h.frequency.size(); ++b) {
    os << csv_number(h.edges[b]) << "," << csv_number(h.edges[b + 1]) << ","
       << csv_number(h.frequency[b]) << "\n";
  }
}

inline void write_functionals_csv(std::ostream& os, const std::vector<FunctionalRow>& rows) {
  write_projection_header(os);
  os << ",empirical_mean,empirical_std,trials\n";
  for (const auto& row : rows) {
    write_projection_fields(os, row.predicted);
    os << "," << detail::csv_number(row.empirical_mean) << ",";
    if (row.empirical_std) {
      os << detail::csv_number(*row.empirical_std);
    } else {
      os << "null";
    }
    os << "," << row.trials << "\n";
  }
}

inline nlohmann::json summary_json(const ComparisonReport& report) {
  return {{"sup_g_error", report.sup_g_error},
          {"l1_density_error", report.l1_density_error},
          {"seed", report.seed},
          {"rng_name", std::string(rng::kGeneratorName)},
          {"gaussian_method", std::string(rng::kGaussianMethod)},
          {"trials", report.trials}};
}

}  // namespace specequiv
