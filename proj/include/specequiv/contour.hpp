#pragma once

// Cauchy integrals of tr(A Rt(z)) over rectangles [a, b] x [-h, h]. Only the
// upper half is solved; the lower half follows from Rt(conj z) = conj Rt(z).

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/csv.hpp"
#include "specequiv/equivalent.hpp"
#include "specequiv/error.hpp"
#include "specequiv/fixedpoint.hpp"
#include "specequiv/model.hpp"
#include "specequiv/resolvent.hpp"

namespace specequiv {

struct ContourSpec {
  double a = 0.0;
  double b = 1.0;
  double h = 0.5;
  int nodes_per_side = 64;

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(b) || !(a < b)) {
      throw ConfigError("contour: need finite a < b");
    }
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("contour: need h > 0");
    if (nodes_per_side < 8) throw ConfigError("contour: need at least 8 nodes per side");
  }

  /// The vertical sides must stay at least h/2 away from the support.
  void check_margin(const SupportEstimate& support) const {
    for (const double x : {a, b}) {
      if (support.distance(x) < h / 2) {
        throw ConfigError("contour side at x = " + std::to_string(x) +
                          " is closer than h/2 to the estimated support");
      }
    }
  }
};

struct Projection {
  double value = 0.0;
  double imag_residue = 0.0;
};

/// Fixed points at the nodes of a contour, reusable across functionals.
///
/// The upper half path runs up the right side, right to left along the top,
/// and down the left side. Each side is split into equal cells with one
/// midpoint node per cell, so no node touches the real axis: the top side
/// has nodes_per_side cells and each vertical half ceil(nodes_per_side/2).
class ContourSolution {
 public:
  ContourSolution(const EnsembleModel& model, const ContourSpec& contour,
                  const SolverOptions& opts = {}, const SupportEstimate* support = nullptr,
                  unsigned jobs = 1)
      : model_(&model), contour_(contour), plan_(model) {
    contour.validate();
    if (support) contour.check_margin(*support);
    const auto top = static_cast<std::size_t>(contour.nodes_per_side);
    const std::size_t half = (top + 1) / 2;
    const double a = contour.a, b = contour.b, h = contour.h;
    const double dy = h / static_cast<double>(half);
    const double dx = (b - a) / static_cast<double>(top);
    for (std::size_t j = 0; j < half; ++j) {
      add(cplx(b, (static_cast<double>(j) + 0.5) * dy), cplx(0.0, dy));
    }
    for (std::size_t j = 0; j < top; ++j) {
      add(cplx(b - (static_cast<double>(j) + 0.5) * dx, h), cplx(-dx, 0.0));
    }
    for (std::size_t j = 0; j < half; ++j) {
      add(cplx(a, h - (static_cast<double>(j) + 0.5) * dy), cplx(0.0, -dy));
    }
    solved_ = detail::chunked_solve(model, nodes_, opts, jobs);
  }

  const ContourSpec& contour() const noexcept { return contour_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::vector<FixedPointResult>& solutions() const noexcept { return solved_; }

  /// -(1/2 pi i) times the counterclockwise integral of tr(A Rt(z)); the
  /// sign makes each enclosed eigenvalue contribute v^T A v.
  Projection project(const MatrixXcd& a) const {
    if (a.rows() != model_->p() || a.cols() != model_->p()) {
      throw ConfigError("functional matrix must be p x p");
    }
    const bool real = a.imag().cwiseAbs().maxCoeff() == 0.0;
    const MatrixXcd a_conj = a.conjugate();
    cplx upper = 0.0, mirrored = 0.0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      const auto eval = plan_.evaluate(weights(k));
      const cplx scale = -1.0 / nodes_[k];  // Rt = -(1/z) Qt
      const cplx f = scale * eval.trace_product(a);
      upper += f * steps_[k];
      mirrored += (real ? f : scale * eval.trace_product(a_conj)) * steps_[k];
    }
    return finish(upper, mirrored);
  }

  /// Enclosed eigenvalue mass, p times the integral of gt.
  Projection count() const {
    cplx upper = 0.0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      upper += static_cast<double>(model_->p()) * stieltjes_g(*model_, solved_[k]) * steps_[k];
    }
    return finish(upper, upper);
  }

 private:
  void add(cplx z, cplx dz) {
    nodes_.push_back(z);
    steps_.push_back(dz);
  }

  Eigen::VectorXcd weights(std::size_t k) const {
    Eigen::VectorXcd w(static_cast<Eigen::Index>(model_->group_count()));
    for (std::size_t g = 0; g < model_->group_count(); ++g) {
      const auto gi = static_cast<Eigen::Index>(g);
      w(gi) = static_cast<double>(model_->group_size(g)) / solved_[k].group_lambda(gi);
    }
    return w;
  }

  // Full integral = J - conj(J~), J~ the upper integral with conj(A).
  static Projection finish(cplx upper, cplx mirrored) {
    const cplx full = upper - std::conj(mirrored);
    const cplx value = -full / (2.0 * std::numbers::pi * cplx(0.0, 1.0));
    return {value.real(), value.imag()};
  }

  const EnsembleModel* model_;
  ContourSpec contour_;
  detail::ResolventPlan plan_;
  std::vector<cplx> nodes_;
  std::vector<cplx> steps_;
  std::vector<FixedPointResult> solved_;
};

/// tr(Pi A) for the eigenvalues of (1/n) X X^T enclosed by the contour.
inline Projection project_functional(const EnsembleModel& model, const MatrixXcd& a,
                                     const ContourSpec& contour, const SolverOptions& opts = {},
                                     const SupportEstimate* support = nullptr, unsigned jobs = 1) {
  return ContourSolution(model, contour, opts, support, jobs).project(a);
}

/// Number of eigenvalues enclosed by the contour.
inline Projection eigenvalue_count(const EnsembleModel& model, const ContourSpec& contour,
                                   const SolverOptions& opts = {},
                                   const SupportEstimate* support = nullptr, unsigned jobs = 1) {
  return ContourSolution(model, contour, opts, support, jobs).count();
}

struct ProjectionRow {
  std::string functional;
  ContourSpec contour;
  Projection projection;
};

inline void write_projection_header(std::ostream& os) {
  os << "functional,contour_a,contour_b,contour_h,nodes,value,imag_residue";
}

inline void write_projection_fields(std::ostream& os, const ProjectionRow& row) {
  using detail::csv_number;
  os << row.functional << "," << csv_number(row.contour.a) << "," << csv_number(row.contour.b)
     << "," << csv_number(row.contour.h) << "," << row.contour.nodes_per_side << ","
     << csv_number(row.projection.value) << "," << csv_number(row.projection.imag_residue);
}

inline void write_projection_csv(std::ostream& os, const std::vector<ProjectionRow>& rows) {
  write_projection_header(os);
  os << "\n";
  for (const auto& row : rows) {
    write_projection_fields(os, row);
    os << "\n";
  }
}

}  // namespace specequiv
