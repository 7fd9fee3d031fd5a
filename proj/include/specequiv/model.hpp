#pragma once

// Covariance ensembles: n columns with individual second-moment matrices
// Sigma_i = C_i + mu_i mu_i^T, stored in structured form.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "specequiv/error.hpp"
#include "specequiv/rng.hpp"

namespace specequiv {

using cplx = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Covariance kinds
// ---------------------------------------------------------------------------

struct DenseCov {
  MatrixXd matrix;
};

struct DiagonalCov {
  VectorXd entries;
};

struct ScaledIdentityCov {
  double sigma2 = 1.0;
};

/// (P^T)^power diag(base) P^power.
struct RotatedFamilyCov {
  VectorXd base;
  std::shared_ptr<const MatrixXd> rotation;
  int power = 0;
};

/// Second moment sigma2 * I + u u^T. Samples are u + sigma g, so u plays the
/// role of the column mean and a group using this kind has no other mean.
struct LowRankPlusIdentityCov {
  VectorXd u;
  double sigma2 = 1.0;
};

using CovarianceSpec = std::variant<DenseCov, DiagonalCov, ScaledIdentityCov,
                                    RotatedFamilyCov, LowRankPlusIdentityCov>;

inline const char* kind_name(const CovarianceSpec& spec) {
  constexpr const char* names[] = {"dense", "diagonal", "scaled_identity",
                                   "rotated_family", "low_rank_plus_identity"};
  return names[spec.index()];
}

/// Consecutive columns sharing one mean and one centered covariance.
struct ColumnGroup {
  std::optional<VectorXd> mean;
  CovarianceSpec cov;
  std::size_t count = 1;
};

struct ValidationOptions {
  /// Warn when the smallest eigenvalue of some Sigma_i is below this floor.
  double min_eigenvalue = 1e-6;
  /// Warn when some ||mu_i|| exceeds this bound.
  double max_mean_norm = 10.0;
};

/// Complex per-column weights w_i for (1/n) sum_i w_i Sigma_i.
class MixtureWeights {
 public:
  explicit MixtureWeights(VectorXcd w) : w_(std::move(w)) {
    if (!w_.allFinite()) throw ConfigError("mixture weights must be finite");
  }
  const VectorXcd& values() const noexcept { return w_; }
  Eigen::Index size() const noexcept { return w_.size(); }

 private:
  VectorXcd w_;
};

// ---------------------------------------------------------------------------
// Seeded helpers
// ---------------------------------------------------------------------------

/// Orthogonal matrix from the QR factorization of a seeded standard Gaussian
/// matrix, with column signs fixed so that R has a positive diagonal.
inline MatrixXd seeded_orthogonal(Eigen::Index p, std::uint64_t seed) {
  MatrixXd g(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    rng::GaussianStream stream(seed, rng::Domain::kOrthogonal,
                               static_cast<std::uint32_t>(j), 0);
    for (Eigen::Index i = 0; i < p; ++i) g(i, j) = stream.next();
  }
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(p, p);
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < p; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

/// Seeded vector with i.i.d. N(0, scale^2) entries.
inline VectorXd seeded_gaussian_vector(Eigen::Index p, std::uint64_t seed,
                                       double scale = 1.0) {
  VectorXd v(p);
  rng::GaussianStream stream(seed, rng::Domain::kMeanVector, 0, 0);
  for (Eigen::Index i = 0; i < p; ++i) v(i) = scale * stream.next();
  return v;
}

// ---------------------------------------------------------------------------
// EnsembleModel
// ---------------------------------------------------------------------------

class EnsembleModel {
 public:
  /// Structure class of a group's centered covariance, used to pick the
  /// cheapest trace and resolvent representation.
  enum class Structure { kDiagonal, kLowRank, kDense };

  EnsembleModel(Eigen::Index p, std::vector<ColumnGroup> groups,
                ValidationOptions validation = {})
      : p_(p), groups_(std::move(groups)), validation_(validation) {
    if (p_ < 1) throw ConfigError("p must be >= 1");
    if (groups_.empty()) throw ConfigError("model needs at least one column");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].count < 1) throw ConfigError("column group with zero count");
      for (std::size_t c = 0; c < groups_[g].count; ++c) column_group_.push_back(g);
    }
    n_ = static_cast<Eigen::Index>(column_group_.size());
    prepare();
  }

  Eigen::Index p() const noexcept { return p_; }
  Eigen::Index n() const noexcept { return n_; }
  std::size_t group_count() const noexcept { return groups_.size(); }
  const std::vector<ColumnGroup>& groups() const noexcept { return groups_; }
  const ColumnGroup& group(std::size_t g) const { return groups_.at(g); }
  std::size_t group_of(Eigen::Index column) const {
    check_column(column);
    return column_group_[static_cast<std::size_t>(column)];
  }
  std::size_t group_size(std::size_t g) const { return groups_.at(g).count; }
  /// Index of the first column belonging to group g.
  Eigen::Index first_column(std::size_t g) const { return first_column_.at(g); }

  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  Structure structure(std::size_t g) const { return structure_.at(g); }
  bool has_mean(std::size_t g) const { return groups_.at(g).mean.has_value(); }

  /// Diagonal of C_g for diagonal and low-rank structured groups (for
  /// low-rank groups this is sigma2 * 1).
  const VectorXd& diagonal_part(std::size_t g) const { return diag_part_.at(g); }

  /// Realized centered covariance C_g for dense structured groups.
  const MatrixXd& dense_covariance(std::size_t g) const {
    return dense_cov_.at(dense_slot_.at(g));
  }

  /// ||(1/n) sum_i Sigma_i|| (spectral norm), the deterministic proxy for nu.
  double nu_hat() const noexcept { return nu_hat_; }
  /// sup_i tr(Sigma_i).
  double max_trace() const noexcept { return max_trace_; }
  /// True when every Sigma_i is diagonal (diagonal structure, no means).
  bool all_diagonal() const noexcept { return all_diagonal_; }

  /// Covariance part of a group as a dense matrix (everything except the
  /// explicit mean; low-rank groups include u u^T).
  MatrixXd realize_covariance(std::size_t g) const {
    switch (structure_.at(g)) {
      case Structure::kDiagonal:
        return diag_part_[g].asDiagonal();
      case Structure::kLowRank: {
        const auto& lr = std::get<LowRankPlusIdentityCov>(groups_[g].cov);
        MatrixXd out = lr.u * lr.u.transpose();
        out.diagonal().array() += lr.sigma2;
        return out;
      }
      case Structure::kDense:
        return dense_covariance(g);
    }
    return {};
  }

  /// Sigma_g = C_g + mu_g mu_g^T as a dense matrix.
  MatrixXd realize_group_sigma(std::size_t g) const {
    MatrixXd out = realize_covariance(g);
    if (groups_.at(g).mean) out += *groups_[g].mean * groups_[g].mean->transpose();
    return out;
  }

  /// (1/n) sum_g W_g Sigma_g for per-group weights W_g (already summed over
  /// the group's columns).
  MatrixXcd mixture_from_group_weights(const VectorXcd& group_w) const {
    MatrixXcd out = MatrixXcd::Zero(p_, p_);
    VectorXcd diag = VectorXcd::Zero(p_);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const cplx w = group_w(static_cast<Eigen::Index>(g));
      switch (structure_[g]) {
        case Structure::kDiagonal:
          diag += w * diag_part_[g].cast<cplx>();
          break;
        case Structure::kLowRank: {
          const auto& lr = std::get<LowRankPlusIdentityCov>(groups_[g].cov);
          diag.array() += w * lr.sigma2;
          out.noalias() += w * (lr.u * lr.u.transpose()).cast<cplx>();
          break;
        }
        case Structure::kDense:
          break;
      }
    }
    out.diagonal() += diag;
    if (!dense_cov_.empty()) {
      VectorXd wr(dense_groups_.size()), wi(dense_groups_.size());
      for (std::size_t k = 0; k < dense_groups_.size(); ++k) {
        const cplx w = group_w(static_cast<Eigen::Index>(dense_groups_[k]));
        wr(static_cast<Eigen::Index>(k)) = w.real();
        wi(static_cast<Eigen::Index>(k)) = w.imag();
      }
      const VectorXd re = dense_stack_ * wr;
      const VectorXd im = dense_stack_ * wi;
      out.real() += Eigen::Map<const MatrixXd>(re.data(), p_, p_);
      out.imag() += Eigen::Map<const MatrixXd>(im.data(), p_, p_);
    }
    if (mean_stack_.cols() > 0) {
      VectorXcd wm(mean_stack_.cols());
      for (Eigen::Index k = 0; k < mean_stack_.cols(); ++k) {
        wm(k) = group_w(static_cast<Eigen::Index>(mean_groups_[static_cast<std::size_t>(k)]));
      }
      const MatrixXcd mc = mean_stack_.cast<cplx>();
      out.noalias() += mc * wm.asDiagonal() * mc.transpose();
    }
    out /= static_cast<double>(n_);
    return out;
  }

  /// Sums per-column weights into per-group weights.
  VectorXcd group_weights(const VectorXcd& column_w) const {
    if (column_w.size() != n_) {
      throw ConfigError("weight vector has " + std::to_string(column_w.size()) +
                        " entries, model has n = " + std::to_string(n_));
    }
    VectorXcd out = VectorXcd::Zero(static_cast<Eigen::Index>(groups_.size()));
    for (Eigen::Index i = 0; i < n_; ++i) {
      out(static_cast<Eigen::Index>(column_group_[static_cast<std::size_t>(i)])) += column_w(i);
    }
    return out;
  }

  /// tr(Sigma_g M) for every group g.
  VectorXcd group_traces(const MatrixXcd& m) const {
    check_square(m);
    const VectorXcd diag = m.diagonal();
    const cplx trace = diag.sum();
    VectorXcd out(static_cast<Eigen::Index>(groups_.size()));
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const auto gi = static_cast<Eigen::Index>(g);
      switch (structure_[g]) {
        case Structure::kDiagonal:
          if (std::holds_alternative<ScaledIdentityCov>(groups_[g].cov)) {
            out(gi) = std::get<ScaledIdentityCov>(groups_[g].cov).sigma2 * trace;
          } else {
            out(gi) = diag_part_[g].cast<cplx>().dot(diag);
          }
          break;
        case Structure::kLowRank: {
          const auto& lr = std::get<LowRankPlusIdentityCov>(groups_[g].cov);
          const VectorXcd uc = lr.u.cast<cplx>();
          out(gi) = lr.sigma2 * trace + uc.dot(m * uc);
          break;
        }
        case Structure::kDense:
          break;
      }
    }
    if (!dense_cov_.empty()) {
      const MatrixXd re = m.real();
      const MatrixXd im = m.imag();
      const VectorXd tr_re =
          dense_stack_.transpose() * Eigen::Map<const VectorXd>(re.data(), p_ * p_);
      const VectorXd tr_im =
          dense_stack_.transpose() * Eigen::Map<const VectorXd>(im.data(), p_ * p_);
      for (std::size_t k = 0; k < dense_groups_.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        out(static_cast<Eigen::Index>(dense_groups_[k])) = cplx(tr_re(ki), tr_im(ki));
      }
    }
    if (mean_stack_.cols() > 0) {
      const MatrixXcd mc = mean_stack_.cast<cplx>();
      const MatrixXcd mmu = m * mc;
      for (Eigen::Index k = 0; k < mean_stack_.cols(); ++k) {
        out(static_cast<Eigen::Index>(mean_groups_[static_cast<std::size_t>(k)])) +=
            mc.col(k).dot(mmu.col(k));
      }
    }
    return out;
  }

  /// Stacked means (p x m) and the group owning each column.
  const MatrixXd& mean_stack() const noexcept { return mean_stack_; }
  const std::vector<std::size_t>& mean_groups() const noexcept { return mean_groups_; }

 private:
  void check_column(Eigen::Index column) const {
    if (column < 0 || column >= n_) {
      throw ConfigError("column index " + std::to_string(column) +
                        " out of range [0, " + std::to_string(n_) + ")");
    }
  }

  void check_square(const MatrixXcd& m) const {
    if (m.rows() != p_ || m.cols() != p_) {
      throw ConfigError("matrix must be " + std::to_string(p_) + "x" +
                        std::to_string(p_));
    }
  }

  void prepare() {
    const std::size_t groups = groups_.size();
    structure_.resize(groups);
    diag_part_.resize(groups);
    first_column_.resize(groups);
    Eigen::Index col = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      first_column_[g] = col;
      col += static_cast<Eigen::Index>(groups_[g].count);
    }

    for (std::size_t g = 0; g < groups; ++g) {
      const auto& grp = groups_[g];
      const std::string where = "column group " + std::to_string(g) + " (" +
                                kind_name(grp.cov) + ")";
      if (grp.mean) {
        if (grp.mean->size() != p_) throw ConfigError(where + ": mean has wrong length");
        if (!grp.mean->allFinite()) throw ConfigError(where + ": mean is not finite");
      }
      std::visit([&](const auto& spec) { prepare_group(g, spec, where); }, grp.cov);
    }

    dense_stack_.resize(p_ * p_, static_cast<Eigen::Index>(dense_cov_.size()));
    for (std::size_t k = 0; k < dense_cov_.size(); ++k) {
      dense_stack_.col(static_cast<Eigen::Index>(k)) =
          Eigen::Map<const VectorXd>(dense_cov_[k].data(), p_ * p_);
    }

    std::size_t mean_count = 0;
    for (const auto& grp : groups_) mean_count += grp.mean ? 1 : 0;
    mean_stack_.resize(p_, static_cast<Eigen::Index>(mean_count));
    for (std::size_t g = 0, k = 0; g < groups; ++g) {
      if (!groups_[g].mean) continue;
      mean_stack_.col(static_cast<Eigen::Index>(k++)) = *groups_[g].mean;
      mean_groups_.push_back(g);
    }

    all_diagonal_ = mean_count == 0 &&
                    std::all_of(structure_.begin(), structure_.end(),
                                [](Structure s) { return s == Structure::kDiagonal; });

    // Summary statistics and assumption checks.
    VectorXcd ones = VectorXcd::Zero(static_cast<Eigen::Index>(groups));
    for (std::size_t g = 0; g < groups; ++g) {
      ones(static_cast<Eigen::Index>(g)) = static_cast<double>(groups_[g].count);
    }
    const MatrixXd mean_sigma = mixture_from_group_weights(ones).real();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(mean_sigma, Eigen::EigenvaluesOnly);
    nu_hat_ = std::max(std::abs(es.eigenvalues().maxCoeff()),
                       std::abs(es.eigenvalues().minCoeff()));

    max_trace_ = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      double tr = structure_[g] == Structure::kDense ? dense_covariance(g).trace()
                                                      : diag_part_[g].sum();
      if (structure_[g] == Structure::kLowRank) {
        tr += std::get<LowRankPlusIdentityCov>(groups_[g].cov).u.squaredNorm();
      }
      if (groups_[g].mean) tr += groups_[g].mean->squaredNorm();
      max_trace_ = std::max(max_trace_, tr);
      check_assumptions(g);
    }
  }

  void prepare_group(std::size_t g, const DenseCov& spec, const std::string& where) {
    if (spec.matrix.rows() != p_ || spec.matrix.cols() != p_) {
      throw ConfigError(where + ": matrix must be p x p");
    }
    if (!spec.matrix.allFinite()) throw ConfigError(where + ": matrix is not finite");
    const double scale = std::max(1.0, spec.matrix.cwiseAbs().maxCoeff());
    if ((spec.matrix - spec.matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ConfigError(where + ": matrix is not symmetric");
    }
    MatrixXd sym = 0.5 * (spec.matrix + spec.matrix.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
      throw ConfigError(where + ": covariance is not positive semidefinite (min eigenvalue " +
                        std::to_string(es.eigenvalues().minCoeff()) + ")");
    }
    add_dense(g, std::move(sym));
  }

  void prepare_group(std::size_t g, const DiagonalCov& spec, const std::string& where) {
    if (spec.entries.size() != p_) throw ConfigError(where + ": needs p entries");
    if (!spec.entries.allFinite() || spec.entries.minCoeff() < 0.0) {
      throw ConfigError(where + ": diagonal entries must be finite and >= 0");
    }
    structure_[g] = Structure::kDiagonal;
    diag_part_[g] = spec.entries;
  }

  void prepare_group(std::size_t g, const ScaledIdentityCov& spec, const std::string& where) {
    if (!(spec.sigma2 > 0.0) || !std::isfinite(spec.sigma2)) {
      throw ConfigError(where + ": sigma2 must be > 0");
    }
    structure_[g] = Structure::kDiagonal;
    diag_part_[g] = VectorXd::Constant(p_, spec.sigma2);
  }

  void prepare_group(std::size_t g, const RotatedFamilyCov& spec, const std::string& where) {
    if (spec.base.size() != p_) throw ConfigError(where + ": base diagonal needs p entries");
    if (!spec.base.allFinite() || spec.base.minCoeff() < 0.0) {
      throw ConfigError(where + ": base diagonal entries must be finite and >= 0");
    }
    if (spec.power < 0) throw ConfigError(where + ": rotation count must be >= 0");
    if (spec.power == 0) {
      structure_[g] = Structure::kDiagonal;
      diag_part_[g] = spec.base;
      return;
    }
    if (!spec.rotation || spec.rotation->rows() != p_ || spec.rotation->cols() != p_) {
      throw ConfigError(where + ": rotation matrix must be p x p");
    }
    const MatrixXd& rot = *spec.rotation;
    if ((rot.transpose() * rot - MatrixXd::Identity(p_, p_)).cwiseAbs().maxCoeff() > 1e-8) {
      throw ConfigError(where + ": rotation matrix is not orthogonal");
    }
    // Consecutive rotated groups usually share P with powers k, k+1, ...
    MatrixXd power_mat;
    if (last_rotation_ == spec.rotation.get() && last_power_ >= 0 &&
        last_power_ <= spec.power) {
      power_mat = last_power_mat_;
      for (int k = last_power_; k < spec.power; ++k) power_mat = power_mat * rot;
    } else {
      power_mat = MatrixXd::Identity(p_, p_);
      for (int k = 0; k < spec.power; ++k) power_mat = power_mat * rot;
    }
    last_rotation_ = spec.rotation.get();
    last_power_ = spec.power;
    last_power_mat_ = power_mat;
    MatrixXd c = power_mat.transpose() * spec.base.asDiagonal() * power_mat;
    c = 0.5 * (c + c.transpose()).eval();
    add_dense(g, std::move(c));
  }

  void prepare_group(std::size_t g, const LowRankPlusIdentityCov& spec, const std::string& where) {
    if (spec.u.size() != p_) throw ConfigError(where + ": u needs p entries");
    if (!spec.u.allFinite() || !(spec.sigma2 >= 0.0) || !std::isfinite(spec.sigma2)) {
      throw ConfigError(where + ": u must be finite and sigma2 >= 0");
    }
    if (groups_[g].mean) {
      throw ConfigError(where + ": u already acts as the column mean; drop the separate mean");
    }
    structure_[g] = Structure::kLowRank;
    diag_part_[g] = VectorXd::Constant(p_, spec.sigma2);
  }

  void add_dense(std::size_t g, MatrixXd c) {
    structure_[g] = Structure::kDense;
    dense_slot_.resize(groups_.size(), static_cast<std::size_t>(-1));
    dense_slot_[g] = dense_cov_.size();
    dense_groups_.push_back(g);
    dense_cov_.push_back(std::move(c));
  }

  void check_assumptions(std::size_t g) {
    const auto& grp = groups_[g];
    const std::string cols = "columns " + std::to_string(first_column_[g]) + ".." +
                             std::to_string(first_column_[g] +
                                            static_cast<Eigen::Index>(grp.count) - 1);
    if (grp.mean && grp.mean->norm() > validation_.max_mean_norm) {
      warnings_.push_back(cols + ": ||mu_i|| = " + std::to_string(grp.mean->norm()) +
                          " exceeds the bounded-mean threshold " +
                          std::to_string(validation_.max_mean_norm));
    }
    double lambda_min = 0.0;
    if (structure_[g] == Structure::kDiagonal && !grp.mean) {
      lambda_min = diag_part_[g].minCoeff();
    } else if (p_ <= 512) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(realize_group_sigma(g),
                                                 Eigen::EigenvaluesOnly);
      lambda_min = es.eigenvalues().minCoeff();
    } else {
      lambda_min = structure_[g] == Structure::kDense ? 0.0 : diag_part_[g].minCoeff();
    }
    if (lambda_min < validation_.min_eigenvalue) {
      warnings_.push_back(cols + ": smallest eigenvalue of Sigma_i is " +
                          std::to_string(lambda_min) + ", below the floor " +
                          std::to_string(validation_.min_eigenvalue));
    }
  }

  Eigen::Index p_ = 0;
  Eigen::Index n_ = 0;
  std::vector<ColumnGroup> groups_;
  ValidationOptions validation_;
  std::vector<std::size_t> column_group_;
  std::vector<Eigen::Index> first_column_;
  std::vector<Structure> structure_;
  std::vector<VectorXd> diag_part_;
  std::vector<MatrixXd> dense_cov_;
  std::vector<std::size_t> dense_slot_;
  std::vector<std::size_t> dense_groups_;
  MatrixXd dense_stack_;
  MatrixXd mean_stack_;
  std::vector<std::size_t> mean_groups_;
  std::vector<std::string> warnings_;
  double nu_hat_ = 0.0;
  double max_trace_ = 0.0;
  bool all_diagonal_ = false;

  const MatrixXd* last_rotation_ = nullptr;
  int last_power_ = -1;
  MatrixXd last_power_mat_;
};

// ---------------------------------------------------------------------------
// Free operations
// ---------------------------------------------------------------------------

/// Sigma_i = C_i + mu_i mu_i^T (0-based column index).
inline MatrixXd realize_sigma(const EnsembleModel& model, Eigen::Index column) {
  return model.realize_group_sigma(model.group_of(column));
}

/// (1/n) sum_i w_i Sigma_i.
inline MatrixXcd mixture_matrix(const EnsembleModel& model, const MixtureWeights& w) {
  return model.mixture_from_group_weights(model.group_weights(w.values()));
}

/// tr(Sigma_i M), using the structure of Sigma_i.
inline cplx trace_against(const EnsembleModel& model, Eigen::Index column,
                          const MatrixXcd& m) {
  const std::size_t g = model.group_of(column);
  if (m.rows() != model.p() || m.cols() != model.p()) {
    throw ConfigError("trace_against: matrix must be p x p");
  }
  const auto& grp = model.group(g);
  cplx out;
  switch (model.structure(g)) {
    case EnsembleModel::Structure::kDiagonal:
      out = model.diagonal_part(g).cast<cplx>().dot(m.diagonal());
      break;
    case EnsembleModel::Structure::kLowRank: {
      const auto& lr = std::get<LowRankPlusIdentityCov>(grp.cov);
      const VectorXcd uc = lr.u.cast<cplx>();
      out = lr.sigma2 * m.trace() + uc.dot(m * uc);
      break;
    }
    case EnsembleModel::Structure::kDense:
      // Sigma symmetric: tr(Sigma M) = sum_ab Sigma_ab M_ab.
      out = (model.dense_covariance(g).cast<cplx>().array() * m.array()).sum();
      break;
  }
  if (grp.mean) {
    const VectorXcd mu = grp.mean->cast<cplx>();
    out += mu.dot(m * mu);
  }
  return out;
}

/// Orthogonal projector onto the span of the column means (low-rank u
/// vectors count as means).
inline MatrixXd mean_projector(const EnsembleModel& model) {
  std::vector<VectorXd> cols;
  for (const auto& grp : model.groups()) {
    if (grp.mean) cols.push_back(*grp.mean);
    if (const auto* lr = std::get_if<LowRankPlusIdentityCov>(&grp.cov)) cols.push_back(lr->u);
  }
  if (cols.empty()) throw ConfigError("model has no mean vectors");
  MatrixXd u(model.p(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) u.col(static_cast<Eigen::Index>(k)) = cols[k];
  Eigen::ColPivHouseholderQR<MatrixXd> qr(u);
  const Eigen::Index rank = qr.rank();
  if (rank == 0) throw ConfigError("model mean vectors are all zero");
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(model.p(), rank);
  return q * q.transpose();
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

namespace detail {

inline VectorXd json_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must contain only numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline MatrixXd json_matrix(const nlohmann::json& j, Eigen::Index p, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != p) {
    throw ConfigError(what + " must be an array of " + std::to_string(p) + " rows");
  }
  MatrixXd m(p, p);
  for (Eigen::Index r = 0; r < p; ++r) {
    const VectorXd row = json_vector(j[static_cast<std::size_t>(r)], what);
    if (row.size() != p) throw ConfigError(what + " rows must have p entries");
    m.row(r) = row.transpose();
  }
  return m;
}

inline std::uint64_t json_seed(const nlohmann::json& j, const std::string& what) {
  if (!j.contains("seed") || !j["seed"].is_number_integer()) {
    throw ConfigError(what + " needs an integer \"seed\"");
  }
  return j["seed"].get<std::uint64_t>();
}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field \"") + key + "\": " + e.what());
  }
}

}  // namespace detail

/// Builds a model from a parsed configuration document.
inline EnsembleModel model_from_json(const nlohmann::json& doc) {
  using detail::json_get;
  if (!doc.is_object()) throw ConfigError("model config must be a JSON object");
  if (!doc.contains("p") || !doc["p"].is_number_integer()) {
    throw ConfigError("model config needs an integer \"p\"");
  }
  if (!doc.contains("n") || !doc["n"].is_number_integer()) {
    throw ConfigError("model config needs an integer \"n\"");
  }
  const auto p = doc["p"].get<Eigen::Index>();
  const auto n = doc["n"].get<Eigen::Index>();
  if (p < 1 || n < 1) throw ConfigError("p and n must be >= 1");
  if (!doc.contains("columns") || !doc["columns"].is_array() || doc["columns"].empty()) {
    throw ConfigError("model config needs a non-empty \"columns\" array");
  }

  ValidationOptions validation;
  if (doc.contains("validation")) {
    const auto& v = doc["validation"];
    validation.min_eigenvalue = json_get(v, "min_eigenvalue", validation.min_eigenvalue);
    validation.max_mean_norm = json_get(v, "max_mean_norm", validation.max_mean_norm);
  }

  std::vector<ColumnGroup> groups;
  Eigen::Index total = 0;
  for (std::size_t e = 0; e < doc["columns"].size(); ++e) {
    const auto& entry = doc["columns"][e];
    const std::string where = "columns[" + std::to_string(e) + "]";
    if (!entry.is_object()) throw ConfigError(where + " must be an object");
    const auto repeat = json_get<long long>(entry, "repeat", 1);
    if (repeat < 1) throw ConfigError(where + ": repeat must be >= 1");
    const auto transform = json_get<std::string>(entry, "transform", "none");
    if (transform != "none") {
      throw ConfigError(where + ": unsupported column transform \"" + transform + "\"");
    }

    std::optional<VectorXd> mean;
    if (entry.contains("mean") && !entry["mean"].is_null()) {
      const auto& m = entry["mean"];
      if (m.is_object()) {
        mean = seeded_gaussian_vector(p, detail::json_seed(m, where + ".mean"),
                                      json_get(m, "scale", 1.0));
      } else {
        mean = detail::json_vector(m, where + ".mean");
      }
      if (mean->size() != p) throw ConfigError(where + ".mean must have p entries");
    }

    if (!entry.contains("cov") || !entry["cov"].is_object()) {
      throw ConfigError(where + " needs a \"cov\" object");
    }
    const auto& cov = entry["cov"];
    const auto kind = json_get<std::string>(cov, "kind", "");
    const std::string cw = where + ".cov";

    auto push = [&](CovarianceSpec spec, std::size_t count) {
      groups.push_back(ColumnGroup{mean, std::move(spec), count});
    };

    if (kind == "dense") {
      if (!cov.contains("matrix")) throw ConfigError(cw + " needs \"matrix\"");
      push(DenseCov{detail::json_matrix(cov["matrix"], p, cw + ".matrix")},
           static_cast<std::size_t>(repeat));
    } else if (kind == "diagonal") {
      if (!cov.contains("entries")) throw ConfigError(cw + " needs \"entries\"");
      push(DiagonalCov{detail::json_vector(cov["entries"], cw + ".entries")},
           static_cast<std::size_t>(repeat));
    } else if (kind == "scaled_identity") {
      if (!cov.contains("sigma2")) throw ConfigError(cw + " needs \"sigma2\"");
      push(ScaledIdentityCov{json_get(cov, "sigma2", 0.0)}, static_cast<std::size_t>(repeat));
    } else if (kind == "low_rank_plus_identity") {
      if (!cov.contains("u")) throw ConfigError(cw + " needs \"u\"");
      push(LowRankPlusIdentityCov{detail::json_vector(cov["u"], cw + ".u"),
                                  json_get(cov, "sigma2", 1.0)},
           static_cast<std::size_t>(repeat));
    } else if (kind == "rotated_family") {
      if (!cov.contains("diag")) throw ConfigError(cw + " needs \"diag\"");
      if (!cov.contains("P")) throw ConfigError(cw + " needs \"P\"");
      const VectorXd base = detail::json_vector(cov["diag"], cw + ".diag");
      std::shared_ptr<const MatrixXd> rot;
      if (cov["P"].is_object()) {
        rot = std::make_shared<const MatrixXd>(
            seeded_orthogonal(p, detail::json_seed(cov["P"], cw + ".P")));
      } else {
        rot = std::make_shared<const MatrixXd>(detail::json_matrix(cov["P"], p, cw + ".P"));
      }
      const int k0 = json_get(cov, "k", 0);
      const int step = json_get(cov, "k_step", 1);
      if (k0 < 0 || step < 0) throw ConfigError(cw + ": k and k_step must be >= 0");
      if (step == 0) {
        push(RotatedFamilyCov{base, rot, k0}, static_cast<std::size_t>(repeat));
      } else {
        for (long long r = 0; r < repeat; ++r) {
          push(RotatedFamilyCov{base, rot, k0 + static_cast<int>(r) * step}, 1);
        }
      }
    } else {
      throw ConfigError(cw + ": unknown covariance kind \"" + kind + "\"");
    }
    total += repeat;
  }
  if (total != n) {
    throw ConfigError("columns expand to " + std::to_string(total) +
                      " entries but n = " + std::to_string(n));
  }
  return EnsembleModel(p, std::move(groups), validation);
}

inline EnsembleModel parse_model(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return model_from_json(doc);
}

/// Reads and validates a model configuration file.
inline EnsembleModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace specequiv
