#pragma once

// Structured evaluation of Q = (I_p - (1/n) sum_g W_g Sigma_g)^{-1}.
//
// Three forms, chosen once per model:
//   diagonal  every Sigma_g diagonal              O(p G) per evaluation
//   low-rank  diagonal + r rank-one terms (means, O(p r^2 + r^3)
//             low-rank covariances), r <= p/2
//   dense     anything else                       O(p^3 + p^2 G)

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/error.hpp"
#include "specequiv/model.hpp"

namespace specequiv::detail {

class ResolventPlan {
 public:
  enum class Form { kDiagonal, kLowRank, kDense };

  explicit ResolventPlan(const EnsembleModel& model) : model_(&model) {
    const std::size_t groups = model.group_count();
    bool any_dense = false;
    std::size_t rank = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      const auto s = model.structure(g);
      any_dense |= s == EnsembleModel::Structure::kDense;
      rank += (s == EnsembleModel::Structure::kLowRank ? 1 : 0) + (model.has_mean(g) ? 1 : 0);
    }
    if (model.all_diagonal()) {
      form_ = Form::kDiagonal;
    } else if (!any_dense && 2 * rank <= static_cast<std::size_t>(model.p())) {
      form_ = Form::kLowRank;
      v_.resize(model.p(), static_cast<Eigen::Index>(rank));
      mean_col_.assign(groups, -1);
      lowrank_col_.assign(groups, -1);
      Eigen::Index c = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        if (model.has_mean(g)) {
          v_.col(c) = *model.group(g).mean;
          owner_.push_back(g);
          mean_col_[g] = c++;
        }
        if (model.structure(g) == EnsembleModel::Structure::kLowRank) {
          v_.col(c) = std::get<LowRankPlusIdentityCov>(model.group(g).cov).u;
          owner_.push_back(g);
          lowrank_col_[g] = c++;
        }
      }
    } else {
      form_ = Form::kDense;
    }
  }

  Form form() const noexcept { return form_; }
  const EnsembleModel& model() const noexcept { return *model_; }

  /// Evaluation of Q for per-group weights W_g.
  class Eval {
   public:
    Eval(const ResolventPlan& plan, const Eigen::VectorXcd& group_w) : plan_(&plan) {
      const auto& model = plan.model();
      const double n = static_cast<double>(model.n());
      const Eigen::Index p = model.p();
      if (plan.form_ == Form::kDense) {
        const MatrixXcd m = model.mixture_from_group_weights(group_w);
        Eigen::PartialPivLU<MatrixXcd> lu(MatrixXcd::Identity(p, p) - m);
        if (!(lu.rcond() > 1e-14)) throw DomainError("resolvent matrix is singular");
        dense_ = lu.inverse();
        return;
      }
      Eigen::VectorXcd shift = Eigen::VectorXcd::Zero(p);
      for (std::size_t g = 0; g < model.group_count(); ++g) {
        shift += (group_w(static_cast<Eigen::Index>(g)) / n) *
                 model.diagonal_part(g).cast<cplx>();
      }
      binv_.resize(p);
      for (Eigen::Index j = 0; j < p; ++j) {
        const cplx b = 1.0 - shift(j);
        if (std::abs(b) < 1e-300) throw DomainError("resolvent matrix is singular");
        binv_(j) = 1.0 / b;
      }
      if (plan.form_ == Form::kDiagonal) {
        diag_ = binv_;
        return;
      }
      const Eigen::Index r = plan.v_.cols();
      Eigen::VectorXcd wr(r);
      for (Eigen::Index c = 0; c < r; ++c) {
        wr(c) = group_w(static_cast<Eigen::Index>(plan.owner_[static_cast<std::size_t>(c)])) / n;
      }
      const MatrixXcd vc = plan.v_.cast<cplx>();
      binv_v_ = binv_.asDiagonal() * vc;
      const MatrixXcd h = vc.transpose() * binv_v_;
      Eigen::PartialPivLU<MatrixXcd> lu(MatrixXcd::Identity(r, r) - wr.asDiagonal() * h);
      if (!(lu.rcond() > 1e-14)) throw DomainError("resolvent matrix is singular");
      k_ = lu.solve(MatrixXcd(wr.asDiagonal()));
      diag_ = binv_ + (binv_v_ * k_).cwiseProduct(binv_v_).rowwise().sum();
      vqv_ = h + h * k_ * h;
    }

    /// tr(Sigma_g Q) for every group.
    Eigen::VectorXcd group_traces() const {
      const auto& model = plan_->model();
      if (plan_->form_ == Form::kDense) return model.group_traces(dense_);
      const cplx trace = diag_.sum();
      Eigen::VectorXcd out(static_cast<Eigen::Index>(model.group_count()));
      for (std::size_t g = 0; g < model.group_count(); ++g) {
        const auto gi = static_cast<Eigen::Index>(g);
        const auto& spec = model.group(g).cov;
        if (model.structure(g) == EnsembleModel::Structure::kLowRank) {
          const auto c = plan_->lowrank_col_[g];
          out(gi) = std::get<LowRankPlusIdentityCov>(spec).sigma2 * trace + vqv_(c, c);
        } else if (std::holds_alternative<ScaledIdentityCov>(spec)) {
          out(gi) = std::get<ScaledIdentityCov>(spec).sigma2 * trace;
        } else {
          out(gi) = model.diagonal_part(g).cast<cplx>().dot(diag_);
        }
        if (plan_->form_ == Form::kLowRank && plan_->mean_col_[g] >= 0) {
          const auto c = plan_->mean_col_[g];
          out(gi) += vqv_(c, c);
        }
      }
      return out;
    }

    cplx trace() const {
      return plan_->form_ == Form::kDense ? dense_.trace() : diag_.sum();
    }

    /// tr(A Q) without forming Q in the structured forms.
    cplx trace_product(const MatrixXcd& a) const {
      switch (plan_->form_) {
        case Form::kDense:
          return (a.array() * dense_.transpose().array()).sum();
        case Form::kDiagonal:
          return a.diagonal().cwiseProduct(diag_).sum();
        case Form::kLowRank: {
          const MatrixXcd t = binv_v_.transpose() * (a * binv_v_);
          return a.diagonal().cwiseProduct(binv_).sum() +
                 (t.array() * k_.transpose().array()).sum();
        }
      }
      return {};
    }

    /// Q as a dense p x p matrix.
    MatrixXcd dense() const {
      switch (plan_->form_) {
        case Form::kDense:
          return dense_;
        case Form::kDiagonal:
          return diag_.asDiagonal();
        case Form::kLowRank: {
          MatrixXcd out = binv_v_ * k_ * binv_v_.transpose();
          out.diagonal() += binv_;
          return out;
        }
      }
      return {};
    }

   private:
    const ResolventPlan* plan_;
    MatrixXcd dense_;
    Eigen::VectorXcd binv_;
    Eigen::VectorXcd diag_;
    MatrixXcd binv_v_;
    MatrixXcd k_;
    MatrixXcd vqv_;
  };

  Eval evaluate(const Eigen::VectorXcd& group_w) const { return Eval(*this, group_w); }

 private:
  const EnsembleModel* model_;
  Form form_ = Form::kDense;
  MatrixXd v_;
  std::vector<std::size_t> owner_;
  std::vector<Eigen::Index> mean_col_;
  std::vector<Eigen::Index> lowrank_col_;
};

}  // namespace specequiv::detail
