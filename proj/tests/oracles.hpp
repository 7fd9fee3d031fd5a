#pragma once

// Independent reference values for the tests: closed-form scalar roots, the
// Marchenko-Pastur law, dense brute-force traces, and random models.

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "specequiv/specequiv.hpp"

namespace oracle {

using specequiv::cplx;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// Roots of a x^2 + b x + c = 0.
inline std::pair<cplx, cplx> quadratic_roots(cplx a, cplx b, cplx c) {
  const cplx disc = std::sqrt(b * b - 4.0 * a * c);
  return {(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)};
}

/// Fixed point of lambda = z - c lambda / (lambda - 1), i.e. all Sigma_i = I
/// with c = p/n: lambda^2 - (1 + z - c) lambda + z = 0, root with
/// Im lambda >= Im z.
inline cplx mp_lambda(cplx z, double c) {
  const auto [r1, r2] = quadratic_roots(1.0, -(1.0 + z - c), z);
  return r1.imag() >= r2.imag() ? r1 : r2;
}

/// Marchenko-Pastur Stieltjes transform for ratio c = p/n: root of
/// c z m^2 + (z - 1 + c) m + 1 = 0 with Im m > 0.
inline cplx mp_stieltjes(cplx z, double c) {
  const auto [r1, r2] = quadratic_roots(c * z, z - 1.0 + c, 1.0);
  return r1.imag() > 0.0 ? r1 : r2;
}

inline double mp_density(double x, double c) {
  const double a = (1.0 - std::sqrt(c)) * (1.0 - std::sqrt(c));
  const double b = (1.0 + std::sqrt(c)) * (1.0 + std::sqrt(c));
  if (x <= a || x >= b) return 0.0;
  return std::sqrt((b - x) * (x - a)) / (2.0 * M_PI * c * x);
}

inline specequiv::EnsembleModel mp_model(Eigen::Index p, Eigen::Index n, double sigma2 = 1.0) {
  return specequiv::EnsembleModel(
      p, {specequiv::ColumnGroup{std::nullopt, specequiv::ScaledIdentityCov{sigma2},
                                 static_cast<std::size_t>(n)}});
}

/// tr(A B) by explicit product.
inline cplx dense_trace(const MatrixXcd& a, const MatrixXcd& b) { return (a * b).trace(); }

inline MatrixXd random_psd(std::mt19937_64& gen, Eigen::Index p) {
  std::normal_distribution<double> nd;
  MatrixXd g(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g(i, j) = nd(gen);
  }
  return g * g.transpose() / static_cast<double>(p) + 0.1 * MatrixXd::Identity(p, p);
}

inline MatrixXd random_orthogonal(std::mt19937_64& gen, Eigen::Index p) {
  std::normal_distribution<double> nd;
  MatrixXd g(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g(i, j) = nd(gen);
  }
  Eigen::HouseholderQR<MatrixXd> qr(g);
  return qr.householderQ() * MatrixXd::Identity(p, p);
}

inline VectorXd random_vector(std::mt19937_64& gen, Eigen::Index p, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  VectorXd v(p);
  for (Eigen::Index i = 0; i < p; ++i) v(i) = nd(gen);
  return v;
}

inline MatrixXcd random_complex(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd;
  MatrixXcd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = cplx(nd(gen), nd(gen));
  }
  return m;
}

/// A random covariance spec of the given kind (0 dense, 1 diagonal, 2 scaled
/// identity, 3 rotated family, 4 low rank plus identity).
inline specequiv::CovarianceSpec random_spec(std::mt19937_64& gen, Eigen::Index p, int kind) {
  std::uniform_real_distribution<double> ud(0.2, 3.0);
  switch (kind) {
    case 0:
      return specequiv::DenseCov{random_psd(gen, p)};
    case 1: {
      VectorXd d(p);
      for (Eigen::Index i = 0; i < p; ++i) d(i) = ud(gen);
      return specequiv::DiagonalCov{d};
    }
    case 2:
      return specequiv::ScaledIdentityCov{ud(gen)};
    case 3: {
      VectorXd d(p);
      for (Eigen::Index i = 0; i < p; ++i) d(i) = ud(gen);
      auto rot = std::make_shared<const MatrixXd>(random_orthogonal(gen, p));
      return specequiv::RotatedFamilyCov{d, rot, std::uniform_int_distribution<int>(0, 3)(gen)};
    }
    default:
      return specequiv::LowRankPlusIdentityCov{random_vector(gen, p, 0.7), ud(gen)};
  }
}

/// Small model mixing every covariance kind, with some means.
inline specequiv::EnsembleModel random_model(std::mt19937_64& gen, Eigen::Index p_max = 6,
                                             int groups_max = 4) {
  const Eigen::Index p = std::uniform_int_distribution<Eigen::Index>(1, p_max)(gen);
  const int groups = std::uniform_int_distribution<int>(1, groups_max)(gen);
  std::vector<specequiv::ColumnGroup> cols;
  for (int g = 0; g < groups; ++g) {
    const int kind = std::uniform_int_distribution<int>(0, 4)(gen);
    specequiv::ColumnGroup grp;
    grp.cov = random_spec(gen, p, kind);
    grp.count = std::uniform_int_distribution<std::size_t>(1, 3)(gen);
    if (kind != 4 && std::bernoulli_distribution(0.4)(gen)) grp.mean = random_vector(gen, p, 0.5);
    cols.push_back(std::move(grp));
  }
  return specequiv::EnsembleModel(p, std::move(cols));
}

/// Random z in the upper half-plane, Im z in [0.05, 3].
inline cplx random_z(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> re(-2.0, 6.0);
  std::uniform_real_distribution<double> im(0.05, 3.0);
  return {re(gen), im(gen)};
}

/// Random diagonal in the solver domain: Im L > 0 and Im(L/z) > 0, built as
/// z * w with arg w in (0, pi - arg z) so both conditions hold.
inline specequiv::UpperDiagonal random_domain_point(std::mt19937_64& gen, Eigen::Index n,
                                                   cplx z) {
  const double arg_z = std::arg(z);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  std::uniform_real_distribution<double> mag(0.3, 3.0);
  VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double theta = frac(gen) * (M_PI - arg_z);
    v(i) = z * std::polar(mag(gen), theta);
  }
  return specequiv::UpperDiagonal(v);
}

}  // namespace oracle
