#pragma once

// Quadratic vector equation -1/m = z 1 + a + S m on the upper half-plane,
// solved through x = -1/m and the map x -> z 1 + a - S (1/x).

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "specequiv/error.hpp"
#include "specequiv/iteration.hpp"
#include "specequiv/semimetric.hpp"

namespace specequiv {

struct QveProblem {
  cplx z;
  Eigen::VectorXd a;
  Eigen::MatrixXd s;  ///< entrywise >= 0, not necessarily symmetric

  void validate() const {
    detail::require_upper(z);
    if (a.size() < 1) throw ConfigError("qve: a must be nonempty");
    if (s.rows() != a.size() || s.cols() != a.size()) throw ConfigError("qve: S must be n x n");
    if (!a.allFinite() || !s.allFinite()) throw ConfigError("qve: a and S must be finite");
    if (s.minCoeff() < 0.0) throw ConfigError("qve: S must have nonnegative entries");
  }
};

struct QveResult {
  Eigen::VectorXcd m;
  std::size_t iterations = 0;
  double residual_ds = 0.0;
  double tolerance = 0.0;
  /// || -1/m - (z 1 + a + S m) ||_inf
  double residual = 0.0;
};

/// x -> z 1 + a - S (1/x).
inline Eigen::VectorXcd qve_map(const QveProblem& prob, const Eigen::VectorXcd& x) {
  Eigen::VectorXcd out = prob.a.cast<cplx>() - prob.s.cast<cplx>() * x.cwiseInverse();
  out.array() += prob.z;
  return out;
}

/// Entrywise upper bound Im z + (S 1)_i / Im z on Im of every image.
inline Eigen::VectorXd qve_imag_bound(const QveProblem& prob) {
  const double y = prob.z.imag();
  return (prob.s * Eigen::VectorXd::Ones(prob.a.size())).array() / y + y;
}

inline double qve_residual(const QveProblem& prob, const Eigen::VectorXcd& m) {
  Eigen::VectorXcd lhs = -m.cwiseInverse();
  Eigen::VectorXcd rhs = prob.a.cast<cplx>() + prob.s.cast<cplx>() * m;
  rhs.array() += prob.z;
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

/// Solves from x0 = z 1 + a, or from the given start in the upper half-plane.
inline QveResult solve_qve(const QveProblem& prob, const SolverOptions& opts = {},
                           const std::optional<Eigen::VectorXcd>& start = std::nullopt) {
  prob.validate();
  opts.validate();
  Eigen::VectorXcd x0;
  if (start) {
    if (start->size() != prob.a.size()) throw ConfigError("qve: start has wrong length");
    if (!(start->imag().minCoeff() > 0.0)) {
      throw DomainError("qve: start must lie in the upper half-plane");
    }
    x0 = *start;
  } else {
    x0 = prob.a.cast<cplx>();
    x0.array() += prob.z;
  }
  auto upper = [](const Eigen::VectorXcd& v) { return v.imag().minCoeff() > 0.0; };
  auto outcome = detail::iterate_fixed_point(
      [&](const Eigen::VectorXcd& v) { return qve_map(prob, v); }, upper, std::move(x0), opts,
      "qve");
  QveResult out;
  out.m = outcome.image.unaryExpr([](cplx v) { return -1.0 / v; });
  out.iterations = outcome.iterations;
  out.residual_ds = outcome.residual;
  out.tolerance = outcome.tolerance;
  out.residual = qve_residual(prob, out.m);
  return out;
}

inline QveProblem qve_from_json(const nlohmann::json& doc) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!doc.contains(key)) throw ConfigError(std::string("qve problem: missing \"") + key + "\"");
    return doc.at(key);
  };
  try {
    QveProblem prob;
    const auto& z = need("z");
    if (!z.is_array() || z.size() != 2) throw ConfigError("qve problem: z must be [re, im]");
    prob.z = cplx(z[0].get<double>(), z[1].get<double>());
    const auto& a = need("a");
    if (!a.is_array()) throw ConfigError("qve problem: a must be an array");
    const auto n = static_cast<Eigen::Index>(a.size());
    prob.a.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) prob.a(i) = a[static_cast<std::size_t>(i)].get<double>();
    const auto& s = need("S");
    if (!s.is_array() || static_cast<Eigen::Index>(s.size()) != n) {
      throw ConfigError("qve problem: S must have n rows");
    }
    prob.s.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = s[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
        throw ConfigError("qve problem: S must be n x n");
      }
      for (Eigen::Index c = 0; c < n; ++c) prob.s(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    prob.validate();
    return prob;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("qve problem: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("qve problem: ") + e.what());
  }
}

}  // namespace specequiv
