#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "specequiv/contour.hpp"

using namespace specequiv;

namespace {

std::string configs_dir() { return SPECEQUIV_CONFIG_DIR; }

MatrixXcd random_hermitian(std::mt19937_64& gen, Eigen::Index p) {
  const MatrixXcd g = oracle::random_complex(gen, p, p);
  return 0.5 * (g + g.adjoint());
}

}  // namespace

TEST(ContourSpec, Validation) {
  EXPECT_THROW((ContourSpec{1.0, 1.0, 0.5, 64}.validate()), ConfigError);
  EXPECT_THROW((ContourSpec{0.0, 1.0, 0.0, 64}.validate()), ConfigError);
  EXPECT_THROW((ContourSpec{0.0, 1.0, 0.5, 7}.validate()), ConfigError);
  EXPECT_NO_THROW((ContourSpec{0.0, 1.0, 0.5, 8}.validate()));
}

TEST(ContourSpec, MarginAgainstSupport) {
  SupportEstimate s;
  s.intervals = {{1.0, 2.0}, {5.0, 6.0}};
  EXPECT_NO_THROW((ContourSpec{0.5, 3.0, 0.5, 16}.check_margin(s)));
  EXPECT_THROW((ContourSpec{0.9, 3.0, 0.5, 16}.check_margin(s)), ConfigError);
  EXPECT_THROW((ContourSpec{0.5, 5.5, 0.5, 16}.check_margin(s)), ConfigError);
}

TEST(ProjectFunctional, WholeSupportIdentityGivesP) {
  const auto mp = oracle::mp_model(200, 400);
  const ContourSpec c{0.05, 3.0, 0.5, 64};
  const auto pr = project_functional(mp, MatrixXcd::Identity(200, 200), c);
  EXPECT_NEAR(pr.value, 200.0, 2.0);
  EXPECT_LT(std::abs(pr.imag_residue), 1e-6 * (1.0 + std::abs(pr.value)));
  EXPECT_NEAR(eigenvalue_count(mp, c).value, 200.0, 2.0);
}

TEST(ProjectFunctional, EmptyContourGivesZero) {
  const auto mp = oracle::mp_model(200, 400);
  const ContourSpec c{10.0, 11.0, 0.5, 64};
  EXPECT_NEAR(project_functional(mp, MatrixXcd::Identity(200, 200), c).value, 0.0, 0.2);
  EXPECT_NEAR(eigenvalue_count(mp, c).value, 0.0, 0.2);
}

TEST(ProjectFunctional, NodeCountConvergence) {
  const auto m = load_model(configs_dir() + "/two_bulk.json");
  std::mt19937_64 gen(61);
  const MatrixXcd a = random_hermitian(gen, m.p());
  for (const ContourSpec base : {ContourSpec{3.2, 18.0, 1.0, 64}, ContourSpec{0.0, 3.0, 0.5, 64}}) {
    ContourSpec fine = base;
    fine.nodes_per_side = 128;
    const ContourSolution s64(m, base), s128(m, fine);
    const double v64 = s64.count().value, v128 = s128.count().value;
    EXPECT_LT(std::abs(v64 - v128) / std::abs(v128), 1e-3);
    const double a64 = s64.project(a).value, a128 = s128.project(a).value;
    EXPECT_LT(std::abs(a64 - a128) / std::abs(a128), 1e-3);
  }
}

TEST(ProjectFunctional, DeformationInvariance) {
  const auto m = load_model(configs_dir() + "/two_bulk.json");
  const ContourSpec narrow{3.2, 17.0, 0.8, 64};
  const ContourSpec wide{3.0, 22.0, 3.0, 96};
  const double a = eigenvalue_count(m, narrow).value;
  const double b = eigenvalue_count(m, wide).value;
  EXPECT_LT(std::abs(a - b) / std::abs(b), 5e-3);
  // 20 of the 80 directions carry variance 8.
  EXPECT_NEAR(a, 20.0, 0.2);
}

TEST(ProjectFunctional, HermitianIsRealAndLinear) {
  const auto m = load_model(configs_dir() + "/two_bulk.json");
  const ContourSolution sol(m, {3.2, 18.0, 1.0, 64});
  std::mt19937_64 gen(62);
  const MatrixXcd a = random_hermitian(gen, m.p());
  const MatrixXcd b = random_hermitian(gen, m.p());
  const auto pa = sol.project(a);
  const auto pb = sol.project(b);
  EXPECT_LT(std::abs(pa.imag_residue), 1e-6 * (1.0 + std::abs(pa.value)));
  EXPECT_LT(std::abs(pb.imag_residue), 1e-6 * (1.0 + std::abs(pb.value)));
  const double alpha = 1.7, beta = -0.6;
  const auto pab = sol.project(alpha * a + beta * b);
  EXPECT_LT(std::abs(pab.value - (alpha * pa.value + beta * pb.value)), 1e-10);
}

// For a Hermitian A with complex entries the conjugated half uses conj(A),
// so the result must agree with projecting the real symmetric part plus the
// purely imaginary antisymmetric part separately.
TEST(ProjectFunctional, ComplexHermitianSplitsIntoParts) {
  const auto m = oracle::mp_model(20, 40);
  const ContourSolution sol(m, {0.05, 3.0, 0.5, 64});
  std::mt19937_64 gen(63);
  const MatrixXcd a = random_hermitian(gen, 20);
  const MatrixXcd re = a.real().cast<cplx>();
  const MatrixXcd im = a - re;
  EXPECT_LT(std::abs(sol.project(a).value - sol.project(re).value - sol.project(im).value),
            1e-10);
  // The MP resolvent is a multiple of I, so only the trace of A matters.
  EXPECT_NEAR(sol.project(a).value, a.trace().real(), 0.01 * (1.0 + std::abs(a.trace())));
}

TEST(ProjectFunctional, TenClassOutliers) {
  const auto m = load_model(configs_dir() + "/ten_classes.json");
  const ContourSolution sol(m, {7.5, 45.0, 2.0, 64});
  EXPECT_NEAR(sol.count().value, 10.0, 0.5);
  const double uu = sol.project(mean_projector(m).cast<cplx>()).value;
  EXPECT_LT(std::abs(uu - 9.4009) / 9.4009, 0.10);
}

TEST(ProjectFunctional, MarginCheckAndErrors) {
  const auto mp = oracle::mp_model(50, 100);
  const auto support = support_scan(mp, 1e-3);
  EXPECT_THROW(ContourSolution(mp, {0.05, 3.0, 0.5, 32}, {}, &support), ConfigError);
  EXPECT_NO_THROW(ContourSolution(mp, {-0.5, 3.5, 0.5, 32}, {}, &support));
  const ContourSolution sol(mp, {-0.5, 3.5, 0.5, 32});
  EXPECT_THROW(sol.project(MatrixXcd::Identity(3, 3)), ConfigError);
  EXPECT_EQ(sol.node_count(), 64u);
}

TEST(ProjectFunctional, CsvFormat) {
  std::ostringstream os;
  write_projection_csv(os, {{"identity", {0.5, 3.0, 0.25, 64}, {199.5, 1e-9}}});
  EXPECT_EQ(os.str(),
            "functional,contour_a,contour_b,contour_h,nodes,value,imag_residue\n"
            "identity,0.5,3,0.25,64,199.5,1.0000000000000001e-09\n");
}
