#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "specequiv/empirical.hpp"

using namespace specequiv;

namespace {

const cplx I(0.0, 1.0);

std::string configs_dir() { return SPECEQUIV_CONFIG_DIR; }

MatrixXd random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(gen);
  }
  return m;
}

}  // namespace

TEST(Rng, PhiloxKnownAnswer) {
  // Random123 known-answer vector for philox4x32-10 with zero counter and key.
  const auto out = rng::philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Rng, GaussianMoments) {
  rng::GaussianStream s(5, rng::Domain::kSampling, 3, 1);
  double sum = 0.0, sq = 0.0;
  const int count = 200000;
  for (int k = 0; k < count; ++k) {
    const double v = s.next();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / count, 0.0, 0.01);
  EXPECT_NEAR(sq / count, 1.0, 0.01);
}

TEST(SampleMatrix, ZeroCovarianceGivesMeans) {
  const VectorXd mu{{1.5, -2.0, 0.25}};
  const EnsembleModel m(3, {ColumnGroup{mu, DiagonalCov{VectorXd::Zero(3)}, 4}});
  const MatrixXd x = sample_matrix(m, 9);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(x.col(i), mu);
}

TEST(SampleMatrix, MarchenkoPasturCovarianceIsIdentity) {
  const auto mp = oracle::mp_model(4, 10000);
  const MatrixXd x = sample_matrix(mp, 2024);
  const MatrixXd cov = x * x.transpose() / 10000.0;
  EXPECT_LT((cov - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(SampleMatrix, DenseAndLowRankMoments) {
  std::mt19937_64 gen(71);
  const MatrixXd c = oracle::random_psd(gen, 3);
  const VectorXd mu{{0.5, 0.0, -1.0}};
  const VectorXd u{{1.0, 2.0, 0.0}};
  const EnsembleModel m(3, {ColumnGroup{mu, DenseCov{c}, 20000},
                            ColumnGroup{std::nullopt, LowRankPlusIdentityCov{u, 0.5}, 20000}});
  const MatrixXd x = sample_matrix(m, 3);
  const MatrixXd a = x.leftCols(20000), b = x.rightCols(20000);
  EXPECT_LT((a.rowwise().mean() - mu).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((b.rowwise().mean() - u).cwiseAbs().maxCoeff(), 0.05);
  const MatrixXd second_a = a * a.transpose() / 20000.0;
  const MatrixXd second_b = b * b.transpose() / 20000.0;
  EXPECT_LT((second_a - realize_sigma(m, 0)).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_LT((second_b - realize_sigma(m, 20000)).cwiseAbs().maxCoeff(), 0.1);
}

TEST(SampleMatrix, Deterministic) {
  const auto m = load_model(configs_dir() + "/two_bulk_rotated.json");
  const MatrixXd a = sample_matrix(m, 42, 3);
  EXPECT_EQ(a, sample_matrix(m, 42, 3));
  EXPECT_NE(a, sample_matrix(m, 42, 4));
  EXPECT_NE(a, sample_matrix(m, 43, 3));
}

TEST(Spectrum, Examples) {
  for (const double v : spectrum(MatrixXd::Zero(4, 6))) EXPECT_EQ(v, 0.0);
  const MatrixXd row{{1.0, 2.0, -3.0}};
  const auto one = spectrum(row);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0], 14.0 / 3.0, 1e-14);
  std::mt19937_64 gen(72);
  const auto s = spectrum(random_matrix(gen, 3, 2));
  EXPECT_LT(std::abs(s[2]), 1e-10);
  EXPECT_GT(s[1], 1e-6);
}

TEST(Spectrum, RankAndOrder) {
  std::mt19937_64 gen(73);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = std::uniform_int_distribution<Eigen::Index>(1, 30)(gen);
    const auto n = std::uniform_int_distribution<Eigen::Index>(1, 30)(gen);
    const auto s = spectrum(random_matrix(gen, p, n));
    ASSERT_EQ(static_cast<Eigen::Index>(s.size()), p);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) EXPECT_GE(s[k], s[k + 1]);
    for (const double v : s) EXPECT_GE(v, 0.0);
    const Eigen::Index zeros = std::max<Eigen::Index>(0, p - n);
    for (Eigen::Index k = p - zeros; k < p; ++k) {
      EXPECT_LT(s[static_cast<std::size_t>(k)], 1e-10);
    }
  }
}

TEST(EmpiricalStieltjes, Examples) {
  const std::vector<double> zero{0.0};
  EXPECT_LT(std::abs(empirical_stieltjes(zero, I) - I), 1e-15);
  EXPECT_THROW(empirical_stieltjes(zero, cplx(0.0, 1e-13)), DomainError);
  std::mt19937_64 gen(74);
  const auto eigs = spectrum(random_matrix(gen, 10, 15));
  for (int k = 0; k < 50; ++k) EXPECT_GT(empirical_stieltjes(eigs, oracle::random_z(gen)).imag(), 0.0);
}

TEST(EmpiricalStieltjes, MarchenkoPasturAgreement) {
  const auto mp = oracle::mp_model(400, 800);
  const auto eigs = spectrum(sample_matrix(mp, 1));
  const cplx z(1.5, 0.1);
  EXPECT_LT(std::abs(empirical_stieltjes(eigs, z) - stieltjes_g(mp, solve_lambda(mp, z))), 0.02);
}

TEST(EmpiricalStieltjes, LipschitzOnSpectra) {
  std::mt19937_64 gen(75);
  for (int trial = 0; trial < 50; ++trial) {
    const auto eigs = spectrum(random_matrix(gen, 8, 12));
    std::vector<Atom> atoms;
    for (const double v : eigs) atoms.push_back({v, 1.0 / 8.0});
    const auto c = stieltjes_lipschitz_check(atoms, oracle::random_z(gen), oracle::random_z(gen));
    EXPECT_TRUE(c.holds());
  }
}

TEST(EmpiricalProjection, Examples) {
  std::mt19937_64 gen(76);
  const MatrixXd x = random_matrix(gen, 6, 9);
  const auto s = spectrum(x);
  const MatrixXcd id = MatrixXcd::Identity(6, 6);
  EXPECT_NEAR(empirical_projection(x, id, -1.0, s.front() + 1.0), 6.0, 1e-12);
  EXPECT_EQ(empirical_projection(x, id, s.front() + 1.0, s.front() + 2.0), 0.0);
  // Top eigenvector only: tr(v v^T A) = v^T A v.
  const auto eig = eigen_decompose(x);
  const MatrixXd a = oracle::random_psd(gen, 6);
  const double got = empirical_projection(eig, a.cast<cplx>(), s[0] - 1e-9, s[0] + 1.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(x * x.transpose() / 9.0);
  const VectorXd v = es.eigenvectors().col(5);
  EXPECT_NEAR(got, v.dot(a * v), 1e-10);
}

TEST(EmpiricalProjection, TenClassOutliers) {
  const auto m = load_model(configs_dir() + "/ten_classes.json");
  const double v = empirical_projection(sample_matrix(m, 1), mean_projector(m).cast<cplx>(),
                                        7.5, 45.0);
  EXPECT_LT(std::abs(v - 9.4397) / 9.4397, 0.10);
}

TEST(ResolventIdentity, Scalar) {
  const MatrixXd x{{1.7}};
  EXPECT_LT(resolvent_identity_check(x, cplx(0.5, 1.0)), 1e-15);
}

TEST(ResolventIdentity, RandomShapes) {
  std::mt19937_64 gen(77);
  EXPECT_LT(resolvent_identity_check(random_matrix(gen, 8, 12), cplx(1.0, 1.0)), 1e-10);
  EXPECT_LT(resolvent_identity_check(random_matrix(gen, 30, 20), cplx(2.0, 0.5)), 1e-9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = std::uniform_int_distribution<Eigen::Index>(1, 25)(gen);
    const auto n = std::uniform_int_distribution<Eigen::Index>(1, 25)(gen);
    EXPECT_LT(resolvent_identity_check(random_matrix(gen, p, n), oracle::random_z(gen)), 1e-8);
  }
}

TEST(SampleBatch, DeterministicAndJobInvariant) {
  const auto m = load_model(configs_dir() + "/two_bulk.json");
  const auto a = sample_batch(m, 4, 11, 1);
  const auto b = sample_batch(m, 4, 11, 3);
  EXPECT_EQ(a.eigenvalue_sets, b.eigenvalue_sets);
  EXPECT_EQ(a.trials, 4u);
  for (const auto& s : a.eigenvalue_sets) EXPECT_EQ(s.size(), 80u);
  EXPECT_THROW(sample_batch(m, 0, 1), ConfigError);
}

TEST(Compare, MarchenkoPasturL1) {
  const auto mp = load_model(configs_dir() + "/mp.json");
  const auto report = compare(mp, 20, 7, {});
  EXPECT_LT(report.l1_density_error, 0.05);
  EXPECT_LT(report.sup_g_error, 0.05);
  EXPECT_EQ(report.histogram.mass.size(), report.predicted_mass.size());
  double total = 0.0;
  for (const double v : report.histogram.mass) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Compare, MoreTrialsReduceL1) {
  const auto mp = load_model(configs_dir() + "/mp.json");
  CompareConfig config;
  config.bin_width = 0.1;
  const double e10 = compare(mp, 10, 99, config).l1_density_error;
  const double e40 = compare(mp, 40, 99, config).l1_density_error;
  std::cout << "[ info ] L1 at 10 trials " << e10 << ", at 40 trials " << e40 << "\n";
  EXPECT_LE(e40, 0.7 * e10);
}

TEST(Compare, SingleTrialAndDeterminism) {
  const auto m = load_model(configs_dir() + "/two_bulk.json");
  CompareConfig config;
  config.functionals.push_back({"identity", MatrixXcd::Identity(80, 80), {3.2, 18.0, 1.0, 32}});
  const auto a = compare(m, 1, 5, config, {}, 1);
  ASSERT_EQ(a.functionals.size(), 1u);
  EXPECT_FALSE(a.functionals[0].empirical_std.has_value());
  EXPECT_NEAR(a.functionals[0].empirical_mean, 20.0, 1e-9);
  const auto b = compare(m, 1, 5, config, {}, 4);
  EXPECT_EQ(summary_json(a).dump(), summary_json(b).dump());
  std::ostringstream fa, fb;
  write_functionals_csv(fa, a.functionals);
  write_functionals_csv(fb, b.functionals);
  EXPECT_EQ(fa.str(), fb.str());
  EXPECT_NE(fa.str().find(",null,1\n"), std::string::npos);
}

TEST(Compare, OutputFormats) {
  Histogram h;
  h.edges = {0.0, 0.5, 1.0};
  h.mass = {0.25, 0.75};
  h.frequency = {0.5, 1.5};
  std::ostringstream os;
  write_histogram_csv(os, h);
  EXPECT_EQ(os.str(), "bin_lo,bin_hi,frequency\n0,0.5,0.5\n0.5,1,1.5\n");

  ComparisonReport r;
  r.seed = 3;
  r.trials = 2;
  const auto j = summary_json(r);
  for (const char* key :
       {"sup_g_error", "l1_density_error", "seed", "rng_name", "gaussian_method", "trials"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["rng_name"], "philox4x32-10");
}

TEST(Compare, PredictedBinMassIncludesAtom) {
  DensityGrid g;
  g.xs = {0.0, 0.5, 1.0, 1.5, 2.0};
  g.density = {0.0, 0.5, 0.5, 0.5, 0.0};
  g.dirac_at_zero = 0.3;
  const auto mass = predicted_bin_mass(g, 2, 2);
  EXPECT_NEAR(mass[0], 0.3 + 0.125 + 0.25, 1e-15);
  EXPECT_NEAR(mass[1], 0.25 + 0.125, 1e-15);
}
