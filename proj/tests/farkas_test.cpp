#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "feastest/farkas.hpp"
#include "feastest/rng.hpp"

namespace {

using namespace feastest;

Eigen::MatrixXd random_matrix(rng::Stream& s, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = s.normal();
  return m;
}

// Feasible iff some nonsingular 3-column basis has B^-1 b >= 0.
bool basis_enumeration_feasible(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index p = A.cols();
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j)
      for (Eigen::Index k = j + 1; k < p; ++k) {
        Eigen::Matrix3d B;
        B << A.col(i), A.col(j), A.col(k);
        if (std::abs(B.determinant()) < 1e-10) continue;
        const Eigen::Vector3d x = B.partialPivLu().solve(b);
        if (x.minCoeff() >= -1e-12) return true;
      }
  return false;
}

TEST(Farkas, FeasibleSingleRow) {
  Eigen::MatrixXd A(1, 2);
  A << 1, 1;
  const auto r = farkas_certificate(A, Eigen::VectorXd::Constant(1, 1.0));
  ASSERT_TRUE(r.feasible);
  EXPECT_EQ(r.pi.size(), 0);
  EXPECT_NEAR((A * r.theta)[0], 1.0, 1e-12);
  EXPECT_GE(r.theta.minCoeff(), 0.0);
}

TEST(Farkas, InfeasibleSingleRowCertificate) {
  Eigen::MatrixXd A(1, 2);
  A << 1, 1;
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, -1.0);
  const auto r = farkas_certificate(A, b);
  ASSERT_FALSE(r.feasible);
  EXPECT_EQ(r.theta.size(), 0);
  ASSERT_EQ(r.pi.size(), 1);
  EXPECT_NEAR(r.pi[0], 1.0, 1e-12);
  EXPECT_GE((A.transpose() * r.pi).minCoeff(), -1e-8);
  EXPECT_LT(r.pi.dot(b), 0.0);
}

TEST(Farkas, MatchesBasisEnumerationOn200Instances) {
  rng::Stream s(11, 0);
  int feasible = 0;
  for (int t = 0; t < 200; ++t) {
    const Eigen::MatrixXd A = random_matrix(s, 3, 6);
    Eigen::VectorXd b(3);
    if (t % 2 == 0) {
      Eigen::VectorXd x(6);
      for (auto& v : x) v = s.uniform() < 0.5 ? 0.0 : s.uniform();
      b = A * x;
    } else {
      for (auto& v : b) v = s.normal();
    }
    const auto r = farkas_certificate(A, b);
    EXPECT_EQ(r.feasible, basis_enumeration_feasible(A, b)) << "instance " << t;
    // exactly one alternative is returned
    EXPECT_NE(r.theta.size() > 0, r.pi.size() > 0);
    if (r.feasible) {
      ++feasible;
      EXPECT_LE((A * r.theta - b).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_GE(r.theta.minCoeff(), 0.0);
    } else {
      EXPECT_GE((A.transpose() * r.pi).minCoeff(), -1e-8);
      EXPECT_LT(r.pi.dot(b), 0.0);
    }
  }
  EXPECT_GT(feasible, 100);
  EXPECT_LT(feasible, 200);
}

NoisyLp two_row_lp(const Eigen::Vector2d& b, double sigma, rng::Stream& noise) {
  NoisyLp lp;
  lp.A = Eigen::MatrixXd::Zero(2, 3);
  lp.A(0, 0) = 1;
  lp.A(1, 1) = 1;
  lp.y = b;
  for (auto& v : lp.y) v += sigma * noise.normal();
  lp.b_exact.resize(0);
  lp.sigma = sigma;
  return lp;
}

TEST(NoisyFeasibility, NoiselessFeasibleIsNotRejected) {
  rng::Stream noise(3, 0);
  const auto v = noisy_feasibility_test(two_row_lp({1.0, 1.0}, 1e-9, noise));
  EXPECT_FALSE(v.reject);
  EXPECT_LT(v.psi, 1e-9);
  EXPECT_GE(v.theta.minCoeff(), -1e-12);
}

TEST(NoisyFeasibility, TypeOneErrorOnFeasibleSystem) {
  rng::Stream noise(5, 0);
  NoisyTestOptions opt;
  opt.R = 2000;
  int rejections = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    opt.seed = static_cast<std::uint64_t>(rep);
    rejections += noisy_feasibility_test(two_row_lp({1.0, 1.0}, 0.1, noise), opt).reject;
  }
  EXPECT_LE(static_cast<double>(rejections) / reps, 0.05 + 0.02);
}

TEST(NoisyFeasibility, PowerBeyondSeparation) {
  // Exact third row fixes theta_3 = 1; the noisy targets are negative, so
  // no nonnegative solution exists.
  NoisyLp base;
  base.A = Eigen::MatrixXd::Identity(3, 3);
  base.sigma = 0.1;
  const InstrumentMatrix X = default_lp_instruments(base.A.topRows(2));
  const NoiseModel noise = NoiseModel::gaussian(base.sigma);
  const AlphaSplit alpha{0.049, 0.001}, beta{0.001, 0.049};
  const double mc = mc_gaussian_expectation(X, NormOrder::infinity(), base.sigma, 20000, 1).mean;
  const SeparationBound sep =
      separation_delta(X, NormOrder::infinity(), noise, 20000, alpha, beta, mc);
  const double delta = std::min(sep.value, *sep.union_form);
  // inf over theta >= 0 of Psi is m / sqrt(2) for targets (-m, -m)
  const double m = 1.2 * std::sqrt(2.0) * delta;
  base.b_exact = Eigen::VectorXd::Constant(1, 1.0);

  {
    NoisyLp clean = base;
    clean.y = Eigen::Vector2d(-m, -m);
    clean.sigma = 1e-12;
    const auto v = noisy_feasibility_test(clean);
    EXPECT_GT(v.psi, delta);
    EXPECT_NEAR(v.theta[2], 1.0, 1e-9);
  }

  rng::Stream draws(7, 0);
  NoisyTestOptions opt;
  opt.R = 2000;
  int rejections = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    NoisyLp lp = base;
    lp.y = Eigen::Vector2d(-m + 0.1 * draws.normal(), -m + 0.1 * draws.normal());
    opt.seed = static_cast<std::uint64_t>(rep);
    rejections += noisy_feasibility_test(lp, opt).reject;
  }
  EXPECT_GE(static_cast<double>(rejections) / reps, 0.95 - 0.05);
}

TEST(NoisyFeasibility, EmptyExactRowsRejectImmediately) {
  NoisyLp lp;
  lp.A = Eigen::MatrixXd::Identity(2, 2);
  lp.y = Eigen::VectorXd::Constant(1, 1.0);
  lp.b_exact = Eigen::VectorXd::Constant(1, -1.0);
  lp.sigma = 0.1;
  const auto v = noisy_feasibility_test(lp);
  EXPECT_TRUE(v.reject);
  EXPECT_TRUE(v.exact_rows_empty);
  ASSERT_TRUE(v.pi.has_value());
  EXPECT_LT(v.pi->dot(lp.b_exact), 0.0);
}

TEST(NoisyFeasibility, DependentRowsWarn) {
  NoisyLp lp;
  lp.A = Eigen::MatrixXd::Ones(2, 3);
  lp.y = Eigen::Vector2d(1.0, 1.0);
  lp.b_exact.resize(0);
  lp.sigma = 0.1;
  const auto v = noisy_feasibility_test(lp);
  ASSERT_FALSE(v.warnings.empty());
  EXPECT_NE(v.warnings.front().find("dependent"), std::string::npos);
}

TEST(NoisyFeasibility, AgreesWithExactVerdictAtTinyNoise) {
  rng::Stream s(13, 0);
  int checked = 0;
  for (int t = 0; checked < 100 && t < 1000; ++t) {
    const Eigen::MatrixXd A = random_matrix(s, 3, 6);
    Eigen::VectorXd b(3);
    if (t % 2 == 0) {
      Eigen::VectorXd x(6);
      for (auto& v : x) v = 0.1 + s.uniform();
      b = A * x;
    } else {
      for (auto& v : b) v = s.normal();
    }
    const auto exact = farkas_certificate(A, b);
    NoisyLp lp{A, b, Eigen::VectorXd(0), 1e-9, std::nullopt};
    NoisyTestOptions opt;
    opt.R = 500;
    const auto v = noisy_feasibility_test(lp, opt);
    // margin: the noiseless statistic for infeasible systems
    if (!exact.feasible && v.psi < 1e-3) continue;
    ++checked;
    EXPECT_EQ(v.reject, !exact.feasible) << "instance " << t << " psi " << v.psi;
  }
  EXPECT_EQ(checked, 100);
}

TEST(NoisyFeasibility, ThresholdMonotoneInSigma) {
  rng::Stream noise(17, 0);
  double last = 0.0;
  for (double sigma : {0.01, 0.05, 0.1, 0.5, 1.0, 2.0}) {
    NoisyLp lp = two_row_lp({1.0, 1.0}, sigma, noise);
    NoisyTestOptions opt;
    opt.R = 1000;
    const auto v = noisy_feasibility_test(lp, opt);
    EXPECT_GE(v.r, last);
    last = v.r;
  }
}

}  // namespace
