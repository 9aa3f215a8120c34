#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "feastest/lp.hpp"

namespace {

using namespace feastest;

// Vertex enumeration: the optimum of a bounded feasible standard-form LP
// is attained at a basic feasible solution.
std::optional<double> enumerate_vertices(const StandardLp& lp) {
  const int d = static_cast<int>(lp.A.rows());
  const int p = static_cast<int>(lp.A.cols());
  std::optional<double> best;
  std::vector<int> idx(d);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == d) {
      Eigen::MatrixXd B(d, d);
      for (int i = 0; i < d; ++i) B.col(i) = lp.A.col(idx[i]);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
      if (lu.rank() < d) return;
      const Eigen::VectorXd xb = lu.solve(lp.b);
      if (xb.minCoeff() < -1e-9) return;
      double obj = 0;
      for (int i = 0; i < d; ++i) obj += (*lp.c)[idx[i]] * xb[i];
      if (!best || obj < *best) best = obj;
      return;
    }
    for (int j = start; j < p; ++j) {
      idx[depth] = j;
      rec(j + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

StandardLp random_lp(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1), pos(0.2, 1.0);
  StandardLp lp{Eigen::MatrixXd(3, 6), Eigen::VectorXd(3), Eigen::VectorXd(6)};
  // The first row has positive coefficients, so the feasible set is bounded.
  for (int j = 0; j < 6; ++j) lp.A(0, j) = pos(rng);
  for (int i = 1; i < 3; ++i)
    for (int j = 0; j < 6; ++j) lp.A(i, j) = u(rng);
  lp.b << 1.0 + pos(rng), u(rng), u(rng);
  for (int j = 0; j < 6; ++j) (*lp.c)[j] = u(rng);
  return lp;
}

void check_against_oracle(Pricing pricing, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int optimal = 0, infeasible = 0;
  LpOptions opt;
  opt.pricing = pricing;
  for (int t = 0; t < 300; ++t) {
    const StandardLp lp = random_lp(rng);
    const auto oracle = enumerate_vertices(lp);
    const LpResult r = lp_solve(lp, opt);
    if (oracle) {
      ASSERT_EQ(r.status, LpStatus::Optimal) << "instance " << t;
      EXPECT_NEAR(r.objective, *oracle, 1e-8);
      EXPECT_GE(r.x.minCoeff(), 0.0);
      EXPECT_LE((lp.A * r.x - lp.b).cwiseAbs().maxCoeff(), 1e-9);
      // dual feasibility and strong duality
      EXPECT_LE((lp.A.transpose() * r.y - *lp.c).maxCoeff(), 1e-8);
      EXPECT_NEAR(lp.b.dot(r.y), r.objective, 1e-8);
      ++optimal;
    } else {
      ASSERT_EQ(r.status, LpStatus::Infeasible) << "instance " << t;
      EXPECT_GE((r.certificate.transpose() * lp.A).minCoeff(), -1e-8);
      EXPECT_LT(r.certificate.dot(lp.b), 0.0);
      ++infeasible;
    }
  }
  EXPECT_GT(optimal, 30);
  EXPECT_GT(infeasible, 30);
}

TEST(Simplex, MatchesVertexEnumerationBland) {
  check_against_oracle(Pricing::Bland, 1);
}

TEST(Simplex, MatchesVertexEnumerationDantzig) {
  check_against_oracle(Pricing::Dantzig, 2);
}

TEST(Simplex, UnboundedReturnsRay) {
  // min -x1 s.t. x1 - x2 = 1
  StandardLp lp{Eigen::MatrixXd(1, 2), Eigen::VectorXd(1), Eigen::VectorXd(2)};
  lp.A << 1, -1;
  lp.b << 1;
  *lp.c << -1, 0;
  const LpResult r = lp_solve(lp);
  ASSERT_EQ(r.status, LpStatus::Unbounded);
  EXPECT_GE(r.ray.minCoeff(), 0.0);
  EXPECT_NEAR((lp.A * r.ray).norm(), 0.0, 1e-12);
  EXPECT_LT(lp.c->dot(r.ray), 0.0);
}

TEST(Simplex, DegenerateAndRedundantRows) {
  // duplicated row and a zero right-hand side
  StandardLp lp{Eigen::MatrixXd(3, 3), Eigen::VectorXd(3), Eigen::VectorXd(3)};
  lp.A << 1, 1, 1, 1, 1, 1, 1, -1, 0;
  lp.b << 1, 1, 0;
  *lp.c << 1, 2, 0;
  const LpResult r = lp_solve(lp);
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.objective, 0.0, 1e-12);
  EXPECT_NEAR(r.x[2], 1.0, 1e-12);
}

TEST(Simplex, FeasibilityOnlyAndValidation) {
  StandardLp lp{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1, 2), {}};
  const LpResult r = lp_solve(lp);
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_EQ(r.objective, 0.0);
  StandardLp bad{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd(3), {}};
  EXPECT_THROW(lp_solve(bad), InvalidArgument);
}

TEST(InequalityLp, BoxAndInfeasible) {
  // min -y1 - y2 s.t. y1 <= 1, y2 <= 2, y1 + y2 <= 2.5
  InequalityLp lp{Eigen::MatrixXd(3, 2), Eigen::Vector3d(1, 2, 2.5),
                  Eigen::Vector2d(-1, -1)};
  lp.G << 1, 0, 0, 1, 1, 1;
  LpResult r = solve_inequality_lp(lp);
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.objective, -2.5, 1e-12);
  EXPECT_LE((lp.G * r.x - lp.h).maxCoeff(), 1e-12);

  // y <= -1 and -y <= -1 has no solution
  InequalityLp empty{Eigen::MatrixXd(2, 1), Eigen::Vector2d(-1, -1),
                     Eigen::VectorXd::Zero(1)};
  empty.G << 1, -1;
  EXPECT_EQ(solve_inequality_lp(empty).status, LpStatus::Infeasible);

  // min -y with only y >= 0 is unbounded
  InequalityLp open{Eigen::MatrixXd(1, 1), Eigen::VectorXd::Zero(1),
                    Eigen::VectorXd::Constant(1, -1)};
  open.G << -1;
  EXPECT_EQ(solve_inequality_lp(open).status, LpStatus::Unbounded);
}

}  // namespace
