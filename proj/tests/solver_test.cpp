#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "feastest/solver.hpp"

namespace {

using namespace feastest;
using expr::parse_expression;

const double kInf = std::numeric_limits<double>::infinity();

SlackProblem one_param_problem(Eigen::VectorXd y, double r) {
  Eigen::MatrixXd v(2, 1);
  v << 1, 1;
  Eigen::MatrixXd x = normalize_columns(InstrumentMatrix(v)).values;
  const auto g = parse_expression("v*theta", {"theta"}, {"v"});
  HypothesisSpec h{{{parse_expression("theta", {"theta"}, {"v"}), 0.0, 1.0}}};
  SlackProblem prob;
  prob.model = std::make_shared<ExprMomentModel>(g, v, y, x);
  prob.constraints = std::make_shared<ExprConstraintSet>(h, v);
  prob.r = r;
  return prob;
}

TEST(MinimizeSlack, InterpolationInsideOmega) {
  auto prob = one_param_problem(Eigen::Vector2d(0.5, 0.5), 0.1);
  for (Backend b : {Backend::Auto, Backend::Slp, Backend::Penalty}) {
    prob.options.backend = b;
    const auto s = minimize_slack(prob);
    EXPECT_NEAR(s.theta[0], 0.5, 1e-6);
    EXPECT_NEAR(s.psi, 0.0, 1e-6);
    EXPECT_EQ(s.mu, 0.0);
  }
}

TEST(MinimizeSlack, BoundaryOptimumMatchesGrid) {
  auto prob = one_param_problem(Eigen::Vector2d(2.0, 2.0), 0.5);
  // 1-D grid oracle, step 1e-4
  double best = kInf;
  for (int k = 0; k <= 10000; ++k) best = std::min(best, std::abs(2.0 - k * 1e-4));
  for (Backend b : {Backend::Lp, Backend::Slp, Backend::Penalty}) {
    prob.options.backend = b;
    const auto s = minimize_slack(prob);
    EXPECT_EQ(s.backend, b);
    EXPECT_NEAR(s.psi, best, 1e-6);
    EXPECT_NEAR(s.mu, best - 0.5, 1e-6);
    EXPECT_NEAR(s.theta[0], 1.0, 1e-6);
    EXPECT_GE(s.psi, s.mu);
    EXPECT_LE(s.psi - s.mu, prob.r + 1e-12);
  }
}

TEST(MinimizeSlack, EmptyConstraintSetIsReported) {
  Eigen::MatrixXd v(3, 1);
  v << 1, 2, 3;
  const auto g = parse_expression("a*v", {"a"}, {"v"});
  HypothesisSpec h{{{parse_expression("a", {"a"}, {"v"}), 1.0, 2.0},
                    {parse_expression("a", {"a"}, {"v"}), 3.0, 4.0}}};
  SlackProblem prob;
  prob.model = std::make_shared<ExprMomentModel>(g, v, Eigen::Vector3d(1, 2, 3), v);
  prob.constraints = std::make_shared<ExprConstraintSet>(h, v);
  prob.options.backend = Backend::Lp;
  EXPECT_THROW(minimize_slack(prob), Infeasible);
  prob.options.backend = Backend::Slp;
  prob.options.starts = 3;
  EXPECT_THROW(minimize_slack(prob), Infeasible);
  prob.options.backend = Backend::Penalty;
  EXPECT_THROW(minimize_slack(prob), Infeasible);
}

TEST(MinimizeSlack, BackendChoice) {
  auto prob = one_param_problem(Eigen::Vector2d(2.0, 2.0), 0.5);
  EXPECT_EQ(minimize_slack(prob).backend, Backend::Lp);
  prob.q = NormOrder(2);
  EXPECT_EQ(minimize_slack(prob).backend, Backend::Penalty);
  prob.options.backend = Backend::Lp;
  EXPECT_THROW(minimize_slack(prob), InvalidArgument);
}

// Zero noise, g exactly representable and theta* inside Omega: mu = 0.
TEST(MinimizeSlack, NoiselessNullGivesZeroSlack) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  const int n = 25;
  Eigen::MatrixXd v(n, 1), x(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    v(i, 0) = z(rng);
    y[i] = 0.3 * v(i, 0) + 0.5 * std::exp(0.4 * v(i, 0));
    x.row(i) << v(i, 0), v(i, 0) * v(i, 0), std::pow(v(i, 0), 3);
  }
  const std::vector<std::string> params{"a", "g", "t"};
  const auto model = parse_expression("a*v + g*exp(v*t)", params, {"v"});
  HypothesisSpec h{{{parse_expression("a + g*t*mean(exp(v*t))", params, {"v"}), 0.0, 0.8}}};
  SlackProblem prob;
  prob.model = std::make_shared<ExprMomentModel>(
      model, v, y, normalize_columns(InstrumentMatrix(x)).values);
  prob.constraints = std::make_shared<ExprConstraintSet>(h, v);
  prob.r = 0.05;
  prob.options.starts = 4;
  prob.options.hints = {{0.3, 0.5, 0.4}};
  const auto s = minimize_slack(prob);
  EXPECT_EQ(s.backend, Backend::Slp);
  EXPECT_LT(s.psi, 1e-8);
  EXPECT_EQ(s.mu, 0.0);
  EXPECT_LE(s.max_violation, 1e-8);
}

// Enlarging Omega never increases the slack.
TEST(MinimizeSlack, RelaxingConstraintsNeverIncreasesSlack) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  const int n = 30;
  Eigen::MatrixXd v(n, 1), x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    v(i, 0) = z(rng);
    y[i] = 1.5 * v(i, 0) + 0.2 * z(rng);
    x.row(i) << v(i, 0), 1.0;
  }
  double prev = kInf;
  for (double upper : {0.2, 0.5, 1.0, 1.4, 2.0}) {
    HypothesisSpec h{{{parse_expression("b", {"b", "c"}, {"v"}), 0.0, upper}}};
    SlackProblem prob;
    prob.model = std::make_shared<ExprMomentModel>(
        parse_expression("b*v + c", {"b", "c"}, {"v"}), v, y, x);
    prob.constraints = std::make_shared<ExprConstraintSet>(h, v);
    prob.r = 0.05;
    const double mu = minimize_slack(prob).mu;
    EXPECT_LE(mu, prev + 1e-12);
    prev = mu;
  }
}

struct TwoParamInstance {
  SlackProblem prob;
  double grid_mu = 0.0;
};

// Random 2-parameter instances: g = a*v + b*v^2 (affine) or a*v + exp(b*v)
// (nonlinear), box constraints on (a, b), q = inf. The oracle is a grid
// search with step 1e-3 over the box.
TwoParamInstance random_two_param(std::mt19937_64& rng, bool affine) {
  std::uniform_real_distribution<double> u(-0.5, 0.5), c(-1.0, 1.0),
      w(0.3, 0.8);
  std::normal_distribution<double> z;
  const int n = 20;
  Eigen::MatrixXd v(n, 1), x(n, 3);
  Eigen::VectorXd y(n);
  const double a0 = 2 * c(rng), b0 = 2 * c(rng);
  for (int i = 0; i < n; ++i) {
    v(i, 0) = u(rng);
    const double vi = v(i, 0);
    y[i] = a0 * vi + (affine ? b0 * vi * vi : std::exp(b0 * vi)) + 0.1 * z(rng);
    x.row(i) << vi, vi * vi, 1.0;
  }
  x = normalize_columns(InstrumentMatrix(x)).values;
  const double alo = c(rng), blo = c(rng);
  const double ahi = alo + w(rng), bhi = blo + w(rng);
  const std::vector<std::string> params{"a", "b"};
  const auto g = parse_expression(affine ? "a*v + b*v^2" : "a*v + exp(b*v)",
                                  params, {"v"});
  HypothesisSpec h{{{parse_expression("a", params, {"v"}), alo, ahi},
                    {parse_expression("b", params, {"v"}), blo, bhi}}};
  TwoParamInstance inst;
  inst.prob.model = std::make_shared<ExprMomentModel>(g, v, y, x);
  inst.prob.constraints = std::make_shared<ExprConstraintSet>(h, v);
  inst.prob.r = 0.05 + 0.1 * (c(rng) + 1.0);

  // grid: c(a, b) = (1/n) X^T y - a (1/n) X^T v - (1/n) X^T f(b)
  const Eigen::VectorXd base = x.transpose() * y / n;
  const Eigen::VectorXd slope = x.transpose() * v.col(0) / n;
  const int na = static_cast<int>(std::floor((ahi - alo) / 1e-3 + 1e-9)) + 1;
  const int nb = static_cast<int>(std::floor((bhi - blo) / 1e-3 + 1e-9)) + 1;
  double best = kInf;
  for (int jb = 0; jb < nb; ++jb) {
    const double b = blo + jb * 1e-3;
    Eigen::VectorXd fb(n);
    for (int i = 0; i < n; ++i)
      fb[i] = affine ? b * v(i, 0) * v(i, 0) : std::exp(b * v(i, 0));
    const Eigen::VectorXd part = base - x.transpose() * fb / n;
    for (int ja = 0; ja < na; ++ja) {
      const double a = alo + ja * 1e-3;
      best = std::min(best, (part - a * slope).cwiseAbs().maxCoeff());
    }
  }
  inst.grid_mu = std::max(0.0, best - inst.prob.r);
  return inst;
}

TEST(Property, SlackMatchesGridOracle) {
  std::mt19937_64 rng(2718);
  int positive = 0;
  for (int t = 0; t < 50; ++t) {
    auto inst = random_two_param(rng, t % 2 == 0);
    inst.prob.options.starts = 4;
    const auto s = minimize_slack(inst.prob);
    EXPECT_NEAR(s.mu, inst.grid_mu, 1e-3) << "instance " << t;
    // the grid can only be worse than the true minimum
    EXPECT_LE(s.mu, inst.grid_mu + 1e-9) << "instance " << t;
    if (inst.grid_mu > 0) ++positive;
  }
  EXPECT_GT(positive, 10);
}

TEST(Property, LpAndPenaltyBackendsAgree) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    auto inst = random_two_param(rng, true);
    inst.prob.options.backend = Backend::Lp;
    const auto lp = minimize_slack(inst.prob);
    inst.prob.options.backend = Backend::Penalty;
    inst.prob.options.starts = 4;
    const auto pen = minimize_slack(inst.prob);
    EXPECT_NEAR(lp.mu, pen.mu, 1e-4) << "instance " << t;
    EXPECT_NEAR(lp.psi, pen.psi, 1e-4) << "instance " << t;
  }
}

TEST(VectorSlack, SoftThresholdMatchesGrid) {
  const Eigen::Vector2d c(0.3, -0.8);
  const Eigen::VectorXd mu =
      inner_vector_slack(c, 0.5, NormOrder::infinity(), NormOrder(1));
  EXPECT_NEAR(mu[0], 0.0, 1e-15);
  EXPECT_NEAR(mu[1], -0.3, 1e-15);
  // 2-D grid oracle for min ||mu||_1 s.t. ||c - mu||_inf <= 0.5
  double best = kInf;
  for (int i = -1000; i <= 1000; ++i)
    for (int j = -1000; j <= 1000; ++j) {
      const double m0 = i * 1e-3, m1 = j * 1e-3;
      if (std::max(std::abs(c[0] - m0), std::abs(c[1] - m1)) <= 0.5 + 1e-12)
        best = std::min(best, std::abs(m0) + std::abs(m1));
    }
  EXPECT_NEAR(mu.cwiseAbs().sum(), best, 1e-9);
}

TEST(VectorSlack, ShrinkageMatchesGrid) {
  const Eigen::Vector2d c(3.0, 4.0);
  const Eigen::VectorXd mu = inner_vector_slack(c, 2.5, NormOrder(2), NormOrder(2));
  EXPECT_NEAR(mu[0], 1.5, 1e-14);
  EXPECT_NEAR(mu[1], 2.0, 1e-14);
  EXPECT_NEAR(mu.norm(), 2.5, 1e-14);
  double best = kInf;
  for (int i = 0; i <= 3000; ++i)
    for (int j = 0; j <= 4000; ++j) {
      const double m0 = i * 1e-3, m1 = j * 1e-3;
      if (std::hypot(c[0] - m0, c[1] - m1) <= 2.5 + 1e-12)
        best = std::min(best, std::hypot(m0, m1));
    }
  EXPECT_NEAR(mu.norm(), best, 1e-3);
  EXPECT_EQ(inner_vector_slack(Eigen::Vector2d(0.1, 0.2), 1.0, NormOrder(2),
                               NormOrder(2)).norm(), 0.0);
  EXPECT_THROW(inner_vector_slack(c, 1.0, NormOrder(2), NormOrder(1)),
               InvalidArgument);
}

TEST(VectorSlack, ProgramAndFeasibleSetInclusion) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 10; ++t) {
    auto inst = random_two_param(rng, t % 2 == 0);
    inst.prob.options.starts = 4;
    const SlackSolution scalar = minimize_slack(inst.prob);
    for (NormOrder qt : {NormOrder(1), NormOrder(2), NormOrder::infinity()}) {
      const auto vs = minimize_slack_vector(inst.prob, qt);
      // theta feasible for the scalar program with slack ||mu||_q
      EXPECT_LE(vs.psi, inst.prob.r + vs.mu_norm_q + 1e-9);
      EXPECT_GE(vs.mu_norm_q + 1e-7, scalar.mu);
      EXPECT_LE(vs.max_violation, 1e-6);
    }
    // q~ = inf coincides with the scalar program
    EXPECT_NEAR(minimize_slack_vector(inst.prob, NormOrder::infinity()).mu_norm,
                scalar.mu, 1e-6);
  }
  auto prob = one_param_problem(Eigen::Vector2d(2.0, 2.0), 0.5);
  prob.q = NormOrder(2);
  EXPECT_THROW(minimize_slack_vector(prob, NormOrder(1)), InvalidArgument);
}

}  // namespace
