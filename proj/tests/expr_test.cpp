#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "feastest/expr.hpp"

namespace {

using namespace feastest::expr;
using feastest::DomainError;
using feastest::ParseError;
using feastest::UndeclaredSymbol;

double eval_at(const std::string& text, std::vector<std::string> params,
               std::vector<double> values, std::vector<std::string> covs = {},
               const DataMatrix* data = nullptr,
               std::optional<Eigen::Index> row = std::nullopt) {
  const ExprAst ast = parse_expression(text, params, covs);
  Bindings b;
  b.params = values;
  b.data = data;
  b.row = row;
  return eval(ast, b);
}

TEST(Parse, ConstantZero) {
  const ExprAst ast = parse_expression("0", {"a"}, {"v"});
  EXPECT_EQ(eval(ast, Bindings{{1.0}}), 0.0);
}

TEST(Parse, RegressionModelWithOneCovariate) {
  const ExprAst ast = parse_expression("a1 + g*exp(v1*t1)", {"a1", "g", "t1"},
                                       {"v1"});
  EXPECT_EQ(to_string(ast), "(a1 + (g * exp((v1 * t1))))");
  EXPECT_FALSE(is_affine_in_params(ast));
}

TEST(Parse, Precedence) {
  EXPECT_EQ(eval_at("1 + 2 * 3", {}, {}), 7.0);
  EXPECT_EQ(eval_at("2 ^ 3 ^ 2", {}, {}), 512.0);
  EXPECT_EQ(eval_at("-2 ^ 2", {}, {}), -4.0);
  EXPECT_EQ(eval_at("2 ^ -1", {}, {}), 0.5);
  EXPECT_EQ(eval_at("8 / 4 / 2", {}, {}), 1.0);
  EXPECT_EQ(eval_at("10 - 4 - 3", {}, {}), 3.0);
  EXPECT_DOUBLE_EQ(eval_at("1.5e2 + .5", {}, {}), 150.5);
}

TEST(Parse, SyntaxErrorCarriesPosition) {
  try {
    parse_expression("a + * b", {"a", "b"}, {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 4u);
  }
  EXPECT_THROW(parse_expression("(a + b", {"a", "b"}, {}), ParseError);
  EXPECT_THROW(parse_expression("", {"a"}, {}), ParseError);
  EXPECT_THROW(parse_expression("exp a", {"a"}, {}), ParseError);
  EXPECT_THROW(parse_expression("sin(a)", {"a"}, {}), ParseError);
  EXPECT_THROW(parse_expression("a / (2 - 2)", {"a"}, {}), ParseError);
  EXPECT_THROW(parse_expression("log(0)", {}, {}), ParseError);
}

TEST(Parse, UndeclaredSymbolRejected) {
  try {
    parse_expression("a + zeta", {"a"}, {"v"});
    FAIL();
  } catch (const UndeclaredSymbol& e) {
    EXPECT_EQ(e.name(), "zeta");
    EXPECT_EQ(e.position(), 4u);
  }
}

TEST(Parse, DeclarationsValidated) {
  EXPECT_THROW(parse_expression("a", {"a", "a"}, {}), feastest::InvalidArgument);
  EXPECT_THROW(parse_expression("a", {"a"}, {"a"}), feastest::InvalidArgument);
  EXPECT_THROW(parse_expression("a", {"1a"}, {}), feastest::InvalidArgument);
  EXPECT_THROW(parse_expression("a", {"exp"}, {}), feastest::InvalidArgument);
}

TEST(Eval, HandArithmetic) {
  EXPECT_EQ(eval_at("x*x", {"x"}, {3.0}), 9.0);
  EXPECT_EQ(eval_at("exp(0)", {}, {}), 1.0);
}

TEST(Eval, ModelAtRow) {
  DataMatrix v(2, 1);
  v << 7.0, 5.0;
  EXPECT_EQ(eval_at("a1 + g*exp(v1*t1)", {"a1", "g", "t1"}, {1.0, 2.0, 0.0},
                    {"v1"}, &v, 1),
            3.0);
}

TEST(Eval, MeanAveragesRows) {
  DataMatrix v(4, 1);
  v << 1, 2, 3, 6;
  EXPECT_DOUBLE_EQ(eval_at("mean(v)", {}, {}, {"v"}, &v), 3.0);
  EXPECT_DOUBLE_EQ(eval_at("t*mean(v^2)", {"t"}, {2.0}, {"v"}, &v), 25.0);
  // bare covariate outside mean() needs a row
  EXPECT_THROW(eval_at("v + mean(v)", {}, {}, {"v"}, &v), DomainError);
  EXPECT_DOUBLE_EQ(eval_at("v + mean(v)", {}, {}, {"v"}, &v, 3), 9.0);
}

TEST(Eval, DomainErrorsAreReported) {
  EXPECT_THROW(eval_at("log(a)", {"a"}, {-1.0}), DomainError);
  EXPECT_THROW(eval_at("log(a)", {"a"}, {0.0}), DomainError);
  EXPECT_THROW(eval_at("1/a", {"a"}, {0.0}), DomainError);
  EXPECT_THROW(eval_at("a^0.5", {"a"}, {-4.0}), DomainError);
  EXPECT_THROW(eval_at("exp(a)", {"a"}, {1000.0}), DomainError);
}

TEST(Grad, Identity) {
  const ExprAst ast = parse_expression("theta", {"theta"}, {});
  EXPECT_EQ(grad(ast, Bindings{{0.3}}, {"theta"}), std::vector<double>{1.0});
}

TEST(Grad, ExponentialModel) {
  DataMatrix v(1, 1);
  v << 2.0;
  const ExprAst ast = parse_expression("g*exp(v1*t1)", {"g", "t1"}, {"v1"});
  Bindings b{{1.0, 0.0}, &v, 0};
  const auto d = grad(ast, b, {"t1", "g"});
  EXPECT_DOUBLE_EQ(d[0], 2.0);
  EXPECT_DOUBLE_EQ(d[1], 1.0);
}

TEST(Grad, NonDifferentiablePoint) {
  const ExprAst ast = parse_expression("a^0.5", {"a"}, {});
  EXPECT_THROW(grad(ast, Bindings{{0.0}}, {"a"}), DomainError);
}

TEST(Affinity, Classification) {
  auto affine = [](const std::string& s) {
    return is_affine_in_params(
        parse_expression(s, {"a", "b"}, {"v", "w"}));
  };
  EXPECT_TRUE(affine("a*v + b*w + 3"));
  EXPECT_TRUE(affine("(a - b)/2 + exp(v)*a"));
  EXPECT_TRUE(affine("mean(v*a) + b"));
  EXPECT_FALSE(affine("a*b"));
  EXPECT_FALSE(affine("exp(a)"));
  EXPECT_FALSE(affine("v/a"));
  EXPECT_FALSE(affine("a^2"));
}

TEST(Program, SharedSubexpressionsAndRows) {
  DataMatrix v(3, 1);
  v << -1, 0, 1;
  const std::vector<std::string> params{"a", "t"};
  std::vector<ExprAst> exprs{
      parse_expression("a + t*mean(exp(v*t))", params, {"v"}),
      parse_expression("a - t*mean(exp(v*t))", params, {"v"})};
  Program prog(exprs);
  Eigen::VectorXd values;
  Eigen::MatrixXd jac;
  const std::vector<double> theta{0.5, 1.0};
  prog.evaluate(theta, &v, std::nullopt, values, &jac);
  const double m = (std::exp(-1.0) + 1.0 + std::exp(1.0)) / 3.0;
  EXPECT_NEAR(values[0], 0.5 + m, 1e-14);
  EXPECT_NEAR(values[1], 0.5 - m, 1e-14);
  // d/dt [t * mean(exp(v t))] = m + t * mean(v exp(v t))
  const double dm = (-std::exp(-1.0) + std::exp(1.0)) / 3.0;
  EXPECT_NEAR(jac(0, 1), m + dm, 1e-14);
  EXPECT_NEAR(jac(1, 1), -(m + dm), 1e-14);

  Program model(parse_expression("a*v + exp(t*v)", params, {"v"}));
  Eigen::VectorXd g;
  Eigen::MatrixXd jg;
  model.evaluate_rows(0, theta, v, g, &jg);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(g[i], 0.5 * v(i, 0) + std::exp(v(i, 0)), 1e-14);
    EXPECT_NEAR(jg(i, 0), v(i, 0), 1e-14);
    EXPECT_NEAR(jg(i, 1), v(i, 0) * std::exp(v(i, 0)), 1e-14);
  }
}

// Random expressions over safe domains: log and division only see
// arguments of the form (1 + e^2), powers are small integers.
class ExprGenerator {
 public:
  explicit ExprGenerator(std::uint64_t seed) : rng_(seed) {}

  std::string make(int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 2 : 10);
    switch (pick(rng_)) {
      case 0: return leaf_param();
      case 1: return leaf_cov();
      case 2: return constant();
      case 3: return "(" + make(depth - 1) + " + " + make(depth - 1) + ")";
      case 4: return "(" + make(depth - 1) + " - " + make(depth - 1) + ")";
      case 5: return "(" + make(depth - 1) + " * " + make(depth - 1) + ")";
      case 6:
        return "(" + make(depth - 1) + " / (1 + (" + make(depth - 1) +
               ")^2))";
      case 7:
        return "(" + make(depth - 1) + ")^" +
               std::to_string(std::uniform_int_distribution<int>(2, 3)(rng_));
      case 8: return "exp(" + make(depth - 1) + " / 4)";
      case 9: return "log(1 + (" + make(depth - 1) + ")^2)";
      default: return "mean(" + make(depth - 1) + ")";
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::string leaf_param() {
    static const char* names[] = {"a", "b", "c"};
    return names[std::uniform_int_distribution<int>(0, 2)(rng_)];
  }
  std::string leaf_cov() {
    return std::uniform_int_distribution<int>(0, 1)(rng_) ? "v" : "w";
  }
  std::string constant() {
    std::uniform_real_distribution<double> u(-2, 2);
    return "(" + std::to_string(u(rng_)) + ")";
  }
  std::mt19937_64 rng_;
};

TEST(Property, GradientMatchesCentralDifferences) {
  ExprGenerator gen(12345);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  DataMatrix data(5, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) data(i, j) = u(gen.rng());
  const std::vector<std::string> params{"a", "b", "c"};
  int checked = 0;
  for (int trial = 0; checked < 100 && trial < 2000; ++trial) {
    const std::string text = gen.make(6);
    const ExprAst ast = parse_expression(text, params, {"v", "w"});
    Bindings b{{u(gen.rng()), u(gen.rng()), u(gen.rng())}, &data, 2};
    double value;
    std::vector<double> ad;
    try {
      value = eval(ast, b);
      ad = grad(ast, b, params);
    } catch (const DomainError&) {
      continue;
    }
    if (std::abs(value) > 1e3) continue;
    for (std::size_t j = 0; j < params.size(); ++j) {
      const double h = 1e-6;
      Bindings plus = b, minus = b;
      plus.params[j] += h;
      minus.params[j] -= h;
      const double fd = (eval(ast, plus) - eval(ast, minus)) / (2 * h);
      EXPECT_NEAR(ad[j], fd, 1e-5 * std::max(1.0, std::abs(ad[j])))
          << text << " wrt " << params[j];
    }
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Property, PrintParseRoundTrip) {
  ExprGenerator gen(777);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DataMatrix data(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) data(i, j) = u(gen.rng());
  const std::vector<std::string> params{"a", "b", "c"};
  for (int trial = 0; trial < 40; ++trial) {
    const ExprAst ast = parse_expression(gen.make(5), params, {"v", "w"});
    const ExprAst again = parse_expression(to_string(ast), params, {"v", "w"});
    EXPECT_EQ(to_string(again), to_string(ast));
    for (int k = 0; k < 100; ++k) {
      Bindings b{{u(gen.rng()), u(gen.rng()), u(gen.rng())}, &data, k % 4};
      double x = 0, y = 0;
      try {
        x = eval(ast, b);
      } catch (const DomainError&) {
        EXPECT_THROW(eval(again, b), DomainError);
        continue;
      }
      y = eval(again, b);
      EXPECT_EQ(x, y);
    }
  }
}

}  // namespace
