#pragma once

// The hypothesis test, its confidence region, the bounded-response variant
// and the dimension diagnostics.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "feastest/error.hpp"
#include "feastest/expr.hpp"
#include "feastest/norms.hpp"
#include "feastest/solver.hpp"
#include "feastest/thresholds.hpp"

namespace feastest {

struct PowerDiagnostics {
  long p = 0, n = 0, m = 0, L = 0;
  NormOrder q;
  std::vector<std::string> warnings;
};

inline PowerDiagnostics power_feasibility_check(long p, long n, long m, long L,
                                                NormOrder q) {
  if (p < 1 || n < 1 || m < 1 || L < 1)
    throw InvalidArgument("dimensions must be positive integers");
  PowerDiagnostics d{p, n, m, L, q, {}};
  if (p <= n) return d;
  if (m <= p - n)
    d.warnings.push_back("separation likely unattainable: m = " + std::to_string(m) +
                         " <= p - n = " + std::to_string(p - n));
  else if (q.is_inf() && m < p && L + m <= p)
    d.warnings.push_back("separation likely unattainable for q = inf: L + m = " +
                         std::to_string(L + m) + " <= p = " + std::to_string(p));
  return d;
}

// Evaluates instrument expressions (over covariates only) at every row.
inline InstrumentMatrix build_instruments(const std::vector<expr::ExprAst>& f,
                                          const expr::DataMatrix& V,
                                          std::vector<std::string> names = {}) {
  if (f.empty()) throw InvalidArgument("at least one instrument is required");
  Eigen::MatrixXd x(V.rows(), static_cast<Eigen::Index>(f.size()));
  for (std::size_t j = 0; j < f.size(); ++j) {
    if (!f[j].parameters().empty())
      throw InvalidArgument("instrument expressions must not use parameters");
    expr::Program prog(f[j]);
    Eigen::VectorXd col;
    prog.evaluate_rows(0, {}, V, col, nullptr);
    if (!col.allFinite())
      throw DomainError("instrument " + std::to_string(j + 1) + " is not finite");
    x.col(static_cast<Eigen::Index>(j)) = col;
  }
  if (names.empty())
    for (const auto& e : f) names.push_back(expr::to_string(e));
  return InstrumentMatrix(std::move(x), std::move(names));
}

// Relative size below which Psi counts as an exact fit.
inline constexpr double kZeroStatistic = 1e-9;

enum class Verdict { Reject, FailToReject, EmptyHypothesis };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Reject: return "reject";
    case Verdict::FailToReject: return "fail-to-reject";
    case Verdict::EmptyHypothesis: return "empty-hypothesis";
  }
  return "?";
}

struct TestInput {
  expr::ExprAst model;
  expr::DataMatrix V;  // n x k, columns in the model's covariate order
  Eigen::VectorXd Y;
  InstrumentMatrix X;
  bool normalize = true;
  HypothesisSpec hypothesis;
  NormOrder q = NormOrder::infinity();
  // Empty means sigma is unknown and is replaced by its upper bound at
  // level kappa; the overall level then becomes alpha + kappa.
  std::optional<NoiseModel> noise = NoiseModel::gaussian(1.0);
  double kappa = 0.01;
  // Expectation of the noise norm for non-gaussian noise.
  std::optional<McEstimate> expectation;
  AlphaSplit split;
  long R = 10000;
  std::uint64_t seed = 0;
  ThresholdMethod method = ThresholdMethod::Min;
  SolverOptions solver;
};

struct TestReport {
  Verdict verdict = Verdict::FailToReject;
  bool reject = false;
  double psi = 0.0;
  double mu = 0.0;
  std::vector<double> theta;
  Threshold threshold;
  AlphaSplit split;
  double alpha = 0.0;  // overall level, including kappa when sigma is bounded
  NormOrder q;
  NoiseModel noise;
  std::optional<SigmaBound> sigma_bound;
  PowerDiagnostics diagnostics;
  SlackSolution solution;
  std::string message;  // set for an empty hypothesis
  InstrumentMatrix X;   // as used (normalized when requested)
};

struct ConfidenceRegion {
  double lower = 0.0;   // mu
  double upper = 0.0;   // 2r + mu
  double length = 0.0;  // 2r
  double level = 0.0;   // 1 - alpha
};

namespace detail {

inline Threshold make_threshold(const TestInput& in, const InstrumentMatrix& X,
                                const NoiseModel& noise, double alpha) {
  switch (in.method) {
    case ThresholdMethod::Concentration:
      if (noise.kind != NoiseModel::Kind::Gaussian) {
        if (!in.expectation)
          throw InvalidArgument("non-gaussian noise needs the expectation of the noise norm");
        return concentration_threshold(X, in.q, noise, in.R, in.split, in.seed,
                                       *in.expectation);
      }
      return concentration_threshold(X, in.q, noise, in.R, in.split, in.seed);
    case ThresholdMethod::UnionBound:
      if (noise.kind != NoiseModel::Kind::Gaussian)
        throw InvalidArgument("the union-bound threshold needs gaussian noise");
      return union_bound_threshold(X, noise.sigma, alpha, in.q);
    case ThresholdMethod::Min:
      if (!in.q.is_inf())
        throw InvalidArgument("method 'min' requires q = inf");
      if (noise.kind != NoiseModel::Kind::Gaussian)
        throw InvalidArgument("method 'min' needs gaussian noise");
      return min_threshold(X, noise.sigma, in.R, in.split, in.seed);
    case ThresholdMethod::Ideal:
      if (!in.expectation)
        throw InvalidArgument("the ideal threshold needs the exact expectation");
      return ideal_threshold(X, in.q, noise, in.expectation->mean, alpha);
    case ThresholdMethod::Rademacher:
      throw InvalidArgument("use bounded_response_test for the Rademacher threshold");
  }
  throw InvalidArgument("unknown threshold method");
}

inline TestReport solve_and_decide(const TestInput& in, TestReport rep) {
  rep.diagnostics = power_feasibility_check(
      static_cast<long>(in.model.parameters().size()), rep.X.n(),
      static_cast<long>(in.hypothesis.m()), rep.X.L(), in.q);
  SlackProblem prob;
  prob.model = std::make_shared<ExprMomentModel>(in.model, in.V, in.Y, rep.X.values);
  prob.constraints = std::make_shared<ExprConstraintSet>(in.hypothesis, in.V);
  prob.q = in.q;
  prob.r = rep.threshold.value;
  prob.options = in.solver;
  try {
    rep.solution = minimize_slack(prob);
  } catch (const Infeasible& e) {
    rep.verdict = Verdict::EmptyHypothesis;
    rep.reject = false;
    rep.message = e.what();
    return rep;
  }
  rep.theta = rep.solution.theta;
  rep.psi = rep.solution.psi;
  rep.mu = rep.solution.mu;
  // Psi equal to r counts as a rejection. A statistic at numerical zero
  // never rejects, which only matters when r = 0 (sigma = 0).
  const double zero =
      kZeroStatistic *
      (1.0 + lq_norm(rep.X.values.transpose() * in.Y / static_cast<double>(in.Y.size()), in.q));
  rep.reject = rep.psi >= rep.threshold.value && rep.psi > zero;
  rep.verdict = rep.reject ? Verdict::Reject : Verdict::FailToReject;
  return rep;
}

inline void check_shapes(const TestInput& in) {
  const auto n = in.Y.size();
  if (in.V.rows() != n || in.X.n() != n)
    throw InvalidArgument("covariates, responses and instruments need the same row count");
  if (!in.Y.allFinite()) throw InvalidArgument("responses contain non-finite values");
  if (!in.V.allFinite()) throw InvalidArgument("covariates contain non-finite values");
  in.hypothesis.validate();
}

}  // namespace detail

inline TestReport run_test(const TestInput& in) {
  detail::check_shapes(in);
  in.split.validate();
  TestReport rep;
  rep.q = in.q;
  rep.split = in.split;
  rep.alpha = in.split.total();
  rep.X = in.normalize ? normalize_columns(in.X) : in.X;
  if (in.noise) {
    in.noise->validate();
    rep.noise = *in.noise;
  } else {
    rep.sigma_bound = sigma_upper_bound(in.Y, in.kappa);
    rep.noise = NoiseModel::gaussian(rep.sigma_bound->bound);
    rep.alpha += in.kappa;
  }
  rep.threshold = detail::make_threshold(in, rep.X, rep.noise, in.split.total());
  return detail::solve_and_decide(in, std::move(rep));
}

inline ConfidenceRegion confidence_region(const TestReport& rep) {
  ConfidenceRegion ci;
  ci.lower = rep.mu;
  ci.length = 2.0 * rep.threshold.value;
  ci.upper = ci.length + rep.mu;
  ci.level = 1.0 - rep.alpha;
  return ci;
}

// Region for the vector-slack program: the discrepancy vector lies within
// q-distance 2r of mu, and its q~-norm is at least ||mu||_q~.
struct VectorConfidenceRegion {
  Eigen::VectorXd center;
  double radius = 0.0;
  double norm_lower = 0.0;
  double level = 0.0;
};

inline VectorConfidenceRegion confidence_region(const VectorSlackSolution& s,
                                                const Threshold& r, double alpha) {
  return {s.mu, 2.0 * r.value, s.mu_norm, 1.0 - alpha};
}

struct BoundedTestResult {
  TestReport report;
  ConfidenceRegion region;
};

// Responses in [0, 1]; the threshold comes from Rademacher symmetrization.
inline BoundedTestResult bounded_response_test(const TestInput& in) {
  detail::check_shapes(in);
  in.split.validate(/*three_terms=*/true);
  for (Eigen::Index i = 0; i < in.Y.size(); ++i)
    if (!(in.Y[i] >= 0.0 && in.Y[i] <= 1.0))
      throw DomainError("responses must lie in [0, 1]; row " + std::to_string(i + 1) +
                        " is " + std::to_string(in.Y[i]) + " (rescale to [0, 1] first)");
  TestReport rep;
  rep.q = in.q;
  rep.split = in.split;
  rep.alpha = in.split.total();
  rep.noise = NoiseModel::bounded(0.0, 1.0);
  rep.X = in.normalize ? normalize_columns(in.X) : in.X;
  rep.threshold = rademacher_threshold(rep.X, in.Y, in.q, in.R, in.split, in.seed);
  BoundedTestResult out;
  out.report = detail::solve_and_decide(in, std::move(rep));
  out.region = confidence_region(out.report);
  return out;
}

}  // namespace feastest
