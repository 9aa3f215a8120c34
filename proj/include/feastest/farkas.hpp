#pragma once

// Feasibility of {A theta = b, theta >= 0}: exact Farkas alternatives, and
// the test for systems whose right-hand side is observed with noise on
// some rows.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "feastest/error.hpp"
#include "feastest/lp.hpp"
#include "feastest/norms.hpp"
#include "feastest/solver.hpp"
#include "feastest/thresholds.hpp"

namespace feastest {

// Exactly one of theta (A theta = b, theta >= 0) and pi (pi^T A >= 0,
// pi^T b < 0) is set.
struct FarkasResult {
  bool feasible = false;
  Eigen::VectorXd theta;
  Eigen::VectorXd pi;
};

inline FarkasResult farkas_certificate(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                       const LpOptions& opt = {}) {
  const LpResult res = lp_solve(StandardLp{A, b, std::nullopt}, opt);
  FarkasResult out;
  const double scale = 1.0 + std::max(A.size() ? A.cwiseAbs().maxCoeff() : 0.0,
                                      b.size() ? b.cwiseAbs().maxCoeff() : 0.0);
  if (res.status == LpStatus::Optimal) {
    out.feasible = true;
    out.theta = res.x;
    return out;
  }
  if (res.status != LpStatus::Infeasible)
    throw NumericalFailure("phase 1 returned an unexpected status");
  out.pi = res.certificate;
  const Eigen::VectorXd lhs = A.transpose() * out.pi;
  const double tol = 1e-8 * scale;
  if ((lhs.size() && lhs.minCoeff() < -tol) || !(out.pi.dot(b) < 0.0))
    throw NumericalFailure("Farkas certificate fails its inequalities");
  return out;
}

// Rows 0..n-1 of A have noisy targets y = b + W; rows n..d-1 have exact
// targets b_exact.
struct NoisyLp {
  Eigen::MatrixXd A;
  Eigen::VectorXd y;        // n observed noisy targets
  Eigen::VectorXd b_exact;  // d - n exact targets
  double sigma = 1.0;
  // Instruments for the noisy rows; empty means the rows of A themselves,
  // with all-zero columns dropped, normalized.
  std::optional<InstrumentMatrix> X;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index d() const { return A.rows(); }
  Eigen::Index p() const { return A.cols(); }
};

struct FeasibilityVerdict {
  bool reject = false;           // infeasibility concluded
  bool exact_rows_empty = false;  // rejected before testing
  double psi = 0.0;
  double r = 0.0;
  double alpha = 0.0;
  double confidence = 0.0;
  Eigen::VectorXd theta;             // witness: theta >= 0 on the exact rows
  std::optional<Eigen::VectorXd> pi;  // certificate for the exact rows
  Threshold threshold;
  SlackSolution solution;
  std::vector<std::string> warnings;
};

inline const char* decision_name(const FeasibilityVerdict& v) {
  return v.reject ? "infeasible-rejected" : "feasible-not-rejected";
}

struct NoisyTestOptions {
  NormOrder q = NormOrder::infinity();
  AlphaSplit split;
  long R = 10000;
  std::uint64_t seed = 0;
  // Empty picks min for q = inf and concentration otherwise.
  std::optional<ThresholdMethod> method;
  SolverOptions solver;
};

inline InstrumentMatrix default_lp_instruments(const Eigen::MatrixXd& A_noisy) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < A_noisy.cols(); ++j)
    if (A_noisy.col(j).cwiseAbs().maxCoeff() > 0.0) keep.push_back(j);
  if (keep.empty()) throw InvalidArgument("the noisy rows of A are all zero");
  Eigen::MatrixXd x(A_noisy.rows(), static_cast<Eigen::Index>(keep.size()));
  std::vector<std::string> names;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j)) = A_noisy.col(keep[j]);
    names.push_back("A column " + std::to_string(keep[j] + 1));
  }
  return normalize_columns(InstrumentMatrix(std::move(x), std::move(names)));
}

inline FeasibilityVerdict noisy_feasibility_test(const NoisyLp& lp,
                                                 const NoisyTestOptions& opt = {}) {
  const Eigen::Index n = lp.n(), d = lp.d(), p = lp.p();
  if (n < 1 || n > d)
    throw InvalidArgument("need 1 <= n <= d noisy rows (n = " + std::to_string(n) +
                          ", d = " + std::to_string(d) + ")");
  if (lp.b_exact.size() != d - n)
    throw InvalidArgument("expected " + std::to_string(d - n) + " exact targets, got " +
                          std::to_string(lp.b_exact.size()));
  if (!(lp.sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (!lp.A.allFinite() || !lp.y.allFinite() || !lp.b_exact.allFinite())
    throw InvalidArgument("LP data contain non-finite values");
  opt.split.validate();

  FeasibilityVerdict v;
  v.alpha = opt.split.total();
  v.confidence = 1.0 - v.alpha;
  if (d > p)
    v.warnings.push_back("more rows than unknowns (d = " + std::to_string(d) +
                         " > p = " + std::to_string(p) + ")");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lp.A);
  lu.setThreshold(1e-10);
  if (lu.rank() < std::min(d, p))
    v.warnings.push_back("rows of A are linearly dependent (rank " +
                         std::to_string(lu.rank()) + ")");

  const Eigen::MatrixXd A_noisy = lp.A.topRows(n);
  const Eigen::MatrixXd A_exact = lp.A.bottomRows(d - n);
  if (d > n) {
    const FarkasResult exact = farkas_certificate(A_exact, lp.b_exact);
    if (!exact.feasible) {
      v.reject = true;
      v.exact_rows_empty = true;
      v.psi = std::numeric_limits<double>::infinity();
      v.pi = exact.pi;
      return v;
    }
  }

  const InstrumentMatrix X = lp.X ? *lp.X : default_lp_instruments(A_noisy);
  if (X.n() != n) throw InvalidArgument("instrument rows must match the noisy rows");
  const double nn = static_cast<double>(n);
  auto model = std::make_shared<LinearMomentModel>(X.values.transpose() * lp.y / nn,
                                                   -(X.values.transpose() * A_noisy) / nn);
  Eigen::MatrixXd H(d - n + p, p);
  H << A_exact, Eigen::MatrixXd::Identity(p, p);
  Eigen::VectorXd lo(d - n + p), hi(d - n + p);
  lo << lp.b_exact, Eigen::VectorXd::Zero(p);
  hi << lp.b_exact, Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());

  const NoiseModel noise = NoiseModel::gaussian(lp.sigma);
  const ThresholdMethod method = opt.method.value_or(
      opt.q.is_inf() ? ThresholdMethod::Min : ThresholdMethod::Concentration);
  switch (method) {
    case ThresholdMethod::Min:
      if (!opt.q.is_inf()) throw InvalidArgument("method 'min' requires q = inf");
      v.threshold = min_threshold(X, lp.sigma, opt.R, opt.split, opt.seed);
      break;
    case ThresholdMethod::Concentration:
      v.threshold = concentration_threshold(X, opt.q, noise, opt.R, opt.split, opt.seed);
      break;
    case ThresholdMethod::UnionBound:
      v.threshold = union_bound_threshold(X, lp.sigma, v.alpha, opt.q);
      break;
    default:
      throw InvalidArgument("noisy LP test supports concentration, union and min thresholds");
  }
  v.r = v.threshold.value;

  SlackProblem prob;
  prob.model = model;
  prob.constraints = std::make_shared<LinearConstraintSet>(H, lo, hi);
  prob.q = opt.q;
  prob.r = v.r;
  prob.options = opt.solver;
  prob.options.box_lower = -std::numeric_limits<double>::infinity();
  prob.options.box_upper = std::numeric_limits<double>::infinity();
  v.solution = minimize_slack(prob);
  v.theta = Eigen::Map<const Eigen::VectorXd>(v.solution.theta.data(), p);
  v.psi = v.solution.psi;
  v.reject = v.psi >= v.r;
  return v;
}

}  // namespace feastest
