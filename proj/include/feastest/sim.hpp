#pragma once

// Monte-Carlo study for the model
//   Y_i = sum_l v_il alpha_l + gamma exp(sum_l v_il tau_l) + W_i
// with hypotheses on the average partial effects
//   APE_l = alpha_l + gamma tau_l (1/n) sum_i exp(sum_l v_il tau_l).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "feastest/error.hpp"
#include "feastest/expr.hpp"
#include "feastest/inference.hpp"
#include "feastest/parallel.hpp"
#include "feastest/rng.hpp"

namespace feastest::sim {

// n x k rows from N(0, Sigma) with unit variances and common correlation
// rho, via the Cholesky factor of Sigma.
inline Eigen::MatrixXd generate_design(long n, int k, double rho,
                                       std::uint64_t seed) {
  if (n < 1 || k < 1) throw InvalidArgument("design needs n >= 1 and k >= 1");
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(k, k, rho);
  sigma.diagonal().setOnes();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NumericalFailure("equicorrelation matrix is not positive definite for rho = " +
                           std::to_string(rho));
  const Eigen::MatrixXd lower = llt.matrixL();
  rng::Stream s(seed, rng::stream_id(rng::kDesign));
  Eigen::MatrixXd z(n, k);
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) z(i, j) = s.normal();
  return z * lower.transpose();
}

struct Coefficients {
  Eigen::VectorXd alpha;  // k
  Eigen::VectorXd tau;    // k
  double gamma = 1.0;

  // Parameter vector in model order: a1..ak, g, t1..tk.
  std::vector<double> theta() const {
    std::vector<double> t(alpha.data(), alpha.data() + alpha.size());
    t.push_back(gamma);
    t.insert(t.end(), tau.data(), tau.data() + tau.size());
    return t;
  }
};

// alpha_l + gamma tau_l (1/n) sum_i exp(sum_l v_il tau_l), l zero-based.
inline double ape(const Coefficients& c, const Eigen::MatrixXd& V, int l) {
  if (l < 0 || l >= V.cols()) throw InvalidArgument("APE index out of range");
  const Eigen::VectorXd index = V * c.tau;
  return c.alpha[l] + c.gamma * c.tau[l] * index.array().exp().mean();
}

// Column scaling of the instruments: (1/n) sum_i X_ij^2 = 1, or
// sum_i X_ij^2 = 1. The decision does not depend on it; Psi, r and the
// separation all scale by 1/sqrt(n) under the second.
enum class Normalization { UnitRms, UnitNorm };

inline const char* to_string(Normalization v) {
  return v == Normalization::UnitRms ? "unit_rms" : "unit_norm";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "unit_rms") return Normalization::UnitRms;
  if (s == "unit_norm") return Normalization::UnitNorm;
  throw InvalidArgument("unknown normalization '" + s + "' (expected unit_rms or unit_norm)");
}

struct StudyConfig {
  std::string name = "study";
  long n = 30;
  int k = 1;
  double alpha_star = 0.657;  // every alpha_l
  double tau_star = 0.657;    // every tau_l
  double gamma_star = 1.0;
  double sigma = 0.5;
  std::vector<int> constrained;  // 1-based; empty means all of 1..k
  double lower = 0.0;
  double upper = 0.8;
  int max_power = 4;  // instruments v_lj^1 .. v_lj^max_power
  int reps = 100;
  long R = 10000;
  AlphaSplit alpha{0.049, 0.001};
  AlphaSplit beta{0.001, 0.049};
  double rho = 0.5;
  Normalization normalization = Normalization::UnitRms;
  std::uint64_t design_seed = 1;
  std::uint64_t seed = 2;
  SolverOptions solver;

  int p() const { return 2 * k + 1; }
  long L() const { return static_cast<long>(k) * max_power; }

  std::vector<int> constrained_set() const {
    if (!constrained.empty()) return constrained;
    std::vector<int> all(static_cast<std::size_t>(k));
    for (int l = 0; l < k; ++l) all[static_cast<std::size_t>(l)] = l + 1;
    return all;
  }

  void validate() const {
    if (n < 2) throw InvalidArgument("study needs n >= 2");
    if (k < 1) throw InvalidArgument("study needs k >= 1");
    if (reps < 1) throw InvalidArgument("study needs reps >= 1");
    if (R < 1) throw InvalidArgument("study needs R >= 1");
    if (max_power < 1) throw InvalidArgument("study needs max_power >= 1");
    if (!(sigma >= 0.0)) throw InvalidArgument("study needs sigma >= 0");
    if (!(lower <= upper)) throw InvalidArgument("study needs lower <= upper");
    alpha.validate();
    beta.validate();
    for (int l : constrained_set())
      if (l < 1 || l > k)
        throw InvalidArgument("constrained index " + std::to_string(l) +
                              " outside 1.." + std::to_string(k));
  }
};

struct RepRecord {
  int rep = 0;
  bool failed = false;
  std::string error;
  double psi = 0.0;
  double r = 0.0;
  double mu = 0.0;
  double separation = 0.0;  // ||(1/n) X^T (g(theta*) - g(theta_hat))||_inf
  bool covered = false;     // mu <= separation <= 2r + mu
  bool reject = false;
  double dispersion = 0.0;
  std::vector<double> theta;
};

struct StudyResult {
  std::string name;
  long n = 0;
  int k = 0, p = 0;
  long L = 0;
  std::vector<double> ape;  // true APE for each constrained index
  bool null_true = false;   // every constrained APE inside [lower, upper]
  double mean_separation = 0.0;  // (ii)
  double mean_two_r = 0.0;       // (iii)
  double coverage = 0.0;         // (iv)
  double rejection = 0.0;        // (v)
  int completed = 0;
  int failures = 0;
  std::vector<RepRecord> records;
};

// Model, APE constraints and instruments in the expression language.
struct StudyModel {
  std::vector<std::string> params, covariates;
  expr::ExprAst model;
  HypothesisSpec hypothesis;
  std::vector<expr::ExprAst> instruments;
};

inline StudyModel build_study_model(const StudyConfig& cfg) {
  StudyModel m;
  for (int l = 1; l <= cfg.k; ++l) m.params.push_back("a" + std::to_string(l));
  m.params.push_back("g");
  for (int l = 1; l <= cfg.k; ++l) m.params.push_back("t" + std::to_string(l));
  for (int l = 1; l <= cfg.k; ++l) m.covariates.push_back("v" + std::to_string(l));
  std::string linear, index;
  for (int l = 1; l <= cfg.k; ++l) {
    const std::string s = std::to_string(l);
    linear += (l > 1 ? " + " : "") + ("a" + s + "*v" + s);
    index += (l > 1 ? " + " : "") + ("t" + s + "*v" + s);
  }
  m.model = expr::parse_expression(linear + " + g*exp(" + index + ")", m.params,
                                   m.covariates);
  for (int l : cfg.constrained_set()) {
    const std::string s = std::to_string(l);
    m.hypothesis.constraints.push_back(
        {expr::parse_expression("a" + s + " + g*t" + s + "*mean(exp(" + index + "))",
                                m.params, m.covariates),
         cfg.lower, cfg.upper});
  }
  for (int l = 1; l <= cfg.k; ++l)
    for (int pw = 1; pw <= cfg.max_power; ++pw)
      m.instruments.push_back(expr::parse_expression(
          pw == 1 ? "v" + std::to_string(l)
                  : "v" + std::to_string(l) + "^" + std::to_string(pw),
          {}, m.covariates));
  return m;
}

inline Coefficients study_coefficients(const StudyConfig& cfg) {
  return {Eigen::VectorXd::Constant(cfg.k, cfg.alpha_star),
          Eigen::VectorXd::Constant(cfg.k, cfg.tau_star), cfg.gamma_star};
}

inline std::uint64_t rep_seed(std::uint64_t seed, std::uint64_t tag, int rep) {
  return rng::stream_id(tag, seed, static_cast<std::uint64_t>(rep));
}

inline StudyResult simulate_study(const StudyConfig& cfg) {
  cfg.validate();
  const StudyModel sm = build_study_model(cfg);
  const Eigen::MatrixXd V = generate_design(cfg.n, cfg.k, cfg.rho, cfg.design_seed);
  const Coefficients coef = study_coefficients(cfg);
  const std::vector<double> theta_star = coef.theta();
  InstrumentMatrix X = normalize_columns(build_instruments(sm.instruments, V));
  if (cfg.normalization == Normalization::UnitNorm) {
    const double root_n = std::sqrt(static_cast<double>(cfg.n));
    X.values /= root_n;
    X.scale *= root_n;
  }

  StudyResult res;
  res.name = cfg.name;
  res.n = cfg.n;
  res.k = cfg.k;
  res.p = cfg.p();
  res.L = cfg.L();
  res.null_true = true;
  for (int l : cfg.constrained_set()) {
    const double a = ape(coef, V, l - 1);
    res.ape.push_back(a);
    res.null_true = res.null_true && a >= cfg.lower && a <= cfg.upper;
  }

  expr::Program g(sm.model);
  Eigen::VectorXd mean_y;
  g.evaluate_rows(0, theta_star, V, mean_y, nullptr);

  res.records.resize(static_cast<std::size_t>(cfg.reps));
  parallel_for(static_cast<std::size_t>(cfg.reps), [&](std::size_t idx) {
    const int rep = static_cast<int>(idx);
    RepRecord& rec = res.records[idx];
    rec.rep = rep;
    rng::Stream noise(cfg.seed, rng::stream_id(rng::kNoise, static_cast<std::uint64_t>(rep)));
    Eigen::VectorXd y = mean_y;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += cfg.sigma * noise.normal();

    TestInput in{sm.model, V, y, X};
    in.normalize = false;
    in.hypothesis = sm.hypothesis;
    in.q = NormOrder::infinity();
    in.noise = NoiseModel::gaussian(cfg.sigma);
    in.split = cfg.alpha;
    in.R = cfg.R;
    in.seed = rep_seed(cfg.seed, rng::kGaussianMc, rep);
    in.method = ThresholdMethod::Min;
    in.solver = cfg.solver;
    in.solver.seed = rep_seed(cfg.seed, rng::kMultistart, rep);
    try {
      const TestReport tr = run_test(in);
      if (tr.verdict == Verdict::EmptyHypothesis)
        throw Infeasible(tr.message);
      rec.psi = tr.psi;
      rec.r = tr.threshold.value;
      rec.mu = tr.mu;
      rec.reject = tr.reject;
      rec.dispersion = tr.solution.dispersion;
      rec.theta = tr.theta;
      Eigen::VectorXd fitted;
      g.evaluate_rows(0, tr.theta, V, fitted, nullptr);
      rec.separation =
          (X.values.transpose() * (mean_y - fitted) / static_cast<double>(cfg.n))
              .cwiseAbs()
              .maxCoeff();
      rec.covered = rec.mu <= rec.separation && rec.separation <= 2.0 * rec.r + rec.mu;
    } catch (const Error& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  });

  std::vector<double> sep, two_r, cov, rej;
  for (const auto& rec : res.records) {
    if (rec.failed) {
      ++res.failures;
      continue;
    }
    sep.push_back(rec.separation);
    two_r.push_back(2.0 * rec.r);
    cov.push_back(rec.covered ? 1.0 : 0.0);
    rej.push_back(rec.reject ? 1.0 : 0.0);
  }
  res.completed = static_cast<int>(sep.size());
  if (res.completed > 0) {
    const double c = res.completed;
    res.mean_separation = pairwise_sum(sep) / c;
    res.mean_two_r = pairwise_sum(two_r) / c;
    res.coverage = pairwise_sum(cov) / c;
    res.rejection = pairwise_sum(rej) / c;
  }
  return res;
}

}  // namespace feastest::sim
