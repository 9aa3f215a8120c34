#pragma once

// Slack minimization. For fixed theta the optimal slack is
// max(0, Psi(theta) - r), so the program reduces to minimizing
// Psi(theta) = || (1/n) X^T (Y - g(theta)) ||_q over the constraint set.
//
// Backends:
//   lp       exact LP when the moments and constraints are affine, q in {1, inf}
//   slp      trust-region sequential LP on the l1 exact-penalty merit,
//            q in {1, inf}; handles nonlinear g and h. Rejected steps get a
//            second-order correction, and a Newton step on the active set
//            supplies the curvature the linear models lack.
//   penalty  quadratic penalty + Nelder-Mead, any q
// The nonlinear backends run from several starting points and keep the best.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feastest/error.hpp"
#include "feastest/expr.hpp"
#include "feastest/lp.hpp"
#include "feastest/norms.hpp"
#include "feastest/parallel.hpp"
#include "feastest/rng.hpp"

namespace feastest {

// c(theta) = (1/n) X^T (Y - g(theta)), an L-vector, and its L x p Jacobian.
class MomentModel {
 public:
  virtual ~MomentModel() = default;
  virtual std::size_t num_params() const = 0;
  virtual Eigen::Index num_moments() const = 0;
  virtual bool affine() const = 0;
  // May throw DomainError.
  virtual void moments(std::span<const double> theta, Eigen::VectorXd& c,
                       Eigen::MatrixXd* jacobian) const = 0;
};

// h(theta) with lower <= h <= upper componentwise.
class ConstraintSet {
 public:
  virtual ~ConstraintSet() = default;
  virtual std::size_t size() const = 0;
  virtual bool affine() const = 0;
  virtual const Eigen::VectorXd& lower() const = 0;
  virtual const Eigen::VectorXd& upper() const = 0;
  virtual void evaluate(std::span<const double> theta, Eigen::VectorXd& h,
                        Eigen::MatrixXd* jacobian) const = 0;
};

class ExprMomentModel final : public MomentModel {
 public:
  // V: n x k covariates in declaration order, Y: n responses, X: n x L.
  ExprMomentModel(const expr::ExprAst& g, expr::DataMatrix V, Eigen::VectorXd Y,
                  Eigen::MatrixXd X)
      : program_(g),
        affine_(expr::is_affine_in_params(g)),
        V_(std::move(V)),
        Y_(std::move(Y)),
        X_(std::move(X)) {
    if (V_.rows() != Y_.size() || X_.rows() != Y_.size())
      throw InvalidArgument("covariates, responses and instruments need the same row count");
    if (static_cast<std::size_t>(V_.cols()) != g.covariates().size())
      throw InvalidArgument("covariate matrix has " + std::to_string(V_.cols()) +
                            " columns but the model declares " +
                            std::to_string(g.covariates().size()));
  }

  std::size_t num_params() const override { return program_.num_params(); }
  Eigen::Index num_moments() const override { return X_.cols(); }
  bool affine() const override { return affine_; }

  void moments(std::span<const double> theta, Eigen::VectorXd& c,
               Eigen::MatrixXd* jacobian) const override {
    Eigen::VectorXd gv;
    Eigen::MatrixXd jg;
    program_.evaluate_rows(0, theta, V_, gv, jacobian ? &jg : nullptr);
    if (!gv.allFinite()) throw DomainError("model value is not finite");
    const double n = static_cast<double>(Y_.size());
    c = X_.transpose() * (Y_ - gv) / n;
    if (jacobian) *jacobian = -(X_.transpose() * jg) / n;
  }

  // g(V_i; theta) for every row.
  Eigen::VectorXd fitted(std::span<const double> theta) const {
    Eigen::VectorXd gv;
    program_.evaluate_rows(0, theta, V_, gv, nullptr);
    return gv;
  }

  const Eigen::MatrixXd& instruments() const { return X_; }

 private:
  expr::Program program_;
  bool affine_;
  expr::DataMatrix V_;
  Eigen::VectorXd Y_;
  Eigen::MatrixXd X_;
};

// c(theta) = c0 + M theta.
class LinearMomentModel final : public MomentModel {
 public:
  LinearMomentModel(Eigen::VectorXd c0, Eigen::MatrixXd M)
      : c0_(std::move(c0)), M_(std::move(M)) {
    if (c0_.size() != M_.rows())
      throw InvalidArgument("linear moment model dimensions disagree");
  }
  std::size_t num_params() const override { return M_.cols(); }
  Eigen::Index num_moments() const override { return M_.rows(); }
  bool affine() const override { return true; }
  void moments(std::span<const double> theta, Eigen::VectorXd& c,
               Eigen::MatrixXd* jacobian) const override {
    const Eigen::Map<const Eigen::VectorXd> t(theta.data(),
                                              static_cast<Eigen::Index>(theta.size()));
    c = c0_ + M_ * t;
    if (jacobian) *jacobian = M_;
  }

 private:
  Eigen::VectorXd c0_;
  Eigen::MatrixXd M_;
};

struct ExprConstraint {
  expr::ExprAst h;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

// The hypothesis h(theta) in Omega as a list of interval constraints.
struct HypothesisSpec {
  std::vector<ExprConstraint> constraints;

  std::size_t m() const noexcept { return constraints.size(); }

  void validate() const {
    if (constraints.empty())
      throw InvalidArgument("a hypothesis needs at least one constraint");
    for (std::size_t k = 0; k < constraints.size(); ++k) {
      const auto& c = constraints[k];
      if (std::isnan(c.lower) || std::isnan(c.upper) || c.lower > c.upper)
        throw InvalidArgument("constraint " + std::to_string(k + 1) +
                              " has lower > upper");
    }
  }
};

class ExprConstraintSet final : public ConstraintSet {
 public:
  ExprConstraintSet(const HypothesisSpec& spec, expr::DataMatrix V)
      : V_(std::move(V)) {
    spec.validate();
    std::vector<expr::ExprAst> exprs;
    lower_.resize(static_cast<Eigen::Index>(spec.m()));
    upper_.resize(static_cast<Eigen::Index>(spec.m()));
    affine_ = true;
    for (std::size_t k = 0; k < spec.m(); ++k) {
      exprs.push_back(spec.constraints[k].h);
      lower_[static_cast<Eigen::Index>(k)] = spec.constraints[k].lower;
      upper_[static_cast<Eigen::Index>(k)] = spec.constraints[k].upper;
      affine_ = affine_ && expr::is_affine_in_params(spec.constraints[k].h);
    }
    program_.emplace(exprs);
    for (std::size_t k = 0; k < spec.m(); ++k)
      if (program_->output_uses_row(k))
        throw InvalidArgument(
            "constraint " + std::to_string(k + 1) +
            " uses a covariate outside mean(); constraints must not depend on a row");
  }

  std::size_t size() const override { return program_->num_outputs(); }
  bool affine() const override { return affine_; }
  const Eigen::VectorXd& lower() const override { return lower_; }
  const Eigen::VectorXd& upper() const override { return upper_; }
  void evaluate(std::span<const double> theta, Eigen::VectorXd& h,
                Eigen::MatrixXd* jacobian) const override {
    program_->evaluate(theta, &V_, std::nullopt, h, jacobian);
    if (!h.allFinite()) throw DomainError("constraint value is not finite");
  }

 private:
  std::optional<expr::Program> program_;
  expr::DataMatrix V_;
  Eigen::VectorXd lower_, upper_;
  bool affine_ = true;
};

// lower <= H theta <= upper.
class LinearConstraintSet final : public ConstraintSet {
 public:
  LinearConstraintSet(Eigen::MatrixXd H, Eigen::VectorXd lower,
                      Eigen::VectorXd upper)
      : H_(std::move(H)), lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != H_.rows() || upper_.size() != H_.rows())
      throw InvalidArgument("linear constraint dimensions disagree");
    for (Eigen::Index k = 0; k < H_.rows(); ++k)
      if (lower_[k] > upper_[k])
        throw InvalidArgument("linear constraint has lower > upper");
  }
  std::size_t size() const override { return static_cast<std::size_t>(H_.rows()); }
  bool affine() const override { return true; }
  const Eigen::VectorXd& lower() const override { return lower_; }
  const Eigen::VectorXd& upper() const override { return upper_; }
  void evaluate(std::span<const double> theta, Eigen::VectorXd& h,
                Eigen::MatrixXd* jacobian) const override {
    const Eigen::Map<const Eigen::VectorXd> t(theta.data(),
                                              static_cast<Eigen::Index>(theta.size()));
    h = H_ * t;
    if (jacobian) *jacobian = H_;
  }

 private:
  Eigen::MatrixXd H_;
  Eigen::VectorXd lower_, upper_;
};

enum class Backend { Auto, Lp, Slp, Penalty };

inline const char* to_string(Backend b) {
  switch (b) {
    case Backend::Auto: return "auto";
    case Backend::Lp: return "lp";
    case Backend::Slp: return "slp";
    case Backend::Penalty: return "penalty";
  }
  return "?";
}

inline Backend parse_backend(const std::string& s) {
  if (s == "auto") return Backend::Auto;
  if (s == "lp") return Backend::Lp;
  if (s == "slp") return Backend::Slp;
  if (s == "penalty") return Backend::Penalty;
  throw InvalidArgument("unknown solver backend '" + s + "'");
}

struct SolverOptions {
  Backend backend = Backend::Auto;
  int starts = 16;
  // Extra starting points tried right after theta = 0.
  std::vector<std::vector<double>> hints;
  // Search box for theta (entries may be infinite).
  double box_lower = -10.0;
  double box_upper = 10.0;
  // Random starts are drawn from the box intersected with [-radius, radius].
  double start_radius = 10.0;
  std::uint64_t seed = 0x5eed;
  double lp_feasibility_tol = 1e-8;
  double penalty_feasibility_tol = 1e-6;
  int max_iterations = 500;  // per start and penalty level
  // Penalty backend: Nelder-Mead evaluation budget per stage is this times p.
  int nm_evals_per_param = 2000;
};

struct SlackProblem {
  std::shared_ptr<const MomentModel> model;
  std::shared_ptr<const ConstraintSet> constraints;  // may be null
  NormOrder q = NormOrder::infinity();
  double r = 0.0;
  SolverOptions options;
};

struct SlackSolution {
  std::vector<double> theta;
  double mu = 0.0;    // max(0, psi - r)
  double psi = 0.0;   // Psi_q(theta)
  Backend backend = Backend::Auto;
  double dispersion = 0.0;  // max - min of Psi over converged starts
  int starts_run = 0;
  int starts_converged = 0;
  // h(theta) minus its projection onto [lower, upper].
  Eigen::VectorXd residuals;
  double max_violation = 0.0;
};

struct VectorSlackSolution {
  std::vector<double> theta;
  Eigen::VectorXd mu;        // vector slack
  double mu_norm = 0.0;      // ||mu||_{q tilde}
  double mu_norm_q = 0.0;    // ||mu||_q, a feasible scalar slack
  double psi = 0.0;          // Psi_q(theta)
  NormOrder q_tilde;
  Backend backend = Backend::Auto;
  double dispersion = 0.0;
  int starts_run = 0;
  int starts_converged = 0;
  Eigen::VectorXd residuals;
  double max_violation = 0.0;
};

namespace detail {

inline double violation(const Eigen::VectorXd& h, const Eigen::VectorXd& lo,
                        const Eigen::VectorXd& hi) {
  double v = 0.0;
  for (Eigen::Index k = 0; k < h.size(); ++k)
    v += std::max({0.0, lo[k] - h[k], h[k] - hi[k]});
  return v;
}

inline Eigen::VectorXd signed_residuals(const Eigen::VectorXd& h,
                                        const Eigen::VectorXd& lo,
                                        const Eigen::VectorXd& hi) {
  Eigen::VectorXd r(h.size());
  for (Eigen::Index k = 0; k < h.size(); ++k)
    r[k] = h[k] - std::clamp(h[k], lo[k], hi[k]);
  return r;
}

// Feasibility tolerance scaled by the magnitude of the bounds.
inline double feas_scale(const ConstraintSet* cons) {
  double s = 1.0;
  if (!cons) return s;
  for (Eigen::Index k = 0; k < cons->lower().size(); ++k) {
    if (std::isfinite(cons->lower()[k])) s = std::max(s, std::abs(cons->lower()[k]));
    if (std::isfinite(cons->upper()[k])) s = std::max(s, std::abs(cons->upper()[k]));
  }
  return s;
}

// Piecewise-linear objective of the moment vector:
//   sum = false:  max(0, max_j |c_j| - shift)
//   sum = true:   sum_j max(0, |c_j| - shift)
// shift = 0 gives the l_inf and l_1 norms.
struct PwlObjective {
  bool sum = false;
  double shift = 0.0;

  double operator()(const Eigen::VectorXd& c) const {
    if (sum) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < c.size(); ++j)
        s += std::max(0.0, std::abs(c[j]) - shift);
      return s;
    }
    return std::max(0.0, c.cwiseAbs().maxCoeff() - shift);
  }
};

struct Point {
  std::vector<double> theta;
  Eigen::VectorXd c, h;
  Eigen::MatrixXd J, H;
  bool ok = false;
};

inline Point evaluate_point(const MomentModel& model, const ConstraintSet* cons,
                            std::vector<double> theta, bool with_jacobian) {
  Point p;
  p.theta = std::move(theta);
  try {
    model.moments(p.theta, p.c, with_jacobian ? &p.J : nullptr);
    if (cons) cons->evaluate(p.theta, p.h, with_jacobian ? &p.H : nullptr);
    p.ok = p.c.allFinite() && p.h.allFinite() &&
           (!with_jacobian || (p.J.allFinite() && p.H.allFinite()));
  } catch (const DomainError&) {
    p.ok = false;
  }
  return p;
}

// Origin of a row in the linearized subproblem.
struct RowTag {
  enum Kind { Moment, Epigraph, Constraint, Slack, Step } kind;
  Eigen::Index index;
  double sign;
};

// Linearized subproblem at a point:
//   min  obj(c + J d) + rho * sum_k s_k
//   s.t. lo_k - s_k <= h_k + H_k d <= hi_k + s_k,  s >= 0,
//        dlo <= d <= dhi
// Without elastic variables (rho <= 0) the constraints are hard.
// Variables: d (p), objective epigraph (1 or L), s (m when elastic).
inline LpResult solve_linearized(const Point& pt, const Eigen::VectorXd& lo,
                                 const Eigen::VectorXd& hi,
                                 const Eigen::VectorXd& dlo,
                                 const Eigen::VectorXd& dhi, PwlObjective obj,
                                 double rho, Eigen::VectorXd& step,
                                 double& model_value,
                                 std::vector<RowTag>* tags = nullptr,
                                 std::vector<Eigen::Index>* basis = nullptr) {
  const Eigen::Index p = static_cast<Eigen::Index>(pt.theta.size());
  const Eigen::Index L = pt.c.size();
  const Eigen::Index m = pt.h.size();
  const bool elastic = rho > 0.0;
  const Eigen::Index nt = obj.sum ? L : 1;
  const Eigen::Index ns = elastic ? m : 0;
  const Eigen::Index nv = p + nt + ns;

  Eigen::Index rows = 2 * L;
  if (obj.shift > 0.0) rows += nt;
  for (Eigen::Index k = 0; k < m; ++k)
    rows += std::isfinite(hi[k]) + std::isfinite(lo[k]);
  rows += ns;
  for (Eigen::Index i = 0; i < p; ++i)
    rows += std::isfinite(dhi[i]) + std::isfinite(dlo[i]);

  InequalityLp lp{Eigen::MatrixXd::Zero(rows, nv), Eigen::VectorXd::Zero(rows),
                  Eigen::VectorXd::Zero(nv)};
  Eigen::Index r = 0;
  std::vector<RowTag> tag;
  tag.reserve(static_cast<std::size_t>(rows));
  for (Eigen::Index j = 0; j < L; ++j) {
    tag.push_back({RowTag::Moment, j, 1.0});
    tag.push_back({RowTag::Moment, j, -1.0});
    const Eigen::Index t = obj.sum ? p + j : p;
    // c_j + J_j d - shift <= t  and  -(c_j + J_j d) - shift <= t
    lp.G.row(r).head(p) = pt.J.row(j);
    lp.G(r, t) = -1.0;
    lp.h[r++] = obj.shift - pt.c[j];
    lp.G.row(r).head(p) = -pt.J.row(j);
    lp.G(r, t) = -1.0;
    lp.h[r++] = obj.shift + pt.c[j];
  }
  if (obj.shift > 0.0)
    for (Eigen::Index j = 0; j < nt; ++j) {
      tag.push_back({RowTag::Epigraph, j, -1.0});
      lp.G(r++, p + j) = -1.0;
    }
  for (Eigen::Index k = 0; k < m; ++k) {
    if (std::isfinite(hi[k])) {
      tag.push_back({RowTag::Constraint, k, 1.0});
      lp.G.row(r).head(p) = pt.H.row(k);
      if (elastic) lp.G(r, p + nt + k) = -1.0;
      lp.h[r++] = hi[k] - pt.h[k];
    }
    if (std::isfinite(lo[k])) {
      tag.push_back({RowTag::Constraint, k, -1.0});
      lp.G.row(r).head(p) = -pt.H.row(k);
      if (elastic) lp.G(r, p + nt + k) = -1.0;
      lp.h[r++] = pt.h[k] - lo[k];
    }
  }
  for (Eigen::Index k = 0; k < ns; ++k) {
    tag.push_back({RowTag::Slack, k, -1.0});
    lp.G(r++, p + nt + k) = -1.0;
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    if (std::isfinite(dhi[i])) {
      tag.push_back({RowTag::Step, i, 1.0});
      lp.G(r, i) = 1.0;
      lp.h[r++] = dhi[i];
    }
    if (std::isfinite(dlo[i])) {
      tag.push_back({RowTag::Step, i, -1.0});
      lp.G(r, i) = -1.0;
      lp.h[r++] = -dlo[i];
    }
  }
  lp.f.segment(p, nt).setOnes();
  if (elastic) lp.f.tail(ns).setConstant(rho);

  LpOptions opt;
  opt.pricing = Pricing::Dantzig;
  opt.degenerate_run_limit = 1000;
  LpResult res = solve_inequality_lp(lp, opt, basis && !basis->empty() ? basis : nullptr);
  if (basis) *basis = res.basis;
  if (res.status == LpStatus::Optimal) {
    step = res.x.head(p);
    model_value = res.objective;
  }
  if (tags) *tags = std::move(tag);
  return res;
}

struct LocalResult {
  std::vector<double> theta;
  double objective = std::numeric_limits<double>::infinity();
  double violation = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool feasible = false;
};

inline Eigen::VectorXd box_vector(std::size_t p, double v) {
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p), v);
}

// Newton iteration on the optimality conditions of the active pieces,
//   f + sum_r y_r grad g_r(theta, t) = 0,  g_r(theta, t) = 0,
// started from the LP duals. SLP alone converges linearly when the
// minimizer is not a vertex of the linearization; this supplies the
// curvature, with second derivatives from differenced Jacobians.
inline std::optional<Point> polish_active(const MomentModel& model,
                                          const ConstraintSet* cons, PwlObjective obj,
                                          const Point& pt, const std::vector<RowTag>& tags,
                                          const Eigen::VectorXd& duals,
                                          const SolverOptions& opt) {
  const Eigen::Index p = static_cast<Eigen::Index>(pt.theta.size());
  const Eigen::Index L = pt.c.size();
  const Eigen::Index nt = obj.sum ? L : 1;
  const Eigen::Index nz = p + nt;
  const Eigen::VectorXd empty;
  const Eigen::VectorXd& lo = cons ? cons->lower() : empty;
  const Eigen::VectorXd& hi = cons ? cons->upper() : empty;
  const double ytol = 1e-12 * (1.0 + (duals.size() ? duals.maxCoeff() : 0.0));
  std::vector<RowTag> act;
  std::vector<double> y0;
  for (std::size_t r = 0; r < tags.size(); ++r) {
    if (!(duals[static_cast<Eigen::Index>(r)] > ytol)) continue;
    const RowTag& tg = tags[r];
    if (tg.kind == RowTag::Slack) continue;
    if (tg.kind == RowTag::Step) {
      // Only box bounds count; trust-region bounds are artificial.
      const double th = pt.theta[static_cast<std::size_t>(tg.index)];
      const double bound = tg.sign > 0 ? opt.box_upper : opt.box_lower;
      if (std::abs(th - bound) > 1e-12 * (1.0 + std::abs(bound))) continue;
    }
    act.push_back(tg);
    y0.push_back(duals[static_cast<Eigen::Index>(r)]);
  }
  if (act.empty()) return std::nullopt;
  const Eigen::Index a = static_cast<Eigen::Index>(act.size());
  const Eigen::Index N = nz + a;

  Eigen::VectorXd t(nt);
  if (obj.sum)
    for (Eigen::Index j = 0; j < L; ++j) t[j] = std::max(0.0, std::abs(pt.c[j]) - obj.shift);
  else
    t[0] = std::max(0.0, pt.c.cwiseAbs().maxCoeff() - obj.shift);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(y0.data(), a);
  auto tcol = [&](Eigen::Index j) { return obj.sum ? j : Eigen::Index{0}; };

  // Sum of y_r grad_theta g_r over the nonlinear rows.
  auto grad_theta = [&](const Point& q, const Eigen::VectorXd& yy) {
    Eigen::VectorXd gt = Eigen::VectorXd::Zero(p);
    for (Eigen::Index r = 0; r < a; ++r) {
      const RowTag& tg = act[static_cast<std::size_t>(r)];
      if (tg.kind == RowTag::Moment) gt += yy[r] * tg.sign * q.J.row(tg.index).transpose();
      if (tg.kind == RowTag::Constraint) gt += yy[r] * tg.sign * q.H.row(tg.index).transpose();
    }
    return gt;
  };
  auto system = [&](const Point& q, Eigen::MatrixXd& A, Eigen::VectorXd& F) {
    A = Eigen::MatrixXd::Zero(a, nz);
    F.resize(N);
    F.head(nz).setZero();
    F.segment(p, nt).setOnes();
    for (Eigen::Index r = 0; r < a; ++r) {
      const RowTag& tg = act[static_cast<std::size_t>(r)];
      double g = 0.0;
      switch (tg.kind) {
        case RowTag::Moment:
          A.row(r).head(p) = tg.sign * q.J.row(tg.index);
          A(r, p + tcol(tg.index)) = -1.0;
          g = tg.sign * q.c[tg.index] - t[tcol(tg.index)] - obj.shift;
          break;
        case RowTag::Epigraph:
          A(r, p + tg.index) = -1.0;
          g = -t[tg.index];
          break;
        case RowTag::Constraint:
          A.row(r).head(p) = tg.sign * q.H.row(tg.index);
          g = tg.sign > 0 ? q.h[tg.index] - hi[tg.index] : lo[tg.index] - q.h[tg.index];
          break;
        case RowTag::Step: {
          const auto i = static_cast<std::size_t>(tg.index);
          A(r, tg.index) = tg.sign;
          g = tg.sign > 0 ? q.theta[i] - opt.box_upper : opt.box_lower - q.theta[i];
          break;
        }
        case RowTag::Slack: break;
      }
      F[nz + r] = g;
    }
    F.head(nz) += A.transpose() * y;
  };

  Point q = pt;
  Eigen::MatrixXd A;
  Eigen::VectorXd F;
  for (int iter = 0; iter < 20; ++iter) {
    system(q, A, F);
    if (F.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + t.cwiseAbs().maxCoeff())) break;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
    const Eigen::VectorXd g0 = grad_theta(q, y);
    for (Eigen::Index i = 0; i < p; ++i) {
      std::vector<double> th = q.theta;
      const double h = 1e-7 * (1.0 + std::abs(th[static_cast<std::size_t>(i)]));
      th[static_cast<std::size_t>(i)] += h;
      const Point qi = evaluate_point(model, cons, std::move(th), true);
      if (!qi.ok) return std::nullopt;
      K.col(i).head(p) = (grad_theta(qi, y) - g0) / h;
    }
    K.topLeftCorner(p, p) = 0.5 * (K.topLeftCorner(p, p) + K.topLeftCorner(p, p).transpose()).eval();
    K.topRightCorner(nz, a) = A.transpose();
    K.bottomLeftCorner(a, nz) = A;
    const Eigen::VectorXd delta = K.colPivHouseholderQr().solve(-F);
    if (!delta.allFinite() || delta.head(p).cwiseAbs().maxCoeff() > 1.0) return std::nullopt;
    std::vector<double> th = q.theta;
    for (Eigen::Index i = 0; i < p; ++i) th[static_cast<std::size_t>(i)] += delta[i];
    for (double v : th)
      if (v < opt.box_lower || v > opt.box_upper) return std::nullopt;
    t += delta.segment(p, nt);
    y += delta.tail(a);
    q = evaluate_point(model, cons, std::move(th), true);
    if (!q.ok) return std::nullopt;
  }
  system(q, A, F);
  if (!(F.cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + t.cwiseAbs().maxCoeff()))) return std::nullopt;
  if (y.minCoeff() < -1e-9 * (1.0 + y.cwiseAbs().maxCoeff())) return std::nullopt;
  return q;
}

// Second-order correction: a least-norm step, with the Jacobian at the
// current point, that restores the active rows of the subproblem at the
// trial point. Counters the curvature of the active pieces, which
// otherwise forces tiny steps along curved valleys.
inline std::optional<std::vector<double>> second_order_correction(
    const Point& pt, const Point& trial, const std::vector<RowTag>& tags,
    const LpResult& lpr, PwlObjective obj, const Eigen::VectorXd& lo,
    const Eigen::VectorXd& hi, const SolverOptions& opt) {
  const Eigen::Index p = static_cast<Eigen::Index>(pt.theta.size());
  const Eigen::Index nt = obj.sum ? pt.c.size() : 1;
  const double ytol = 1e-12 * (1.0 + (lpr.y.size() ? lpr.y.maxCoeff() : 0.0));
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> res;
  for (std::size_t r = 0; r < tags.size(); ++r) {
    if (!(lpr.y[static_cast<Eigen::Index>(r)] > ytol)) continue;
    const RowTag& tg = tags[r];
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p + nt);
    double g = 0.0;
    switch (tg.kind) {
      case RowTag::Moment: {
        const Eigen::Index tc = obj.sum ? tg.index : 0;
        a.head(p) = tg.sign * pt.J.row(tg.index).transpose();
        a[p + tc] = -1.0;
        g = tg.sign * trial.c[tg.index] - lpr.x[p + tc] - obj.shift;
        break;
      }
      case RowTag::Constraint:
        a.head(p) = tg.sign * pt.H.row(tg.index).transpose();
        g = tg.sign > 0 ? trial.h[tg.index] - hi[tg.index] : lo[tg.index] - trial.h[tg.index];
        break;
      case RowTag::Step: {
        const double th = trial.theta[static_cast<std::size_t>(tg.index)];
        const double bound = tg.sign > 0 ? opt.box_upper : opt.box_lower;
        if (th != bound) continue;
        a[tg.index] = 1.0;
        break;
      }
      default:
        continue;
    }
    rows.push_back(std::move(a));
    res.push_back(g);
  }
  if (rows.empty()) return std::nullopt;
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), p + nt);
  for (std::size_t r = 0; r < rows.size(); ++r) A.row(static_cast<Eigen::Index>(r)) = rows[r];
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(res.data(), A.rows());
  const Eigen::VectorXd dz = A.completeOrthogonalDecomposition().solve(rhs);
  if (!dz.allFinite()) return std::nullopt;
  std::vector<double> theta = trial.theta;
  for (Eigen::Index i = 0; i < p; ++i)
    theta[static_cast<std::size_t>(i)] =
        std::clamp(theta[static_cast<std::size_t>(i)] + dz[i], opt.box_lower, opt.box_upper);
  return theta;
}

// Trust-region SLP on phi = obj(c) + rho * violation from one start.
inline LocalResult slp_local(const MomentModel& model, const ConstraintSet* cons,
                             PwlObjective obj, std::vector<double> theta0,
                             const SolverOptions& opt, double feas_tol) {
  const std::size_t p = model.num_params();
  const Eigen::VectorXd empty;
  const Eigen::VectorXd& lo = cons ? cons->lower() : empty;
  const Eigen::VectorXd& hi = cons ? cons->upper() : empty;
  LocalResult out;
  Point pt = evaluate_point(model, cons, std::move(theta0), true);
  if (!pt.ok) return out;
  double radius = 1.0;
  const double max_radius =
      std::max(1.0, std::min(1e6, 0.5 * (opt.box_upper - opt.box_lower)));
  bool converged = false;
  for (double rho = 100.0; rho <= 1e10; rho *= 10.0) {
    converged = false;
    auto merit = [&](const Point& q) {
      return obj(q.c) + rho * violation(q.h, lo, hi);
    };
    double current = merit(pt);
    int next_polish = 4, polish_gap = 4;
    std::vector<RowTag> tags;
    std::vector<Eigen::Index> basis;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
      Eigen::VectorXd dlo(p), dhi(p);
      for (std::size_t i = 0; i < p; ++i) {
        dlo[i] = std::max(-radius, opt.box_lower - pt.theta[i]);
        dhi[i] = std::min(radius, opt.box_upper - pt.theta[i]);
      }
      Eigen::VectorXd step;
      double model_value = 0.0;
      LpResult lpr;
      try {
        lpr = solve_linearized(pt, lo, hi, dlo, dhi, obj, rho, step, model_value, &tags, &basis);
      } catch (const NumericalFailure&) {
        break;
      }
      if (lpr.status != LpStatus::Optimal) break;
      const double predicted = current - model_value;
      // Rounding in h can leave a tiny violation that the LP still prices.
      const double viol = violation(pt.h, lo, hi);
      const double floor = 1e-13 * (1.0 + std::abs(current)) + (viol <= feas_tol ? rho * viol : 0.0);
      if (predicted <= floor) {
        converged = true;
        break;
      }
      if (iter >= next_polish && violation(pt.h, lo, hi) <= feas_tol) {
        std::optional<Point> polished = polish_active(model, cons, obj, pt, tags, lpr.y, opt);
        const double value = polished ? merit(*polished) : current;
        if (polished && value <= current + 1e-14 * (1.0 + std::abs(current))) {
          // A KKT point that does not improve the merit: done.
          if (value >= current - 1e-14 * (1.0 + std::abs(current))) {
            pt = std::move(*polished);
            converged = true;
            break;
          }
          pt = std::move(*polished);
          current = value;
          next_polish = iter + 1;
          continue;
        }
        polish_gap *= 2;
        next_polish = iter + polish_gap;
      }
      std::vector<double> trial(p);
      for (std::size_t i = 0; i < p; ++i)
        trial[i] = std::clamp(pt.theta[i] + step[static_cast<Eigen::Index>(i)],
                              opt.box_lower, opt.box_upper);
      const double step_len = step.cwiseAbs().maxCoeff();
      Point next = evaluate_point(model, cons, std::move(trial), true);
      double candidate = next.ok ? merit(next) : std::numeric_limits<double>::infinity();
      double ratio = (current - candidate) / predicted;
      if (ratio < 0.1 && next.ok) {
        if (auto corrected = second_order_correction(pt, next, tags, lpr, obj, lo, hi, opt)) {
          Point alt = evaluate_point(model, cons, std::move(*corrected), true);
          const double value = alt.ok ? merit(alt) : std::numeric_limits<double>::infinity();
          const double alt_ratio = (current - value) / predicted;
          if (alt_ratio >= 0.1) {
            next = std::move(alt);
            candidate = value;
            ratio = alt_ratio;
          }
        }
      }
      if (ratio >= 0.1) {
        pt = std::move(next);
        current = candidate;
        if (ratio >= 0.75 && step_len >= 0.99 * radius)
          radius = std::min(2.0 * radius, max_radius);
      } else {
        radius = 0.5 * step_len;
      }
      if (radius < 1e-11) {
        converged = true;
        break;
      }
    }
    out.violation = violation(pt.h, lo, hi);
    if (out.violation <= feas_tol) break;
    radius = std::max(radius, 1e-3);
  }
  out.theta = pt.theta;
  out.objective = obj(pt.c);
  out.converged = converged;
  out.feasible = out.violation <= feas_tol;
  return out;
}

struct NelderMeadResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Adaptive-parameter Nelder-Mead with restarts at the incumbent.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, double step,
                             int max_evals) {
  const std::size_t p = x0.size();
  const double dim = static_cast<double>(std::max<std::size_t>(p, 1));
  const double alpha = 1.0, beta = 1.0 + 2.0 / dim;
  const double gamma = 0.75 - 1.0 / (2.0 * dim), delta = 1.0 - 1.0 / dim;
  NelderMeadResult best;
  best.x = x0;
  best.f = f(x0);
  int evals = 1;
  if (p == 0) {
    best.converged = true;
    return best;
  }
  for (int restart = 0; restart < 20 && evals < max_evals; ++restart) {
    std::vector<std::vector<double>> s(p + 1, best.x);
    std::vector<double> fs(p + 1);
    fs[0] = best.f;
    for (std::size_t i = 0; i < p; ++i) {
      const double h = step * std::max(1.0, std::abs(best.x[i]));
      s[i + 1][i] += h;
      fs[i + 1] = f(s[i + 1]);
      ++evals;
    }
    bool local_converged = false;
    std::vector<std::size_t> order(p + 1);
    while (evals < max_evals) {
      for (std::size_t i = 0; i <= p; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
      const std::size_t lo = order[0], hi = order[p], sh = order[p - 1];
      double size = 0.0;
      for (std::size_t i = 0; i <= p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          size = std::max(size, std::abs(s[i][j] - s[lo][j]));
      if (std::abs(fs[hi] - fs[lo]) <= 1e-14 * (1.0 + std::abs(fs[lo])) &&
          size <= 1e-11) {
        local_converged = true;
        break;
      }
      std::vector<double> centroid(p, 0.0);
      for (std::size_t i = 0; i <= p; ++i)
        if (i != hi)
          for (std::size_t j = 0; j < p; ++j) centroid[j] += s[i][j] / dim;
      auto along = [&](double t) {
        std::vector<double> x(p);
        for (std::size_t j = 0; j < p; ++j)
          x[j] = centroid[j] + t * (s[hi][j] - centroid[j]);
        return x;
      };
      std::vector<double> xr = along(-alpha);
      const double fr = f(xr);
      ++evals;
      if (fr < fs[lo]) {
        std::vector<double> xe = along(-alpha * beta);
        const double fe = f(xe);
        ++evals;
        if (fe < fr) {
          s[hi] = std::move(xe);
          fs[hi] = fe;
        } else {
          s[hi] = std::move(xr);
          fs[hi] = fr;
        }
      } else if (fr < fs[sh]) {
        s[hi] = std::move(xr);
        fs[hi] = fr;
      } else {
        const bool outside = fr < fs[hi];
        std::vector<double> xc = along(outside ? -alpha * gamma : gamma);
        const double fc = f(xc);
        ++evals;
        if (fc < (outside ? fr : fs[hi])) {
          s[hi] = std::move(xc);
          fs[hi] = fc;
        } else {
          for (std::size_t i = 0; i <= p; ++i) {
            if (i == lo) continue;
            for (std::size_t j = 0; j < p; ++j)
              s[i][j] = s[lo][j] + delta * (s[i][j] - s[lo][j]);
            fs[i] = f(s[i]);
            ++evals;
          }
        }
      }
    }
    std::size_t arg = 0;
    for (std::size_t i = 1; i <= p; ++i)
      if (fs[i] < fs[arg]) arg = i;
    const double improvement = best.f - fs[arg];
    if (fs[arg] < best.f) {
      best.f = fs[arg];
      best.x = s[arg];
    }
    if (local_converged &&
        improvement <= 1e-13 * (1.0 + std::abs(best.f))) {
      best.converged = true;
      break;
    }
    step = std::max(step * 0.1, 1e-6);
  }
  return best;
}

inline std::vector<double> clamp_box(std::vector<double> x, const SolverOptions& opt) {
  for (double& v : x) v = std::clamp(v, opt.box_lower, opt.box_upper);
  return x;
}

// Quadratic-penalty Nelder-Mead from one start; the objective is any
// function of the moment vector.
template <class Objective>
LocalResult penalty_local(const MomentModel& model, const ConstraintSet* cons,
                          const Objective& obj, std::vector<double> theta0,
                          const SolverOptions& opt, double feas_tol) {
  const Eigen::VectorXd empty;
  const Eigen::VectorXd& lo = cons ? cons->lower() : empty;
  const Eigen::VectorXd& hi = cons ? cons->upper() : empty;
  const int budget =
      opt.nm_evals_per_param * static_cast<int>(std::max<std::size_t>(1, model.num_params()));
  LocalResult out;
  std::vector<double> x = clamp_box(std::move(theta0), opt);
  bool converged = false;
  double step = 0.1;
  for (double rho = 10.0; rho <= 1e12; rho *= 100.0) {
    auto F = [&](const std::vector<double>& y) {
      const std::vector<double> inside = clamp_box(y, opt);
      double outside = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i)
        outside += (y[i] - inside[i]) * (y[i] - inside[i]);
      Point pt = evaluate_point(model, cons, inside, false);
      if (!pt.ok) return std::numeric_limits<double>::infinity();
      double pen = 0.0;
      for (Eigen::Index k = 0; k < pt.h.size(); ++k) {
        const double v = std::max({0.0, lo[k] - pt.h[k], pt.h[k] - hi[k]});
        pen += v * v;
      }
      return obj(pt.c) + rho * (pen + outside);
    };
    NelderMeadResult nm = nelder_mead(F, x, step, budget);
    if (!std::isfinite(nm.f)) return out;
    x = clamp_box(nm.x, opt);
    converged = nm.converged;
    Point pt = evaluate_point(model, cons, x, false);
    out.violation = violation(pt.h, lo, hi);
    out.objective = obj(pt.c);
    if (out.violation <= feas_tol) break;
    step = 0.01;
  }
  out.theta = x;
  out.converged = converged;
  out.feasible = out.violation <= feas_tol;
  return out;
}

inline std::vector<std::vector<double>> start_points(std::size_t p,
                                                     const SolverOptions& opt) {
  std::vector<std::vector<double>> starts;
  starts.push_back(clamp_box(std::vector<double>(p, 0.0), opt));
  for (const auto& h : opt.hints) {
    if (h.size() != p)
      throw InvalidArgument("start hint has " + std::to_string(h.size()) +
                            " entries but the model has " + std::to_string(p) +
                            " parameters");
    starts.push_back(clamp_box(h, opt));
  }
  const double lo = std::max(opt.box_lower, -opt.start_radius);
  const double hi = std::min(opt.box_upper, opt.start_radius);
  for (std::uint64_t k = 0; static_cast<int>(starts.size()) < std::max(1, opt.starts); ++k) {
    rng::Stream s(opt.seed, rng::stream_id(rng::kMultistart, k));
    std::vector<double> x(p);
    for (auto& v : x) v = s.uniform(lo, hi);
    starts.push_back(std::move(x));
  }
  return starts;
}

struct MultistartOutcome {
  LocalResult best;
  double dispersion = 0.0;
  int run = 0;
  int converged = 0;
};

template <class Local>
MultistartOutcome multistart(std::size_t p, const SolverOptions& opt, Local&& local) {
  const auto starts = start_points(p, opt);
  std::vector<LocalResult> results(starts.size());
  parallel_for(starts.size(), [&](std::size_t k) { results[k] = local(starts[k]); });
  MultistartOutcome out;
  out.run = static_cast<int>(results.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  int best = -1;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    if (r.converged) ++out.converged;
    if (!r.feasible) continue;
    if (r.converged) {
      lo = std::min(lo, r.objective);
      hi = std::max(hi, r.objective);
    }
    // strict comparison keeps the first start among ties
    if (best < 0 || r.objective < results[static_cast<std::size_t>(best)].objective)
      best = static_cast<int>(k);
  }
  if (best < 0) {
    double least = std::numeric_limits<double>::infinity();
    for (const auto& r : results) least = std::min(least, r.violation);
    throw Infeasible(
        "no start reached a point satisfying the constraints (smallest total "
        "violation " + std::to_string(least) + "); the hypothesis set appears empty");
  }
  out.best = results[static_cast<std::size_t>(best)];
  out.dispersion = hi >= lo ? hi - lo : 0.0;
  if (out.converged == 0) {
    throw NonConvergence("no start converged within the iteration budget",
                         out.best.theta, out.best.objective);
  }
  return out;
}

inline Backend choose_backend(const SlackProblem& prob) {
  const bool affine = prob.model->affine() && (!prob.constraints || prob.constraints->affine());
  const bool pwl = prob.q.is_inf() || prob.q.is_one();
  Backend b = prob.options.backend;
  if (b == Backend::Auto) return pwl ? (affine ? Backend::Lp : Backend::Slp) : Backend::Penalty;
  if (b == Backend::Lp && !(affine && pwl))
    throw InvalidArgument("the lp backend needs affine moments and constraints and q in {1, inf}");
  if (b == Backend::Slp && !pwl)
    throw InvalidArgument("the slp backend needs q in {1, inf}");
  return b;
}

// Exact LP for affine problems; returns the minimizer of obj.
inline std::vector<double> lp_minimize(const MomentModel& model,
                                       const ConstraintSet* cons,
                                       PwlObjective obj, const SolverOptions& opt) {
  const std::size_t p = model.num_params();
  Point pt = evaluate_point(model, cons, std::vector<double>(p, 0.0), true);
  if (!pt.ok) throw DomainError("affine model is not finite at theta = 0");
  const Eigen::VectorXd empty;
  const Eigen::VectorXd& lo = cons ? cons->lower() : empty;
  const Eigen::VectorXd& hi = cons ? cons->upper() : empty;
  const Eigen::VectorXd dlo = box_vector(p, opt.box_lower);
  const Eigen::VectorXd dhi = box_vector(p, opt.box_upper);
  Eigen::VectorXd step;
  double value = 0.0;
  const LpResult res = solve_linearized(pt, lo, hi, dlo, dhi, obj, 0.0, step, value);
  if (res.status != LpStatus::Optimal)
    throw Infeasible("the linear constraint set within the search box is empty");
  return std::vector<double>(step.data(), step.data() + step.size());
}

template <class Solution>
void fill_common(Solution& s, const SlackProblem& prob) {
  Point pt = evaluate_point(*prob.model, prob.constraints.get(), s.theta, false);
  if (!pt.ok) throw DomainError("model is not finite at the solution");
  s.psi = lq_norm(pt.c, prob.q);
  if (prob.constraints) {
    s.residuals = signed_residuals(pt.h, prob.constraints->lower(), prob.constraints->upper());
    s.max_violation = s.residuals.size() ? s.residuals.cwiseAbs().maxCoeff() : 0.0;
  }
}

inline void validate(const SlackProblem& prob) {
  if (!prob.model) throw InvalidArgument("slack problem needs a model");
  if (!(prob.r >= 0.0)) throw InvalidArgument("threshold r must be >= 0");
  if (!(prob.options.box_lower < prob.options.box_upper))
    throw InvalidArgument("search box needs lower < upper");
  if (!(prob.options.start_radius > 0.0))
    throw InvalidArgument("start radius must be positive");
}

}  // namespace detail

inline double psi(const MomentModel& model, std::span<const double> theta, NormOrder q) {
  Eigen::VectorXd c;
  model.moments(theta, c, nullptr);
  return lq_norm(c, q);
}

inline SlackSolution minimize_slack(const SlackProblem& prob) {
  detail::validate(prob);
  const Backend backend = detail::choose_backend(prob);
  const MomentModel& model = *prob.model;
  const ConstraintSet* cons = prob.constraints.get();
  const std::size_t p = model.num_params();
  const detail::PwlObjective pwl{prob.q.is_one(), 0.0};
  const double scale = detail::feas_scale(cons);

  SlackSolution sol;
  sol.backend = backend;
  if (backend == Backend::Lp) {
    sol.theta = detail::lp_minimize(model, cons, pwl, prob.options);
    sol.starts_run = sol.starts_converged = 1;
    detail::fill_common(sol, prob);
    if (sol.max_violation > prob.options.lp_feasibility_tol * scale)
      throw NumericalFailure("LP solution violates the constraints by " +
                             std::to_string(sol.max_violation));
  } else {
    detail::MultistartOutcome ms;
    if (backend == Backend::Slp) {
      const double tol = prob.options.lp_feasibility_tol * scale;
      ms = detail::multistart(p, prob.options, [&](std::vector<double> x0) {
        return detail::slp_local(model, cons, pwl, std::move(x0), prob.options, tol);
      });
    } else {
      const double tol = prob.options.penalty_feasibility_tol * scale;
      const NormOrder q = prob.q;
      auto obj = [q](const Eigen::VectorXd& c) { return lq_norm(c, q); };
      ms = detail::multistart(p, prob.options, [&](std::vector<double> x0) {
        return detail::penalty_local(model, cons, obj, std::move(x0), prob.options, tol);
      });
    }
    sol.theta = ms.best.theta;
    sol.dispersion = ms.dispersion;
    sol.starts_run = ms.run;
    sol.starts_converged = ms.converged;
    detail::fill_common(sol, prob);
  }
  sol.mu = std::max(0.0, sol.psi - prob.r);
  return sol;
}

// Soft threshold c_j -> sign(c_j) max(0, |c_j| - r).
inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& c, double r) {
  Eigen::VectorXd mu(c.size());
  for (Eigen::Index j = 0; j < c.size(); ++j)
    mu[j] = std::copysign(std::max(0.0, std::abs(c[j]) - r), c[j]);
  return mu;
}

// Shrinkage along c: c * max(0, 1 - r/||c||_q).
inline Eigen::VectorXd shrink(const Eigen::VectorXd& c, double r, NormOrder q) {
  const double norm = lq_norm(c, q);
  if (norm <= r) return Eigen::VectorXd::Zero(c.size());
  return c * (1.0 - r / norm);
}

// Optimal vector slack for a fixed moment vector: min ||mu||_qt subject to
// ||c - mu||_q <= r, for q = inf (any qt) or qt = q.
inline Eigen::VectorXd inner_vector_slack(const Eigen::VectorXd& c, double r,
                                          NormOrder q, NormOrder q_tilde) {
  if (q.is_inf()) return soft_threshold(c, r);
  if (q == q_tilde) return shrink(c, r, q);
  throw InvalidArgument("vector slack supports q = inf with any q~, or q~ = q; got q = " +
                        q.str() + ", q~ = " + q_tilde.str());
}

// Vector-slack program: min ||mu||_qt subject to ||c(theta) - mu||_q <= r
// and the constraints.
inline VectorSlackSolution minimize_slack_vector(const SlackProblem& prob,
                                                 NormOrder q_tilde) {
  detail::validate(prob);
  const NormOrder q = prob.q;
  if (!q.is_inf() && !(q == q_tilde))
    throw InvalidArgument("vector slack supports q = inf with any q~, or q~ = q; got q = " +
                          q.str() + ", q~ = " + q_tilde.str());
  VectorSlackSolution out;
  out.q_tilde = q_tilde;
  auto finish = [&](std::vector<double> theta) {
    out.theta = std::move(theta);
    Eigen::VectorXd c;
    prob.model->moments(out.theta, c, nullptr);
    out.psi = lq_norm(c, q);
    out.mu = inner_vector_slack(c, prob.r, q, q_tilde);
    out.mu_norm = lq_norm(out.mu, q_tilde);
    out.mu_norm_q = lq_norm(out.mu, q);
    if (prob.constraints) {
      Eigen::VectorXd h;
      prob.constraints->evaluate(out.theta, h, nullptr);
      out.residuals = detail::signed_residuals(h, prob.constraints->lower(),
                                               prob.constraints->upper());
      out.max_violation = out.residuals.size() ? out.residuals.cwiseAbs().maxCoeff() : 0.0;
    }
  };

  if (q == q_tilde) {
    // ||mu|| = max(0, ||c||_q - r): the scalar program.
    const SlackSolution s = minimize_slack(prob);
    out.backend = s.backend;
    out.dispersion = s.dispersion;
    out.starts_run = s.starts_run;
    out.starts_converged = s.starts_converged;
    finish(s.theta);
    return out;
  }

  // q = inf: objective ||soft(c, r)||_qt.
  const MomentModel& model = *prob.model;
  const ConstraintSet* cons = prob.constraints.get();
  const std::size_t p = model.num_params();
  const double scale = detail::feas_scale(cons);
  const bool pwl = q_tilde.is_inf() || q_tilde.is_one();
  const bool affine = model.affine() && (!cons || cons->affine());
  Backend backend = prob.options.backend;
  if (backend == Backend::Auto)
    backend = pwl ? (affine ? Backend::Lp : Backend::Slp) : Backend::Penalty;
  if ((backend == Backend::Lp && !(pwl && affine)) || (backend == Backend::Slp && !pwl))
    throw InvalidArgument(std::string("backend ") + to_string(backend) +
                          " does not support this vector-slack problem");
  out.backend = backend;
  const detail::PwlObjective obj{q_tilde.is_one(), prob.r};
  if (backend == Backend::Lp) {
    finish(detail::lp_minimize(model, cons, obj, prob.options));
    out.starts_run = out.starts_converged = 1;
    return out;
  }
  detail::MultistartOutcome ms;
  if (backend == Backend::Slp) {
    const double tol = prob.options.lp_feasibility_tol * scale;
    ms = detail::multistart(p, prob.options, [&](std::vector<double> x0) {
      return detail::slp_local(model, cons, obj, std::move(x0), prob.options, tol);
    });
  } else {
    const double tol = prob.options.penalty_feasibility_tol * scale;
    const double r = prob.r;
    auto f = [r, q_tilde](const Eigen::VectorXd& c) {
      return lq_norm(soft_threshold(c, r), q_tilde);
    };
    ms = detail::multistart(p, prob.options, [&](std::vector<double> x0) {
      return detail::penalty_local(model, cons, f, std::move(x0), prob.options, tol);
    });
  }
  out.dispersion = ms.dispersion;
  out.starts_run = ms.run;
  out.starts_converged = ms.converged;
  finish(ms.best.theta);
  return out;
}

}  // namespace feastest
