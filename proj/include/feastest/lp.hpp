#pragma once

// Dense two-phase tableau simplex for standard-form linear programs
//
//   min c^T x   subject to   A x = b,  x >= 0.
//
// Phase 1 starts from an artificial basis; the artificial columns stay in
// the tableau so that B^-1, and with it the dual vector, can be read off at
// the end of either phase. Bland's rule is the default pricing and rules out
// cycling. Dantzig pricing is available for speed; it falls back to Bland
// after a run of degenerate pivots.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "feastest/error.hpp"

namespace feastest {

struct StandardLp {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  // Empty means a pure feasibility problem (c = 0).
  std::optional<Eigen::VectorXd> c;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
  }
  return "?";
}

struct LpResult {
  LpStatus status = LpStatus::Optimal;
  Eigen::VectorXd x;            // primal point (Optimal)
  Eigen::VectorXd y;            // duals: A^T y <= c, b^T y = c^T x (Optimal)
  double objective = 0.0;       // c^T x (Optimal)
  Eigen::VectorXd certificate;  // pi with pi^T A >= 0, pi^T b < 0 (Infeasible)
  Eigen::VectorXd ray;          // r >= 0, A r = 0, c^T r < 0 (Unbounded)
  int pivots = 0;
  std::vector<Eigen::Index> basis;  // final basic columns (Optimal); may seed a warm start
};

enum class Pricing { Bland, Dantzig };

struct LpOptions {
  Pricing pricing = Pricing::Bland;
  double pivot_tol = 1e-9;
  double feas_tol = 1e-9;
  // Accepted residual ||Ax - b||_inf relative to 1 + ||b||_inf.
  double residual_tol = 1e-8;
  int degenerate_run_limit = 50;  // Dantzig -> Bland switch
};

namespace detail {

class Tableau {
 public:
  using RowMatrix =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tableau(const StandardLp& lp, const LpOptions& opt)
      : d_(lp.A.rows()), p_(lp.A.cols()), opt_(opt) {
    sign_ = Eigen::VectorXd::Ones(d_);
    t_ = RowMatrix::Zero(d_ + 1, p_ + d_ + 1);
    for (Eigen::Index i = 0; i < d_; ++i) {
      if (lp.b[i] < 0) sign_[i] = -1.0;
      t_.row(i).head(p_) = sign_[i] * lp.A.row(i);
      t_(i, p_ + i) = 1.0;
      t_(i, rhs()) = sign_[i] * lp.b[i];
    }
    basis_.resize(d_);
    for (Eigen::Index i = 0; i < d_; ++i) basis_[i] = p_ + i;
  }

  // Pivots the given columns into the basis. Fails when the columns are
  // singular or the resulting basic solution is infeasible.
  bool install_basis(const std::vector<Eigen::Index>& cols, const StandardLp& lp) {
    if (static_cast<Eigen::Index>(cols.size()) != d_) return false;
    std::vector<char> used(static_cast<std::size_t>(d_), 0);
    for (Eigen::Index col : cols) {
      if (col < 0 || col >= p_) return false;
      Eigen::Index r = -1;
      double mag = 1e-9;
      for (Eigen::Index i = 0; i < d_; ++i)
        if (!used[static_cast<std::size_t>(i)] && std::abs(t_(i, col)) > mag) {
          mag = std::abs(t_(i, col));
          r = i;
        }
      if (r < 0) return false;
      pivot(r, col);
      used[static_cast<std::size_t>(r)] = 1;
    }
    const double scale = 1.0 + (d_ ? lp.b.cwiseAbs().maxCoeff() : 0.0);
    for (Eigen::Index i = 0; i < d_; ++i) {
      if (t_(i, rhs()) < -opt_.feas_tol * scale) return false;
      t_(i, rhs()) = std::max(0.0, t_(i, rhs()));
    }
    return true;
  }

  LpResult solve_from_basis(const StandardLp& lp) {
    LpResult result;
    return phase2(lp, result);
  }

  LpResult solve(const StandardLp& lp) {
    LpResult result;
    // Phase 1: minimize the sum of artificials.
    t_.row(d_).setZero();
    for (Eigen::Index i = 0; i < d_; ++i) {
      t_.row(d_).head(p_) -= t_.row(i).head(p_);
      t_(d_, rhs()) -= t_(i, rhs());
    }
    run(result, /*phase=*/1);
    const double scale = 1.0 + (d_ ? lp.b.cwiseAbs().maxCoeff() : 0.0);
    const double infeasibility = -t_(d_, rhs());
    if (infeasibility > opt_.residual_tol * scale) {
      // Phase-1 duals w satisfy w^T A_hat <= 0 and w^T b_hat > 0.
      Eigen::VectorXd w(d_);
      for (Eigen::Index i = 0; i < d_; ++i) w[i] = 1.0 - t_(d_, p_ + i);
      Eigen::VectorXd pi = -(sign_.array() * w.array()).matrix();
      const double norm = pi.cwiseAbs().maxCoeff();
      if (norm > 0) pi /= norm;
      result.status = LpStatus::Infeasible;
      result.certificate = pi;
      return result;
    }
    drive_out_artificials();
    return phase2(lp, result);
  }

 private:
  LpResult phase2(const StandardLp& lp, LpResult& result) {
    const double scale = 1.0 + (d_ ? lp.b.cwiseAbs().maxCoeff() : 0.0);
    const Eigen::VectorXd c =
        lp.c ? *lp.c : Eigen::VectorXd::Zero(p_);
    t_.row(d_).setZero();
    t_.row(d_).head(p_) = c.transpose();
    for (Eigen::Index i = 0; i < d_; ++i) {
      const double cb = basis_[i] < p_ ? c[basis_[i]] : 0.0;
      if (cb != 0.0) t_.row(d_) -= cb * t_.row(i);
    }
    const Eigen::Index unbounded_col = run(result, /*phase=*/2);
    if (unbounded_col >= 0) {
      result.status = LpStatus::Unbounded;
      result.ray = Eigen::VectorXd::Zero(p_);
      result.ray[unbounded_col] = 1.0;
      for (Eigen::Index i = 0; i < d_; ++i)
        if (basis_[i] < p_) result.ray[basis_[i]] = -t_(i, unbounded_col);
      return result;
    }
    result.status = LpStatus::Optimal;
    result.x = Eigen::VectorXd::Zero(p_);
    for (Eigen::Index i = 0; i < d_; ++i)
      if (basis_[i] < p_) result.x[basis_[i]] = std::max(0.0, t_(i, rhs()));
    result.y.resize(d_);
    for (Eigen::Index i = 0; i < d_; ++i)
      result.y[i] = -sign_[i] * t_(d_, p_ + i);
    result.objective = c.dot(result.x);

    const double residual =
        d_ ? (lp.A * result.x - lp.b).cwiseAbs().maxCoeff() : 0.0;
    if (residual > opt_.residual_tol * scale) {
      std::ostringstream msg;
      msg << "simplex residual " << residual << " exceeds tolerance; "
          << "basis condition estimate " << basis_condition(lp);
      throw NumericalFailure(msg.str());
    }
    result.basis = basis_;
    return result;
  }

  Eigen::Index rhs() const { return p_ + d_; }

  void pivot(Eigen::Index r, Eigen::Index s) {
    t_.row(r) /= t_(r, s);
    for (Eigen::Index i = 0; i <= d_; ++i) {
      if (i == r) continue;
      const double f = t_(i, s);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    basis_[r] = s;
  }

  // Returns the entering column of an unbounded direction, or -1.
  Eigen::Index run(LpResult& result, int phase) {
    const long limit = 200L * (d_ + p_) + 1000;
    bool bland = opt_.pricing == Pricing::Bland;
    int degenerate_run = 0;
    for (long iter = 0; iter < limit; ++iter) {
      Eigen::Index s = -1;
      if (bland) {
        for (Eigen::Index j = 0; j < p_; ++j)
          if (t_(d_, j) < -opt_.feas_tol) {
            s = j;
            break;
          }
      } else {
        double best = -opt_.feas_tol;
        for (Eigen::Index j = 0; j < p_; ++j)
          if (t_(d_, j) < best) {
            best = t_(d_, j);
            s = j;
          }
      }
      if (s < 0) return -1;

      Eigen::Index r = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < d_; ++i) {
        const double a = t_(i, s);
        if (a <= opt_.pivot_tol) continue;
        const double ratio = std::max(0.0, t_(i, rhs())) / a;
        // Ties go to the smallest basic variable index (Bland).
        if (r < 0 || ratio < best_ratio - 1e-12 ||
            (ratio <= best_ratio + 1e-12 && basis_[i] < basis_[r])) {
          best_ratio = std::min(best_ratio, ratio);
          r = i;
        }
      }
      if (r < 0) {
        if (phase == 1)
          throw NumericalFailure("phase 1 reported an unbounded direction");
        return s;
      }
      if (best_ratio <= 1e-12) {
        if (++degenerate_run >= opt_.degenerate_run_limit) bland = true;
      } else {
        degenerate_run = 0;
      }
      pivot(r, s);
      ++result.pivots;
    }
    throw NumericalFailure("simplex iteration limit reached (phase " +
                           std::to_string(phase) + ")");
  }

  void drive_out_artificials() {
    for (Eigen::Index i = 0; i < d_; ++i) {
      if (basis_[i] < p_) continue;
      Eigen::Index best = -1;
      double mag = opt_.pivot_tol;
      for (Eigen::Index j = 0; j < p_; ++j)
        if (std::abs(t_(i, j)) > mag) {
          mag = std::abs(t_(i, j));
          best = j;
        }
      // No candidate: the row is redundant and the artificial stays at 0.
      if (best >= 0) pivot(i, best);
    }
  }

  double basis_condition(const StandardLp& lp) const {
    Eigen::MatrixXd B(d_, d_);
    for (Eigen::Index i = 0; i < d_; ++i) {
      if (basis_[i] < p_)
        B.col(i) = lp.A.col(basis_[i]);
      else
        B.col(i) = Eigen::VectorXd::Unit(d_, basis_[i] - p_);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B);
    const auto& sv = svd.singularValues();
    return sv.size() ? sv[0] / std::max(sv[sv.size() - 1], 1e-300) : 1.0;
  }

  Eigen::Index d_, p_;
  LpOptions opt_;
  Eigen::VectorXd sign_;
  RowMatrix t_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace detail

// `warm` optionally names d columns to start phase 2 from; a singular or
// infeasible warm basis falls back to the two-phase method.
inline LpResult lp_solve(const StandardLp& lp, const LpOptions& opt = {},
                         const std::vector<Eigen::Index>* warm = nullptr) {
  if (lp.b.size() != lp.A.rows())
    throw InvalidArgument("lp_solve: b has " + std::to_string(lp.b.size()) +
                          " entries but A has " + std::to_string(lp.A.rows()) +
                          " rows");
  if (lp.c && lp.c->size() != lp.A.cols())
    throw InvalidArgument("lp_solve: c has " + std::to_string(lp.c->size()) +
                          " entries but A has " + std::to_string(lp.A.cols()) +
                          " columns");
  if (!lp.A.allFinite() || !lp.b.allFinite() || (lp.c && !lp.c->allFinite()))
    throw InvalidArgument("lp_solve: non-finite data");
  if (warm) {
    detail::Tableau tableau(lp, opt);
    if (tableau.install_basis(*warm, lp)) {
      try {
        return tableau.solve_from_basis(lp);
      } catch (const NumericalFailure&) {
        // fall through to a cold start
      }
    }
  }
  detail::Tableau tableau(lp, opt);
  return tableau.solve(lp);
}

// min f^T y subject to G y <= h with y free, solved through its dual
// standard form  min h^T x  s.t.  G^T x = -f, x >= 0.  The returned `x`
// field holds y.
struct InequalityLp {
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::VectorXd f;
};

inline LpResult solve_inequality_lp(const InequalityLp& lp,
                                    const LpOptions& opt = {},
                                    const std::vector<Eigen::Index>* warm = nullptr) {
  StandardLp dual{lp.G.transpose(), -lp.f, lp.h};
  LpResult d = lp_solve(dual, opt, warm);
  LpResult out;
  out.pivots = d.pivots;
  out.basis = d.basis;
  switch (d.status) {
    case LpStatus::Optimal:
      out.status = LpStatus::Optimal;
      out.x = d.y;
      out.y = d.x;
      out.objective = lp.f.dot(d.y);
      return out;
    case LpStatus::Unbounded:
      // Dual unbounded: the inequality system is empty.
      out.status = LpStatus::Infeasible;
      out.certificate = d.ray;
      return out;
    case LpStatus::Infeasible:
      out.status = LpStatus::Unbounded;
      return out;
  }
  return out;
}

}  // namespace feastest
