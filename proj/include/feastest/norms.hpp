#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "feastest/error.hpp"

namespace feastest {

// Order q of an l_q norm, q in [1, inf].
class NormOrder {
 public:
  constexpr NormOrder() = default;
  explicit NormOrder(double q) : q_(q) {
    if (!(q >= 1.0)) throw InvalidArgument("norm order must satisfy q >= 1");
  }
  static NormOrder infinity() {
    return NormOrder(std::numeric_limits<double>::infinity());
  }
  // Accepts "inf", "infinity" or a number >= 1.
  static NormOrder parse(const std::string& text) {
    if (text == "inf" || text == "infinity" || text == "Inf")
      return infinity();
    std::size_t used = 0;
    double q = 0.0;
    try {
      q = std::stod(text, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("bad norm order '" + text + "'");
    }
    if (used != text.size()) throw InvalidArgument("bad norm order '" + text + "'");
    return NormOrder(q);
  }

  double value() const noexcept { return q_; }
  bool is_inf() const noexcept { return std::isinf(q_); }
  bool is_one() const noexcept { return q_ == 1.0; }
  std::string str() const {
    if (is_inf()) return "inf";
    std::string s = std::to_string(q_);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
  bool operator==(const NormOrder&) const = default;

 private:
  double q_ = std::numeric_limits<double>::infinity();
};

inline double lq_norm(const Eigen::Ref<const Eigen::VectorXd>& v, NormOrder q) {
  if (v.size() == 0) return 0.0;
  if (q.is_inf()) return v.cwiseAbs().maxCoeff();
  if (q.is_one()) return v.cwiseAbs().sum();
  if (q.value() == 2.0) return v.norm();
  const double scale = v.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    s += std::pow(std::abs(v[i]) / scale, q.value());
  return scale * std::pow(s, 1.0 / q.value());
}

// The n x L matrix of instruments X_i = f(V_i).
struct InstrumentMatrix {
  Eigen::MatrixXd values;
  bool normalized = false;
  // Column j was divided by scale[j] during normalization (1 otherwise).
  Eigen::VectorXd scale;
  std::vector<std::string> names;

  InstrumentMatrix() = default;
  explicit InstrumentMatrix(Eigen::MatrixXd x,
                            std::vector<std::string> column_names = {})
      : values(std::move(x)),
        scale(Eigen::VectorXd::Ones(values.cols())),
        names(std::move(column_names)) {
    if (values.rows() < 1 || values.cols() < 1)
      throw InvalidArgument("instrument matrix needs n >= 1 and L >= 1");
    if (!values.allFinite())
      throw InvalidArgument("instrument matrix has non-finite entries");
  }

  Eigen::Index n() const noexcept { return values.rows(); }
  Eigen::Index L() const noexcept { return values.cols(); }

  std::string column_name(Eigen::Index j) const {
    if (static_cast<std::size_t>(j) < names.size()) return names[j];
    return "column " + std::to_string(j + 1);
  }
};

// Root mean squares of each column, sqrt((1/n) sum_i X_ij^2).
inline Eigen::VectorXd column_rms(const InstrumentMatrix& x) {
  return (x.values.colwise().squaredNorm() / static_cast<double>(x.n()))
      .cwiseSqrt()
      .transpose();
}

// || sqrt((1/n) sum_i X_i^2) ||_q, the scale of every deviation term.
inline double column_norm_functional(const InstrumentMatrix& x, NormOrder q) {
  return lq_norm(column_rms(x), q);
}

inline InstrumentMatrix normalize_columns(const InstrumentMatrix& x) {
  InstrumentMatrix out = x;
  const Eigen::VectorXd rms = column_rms(x);
  for (Eigen::Index j = 0; j < x.L(); ++j) {
    if (rms[j] == 0.0)
      throw InvalidArgument("cannot normalize all-zero " + x.column_name(j));
    out.values.col(j) /= rms[j];
    out.scale[j] = x.scale[j] * rms[j];
  }
  out.normalized = true;
  return out;
}

struct SublinearReport {
  std::size_t homogeneity_violations = 0;
  std::size_t subadditivity_violations = 0;
  std::size_t domination_violations = 0;
  std::vector<std::string> messages;  // first few violations, for display

  std::size_t total() const noexcept {
    return homogeneity_violations + subadditivity_violations +
           domination_violations;
  }
};

using Functional = std::function<double(const Eigen::VectorXd&)>;

// Empirically checks that zeta is positively homogeneous, subadditive and
// bounded by the l_q norm on the given samples (all pairs for
// subadditivity). Violations are reported, never thrown.
inline SublinearReport validate_sublinear_functional(
    const Functional& zeta, NormOrder q,
    const std::vector<Eigen::VectorXd>& samples, double tol = 1e-9) {
  if (samples.empty()) throw InvalidArgument("no samples to validate against");
  SublinearReport report;
  auto note = [&](const std::string& msg) {
    if (report.messages.size() < 10) report.messages.push_back(msg);
  };
  static constexpr double kScales[] = {0.0, 0.5, 2.0, 3.7};
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Eigen::VectorXd& z = samples[s];
    const double fz = zeta(z);
    for (double a : kScales) {
      const double lhs = zeta(a * z);
      if (std::abs(lhs - a * fz) > tol * (1.0 + std::abs(a * fz))) {
        ++report.homogeneity_violations;
        note("homogeneity fails for sample " + std::to_string(s) +
             " at scale " + std::to_string(a));
      }
    }
    if (std::abs(fz) > lq_norm(z, q) + tol * (1.0 + std::abs(fz))) {
      ++report.domination_violations;
      note("|zeta(z)| exceeds ||z||_q for sample " + std::to_string(s));
    }
    for (std::size_t t = 0; t < samples.size(); ++t) {
      const double sum = zeta(z + samples[t]);
      const double bound = fz + zeta(samples[t]);
      if (sum > bound + tol * (1.0 + std::abs(bound))) {
        ++report.subadditivity_violations;
        note("subadditivity fails for samples " + std::to_string(s) + ", " +
             std::to_string(t));
      }
    }
  }
  return report;
}

}  // namespace feastest
