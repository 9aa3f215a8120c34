#pragma once

// Critical values for the moment-norm statistic, their deviation terms,
// separation bounds and the Gaussian-max expectation bracket.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "feastest/error.hpp"
#include "feastest/norms.hpp"
#include "feastest/parallel.hpp"
#include "feastest/rng.hpp"
#include "feastest/special.hpp"

namespace feastest {

struct NoiseModel {
  enum class Kind { Gaussian, LogConcave, Bounded };
  Kind kind = Kind::Gaussian;
  double sigma = 1.0;  // Gaussian
  double phi = 1.0;    // strongly log-concave parameter
  double a = 0.0, b = 1.0;  // bounded support

  static NoiseModel gaussian(double sigma) {
    NoiseModel m;
    m.kind = Kind::Gaussian;
    m.sigma = sigma;
    m.validate();
    return m;
  }
  static NoiseModel log_concave(double phi) {
    NoiseModel m;
    m.kind = Kind::LogConcave;
    m.phi = phi;
    m.validate();
    return m;
  }
  static NoiseModel bounded(double a, double b) {
    NoiseModel m;
    m.kind = Kind::Bounded;
    m.a = a;
    m.b = b;
    m.validate();
    return m;
  }

  void validate() const {
    switch (kind) {
      case Kind::Gaussian:
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
          throw InvalidArgument("gaussian noise needs sigma >= 0");
        break;
      case Kind::LogConcave:
        if (!(phi > 0.0) || !std::isfinite(phi))
          throw InvalidArgument("log-concave noise needs phi > 0");
        break;
      case Kind::Bounded:
        if (!(b > a) || !std::isfinite(a) || !std::isfinite(b))
          throw InvalidArgument("bounded noise needs a < b");
        break;
    }
  }

  // Multiplier s in the deviation term.
  double scale() const {
    switch (kind) {
      case Kind::Gaussian: return sigma;
      case Kind::LogConcave: return 1.0 / std::sqrt(phi);
      case Kind::Bounded: return b - a;
    }
    return sigma;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Gaussian: return "gaussian";
      case Kind::LogConcave: return "log_concave";
      case Kind::Bounded: return "bounded";
    }
    return "?";
  }
};

// Split of the overall level into the pieces spent on each term.
struct AlphaSplit {
  double a1 = 0.049;
  double a2 = 0.001;
  double a3 = 0.0;  // only used by the Rademacher route

  double total() const noexcept { return a1 + a2 + a3; }

  void validate(bool three_terms = false) const {
    if (!(a1 > 0.0) || !(a2 > 0.0))
      throw InvalidArgument("level split components must be positive");
    if (three_terms && !(a3 > 0.0))
      throw InvalidArgument("the Rademacher route needs a positive third level");
    if (!three_terms && a3 != 0.0)
      throw InvalidArgument("third level component only applies to the Rademacher route");
    if (!(total() < 1.0))
      throw InvalidArgument("level split must sum to a value in (0, 1)");
  }
};

enum class ThresholdMethod { Concentration, UnionBound, Min, Ideal, Rademacher };

inline const char* to_string(ThresholdMethod m) {
  switch (m) {
    case ThresholdMethod::Concentration: return "concentration";
    case ThresholdMethod::UnionBound: return "union";
    case ThresholdMethod::Min: return "min";
    case ThresholdMethod::Ideal: return "ideal";
    case ThresholdMethod::Rademacher: return "rademacher";
  }
  return "?";
}

inline ThresholdMethod parse_threshold_method(const std::string& s) {
  if (s == "concentration") return ThresholdMethod::Concentration;
  if (s == "union" || s == "union_bound") return ThresholdMethod::UnionBound;
  if (s == "min" || s == "min_of_both") return ThresholdMethod::Min;
  if (s == "ideal") return ThresholdMethod::Ideal;
  if (s == "rademacher") return ThresholdMethod::Rademacher;
  throw InvalidArgument("unknown threshold method '" + s + "'");
}

struct Threshold {
  double value = 0.0;
  ThresholdMethod method = ThresholdMethod::Concentration;
  // Monte-Carlo term as it enters the value (already doubled for the
  // Rademacher route), with its standard error.
  double mc_mean = 0.0;
  double mc_std_error = 0.0;
  // Deviation terms as they enter the value, already weighted.
  std::vector<std::pair<std::string, double>> tau_terms;
  long R = 0;
  std::uint64_t seed = 0;
  // Both candidates when method == Min.
  std::optional<double> concentration;
  std::optional<double> union_bound;

  // The documented combination of the parts.
  double recombine() const {
    if (method == ThresholdMethod::Min)
      return std::min(concentration.value(), union_bound.value());
    double v = mc_mean;
    for (const auto& [_, t] : tau_terms) v += t;
    return v;
  }
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// s * colnorm * sqrt((2/n) log(1/level)).
inline double tau(const NoiseModel& noise, double colnorm, long n, double level) {
  if (n < 1) throw InvalidArgument("tau needs n >= 1");
  if (!(colnorm >= 0.0)) throw InvalidArgument("tau needs colnorm >= 0");
  if (!(level > 0.0 && level <= 1.0))
    throw InvalidArgument("tau level must lie in (0, 1]");
  noise.validate();
  return noise.scale() * colnorm *
         std::sqrt(2.0 / static_cast<double>(n) * std::log(1.0 / level));
}

namespace detail {

inline McEstimate summarize(const std::vector<double>& draws, double scale) {
  const double R = static_cast<double>(draws.size());
  const double mean = pairwise_sum(draws) / R;
  std::vector<double> sq(draws.size());
  for (std::size_t r = 0; r < draws.size(); ++r)
    sq[r] = (draws[r] - mean) * (draws[r] - mean);
  const double var = draws.size() > 1 ? pairwise_sum(sq) / (R - 1.0) : 0.0;
  return {scale * mean, scale * std::sqrt(var / R)};
}

// Calls fill(r, column) to produce draw r as an n-vector, then evaluates
// norm((1/n) X^T column) for every draw. Draws are processed in blocks so
// the products run as matrix-matrix multiplies.
template <class Fill, class Norm>
std::vector<double> mc_norms(const Eigen::MatrixXd& X, long R, Fill fill,
                             Norm norm) {
  constexpr long kBlock = 256;
  const long n = X.rows();
  std::vector<double> out(static_cast<std::size_t>(R));
  const long blocks = (R + kBlock - 1) / kBlock;
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t blk) {
    const long start = static_cast<long>(blk) * kBlock;
    const long count = std::min(kBlock, R - start);
    Eigen::MatrixXd Z(n, count);
    for (long c = 0; c < count; ++c) fill(start + c, Z.col(c));
    const Eigen::MatrixXd P = (X.transpose() * Z) / static_cast<double>(n);
    for (long c = 0; c < count; ++c)
      out[static_cast<std::size_t>(start + c)] = norm(P.col(c));
  });
  return out;
}

}  // namespace detail

// Norms of (1/n) X^T Z_r for standard normal draws; draw r is a pure
// function of (seed, r).
inline std::vector<double> mc_gaussian_draws(const InstrumentMatrix& X,
                                             const Functional& zeta, long R,
                                             std::uint64_t seed) {
  if (R < 1) throw InvalidArgument("Monte-Carlo draw count R must be >= 1");
  const long n = X.n();
  return detail::mc_norms(
      X.values, R,
      [&](long r, auto col) {
        rng::Stream s(seed, rng::stream_id(rng::kGaussianMc,
                                           static_cast<std::uint64_t>(r)));
        for (long i = 0; i < n; ++i) col[i] = s.normal();
      },
      [&](const auto& v) { return zeta(Eigen::VectorXd(v)); });
}

inline McEstimate mc_gaussian_expectation(const InstrumentMatrix& X,
                                          NormOrder q, double sigma, long R,
                                          std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  const auto draws = mc_gaussian_draws(
      X, [q](const Eigen::VectorXd& v) { return lq_norm(v, q); }, R, seed);
  return detail::summarize(draws, sigma);
}

// Same estimate with a validated sublinear functional in place of the norm.
inline McEstimate mc_gaussian_expectation(const InstrumentMatrix& X,
                                          const Functional& zeta, double sigma,
                                          long R, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  return detail::summarize(mc_gaussian_draws(X, zeta, R, seed), sigma);
}

namespace detail {

inline Threshold assemble_concentration(const InstrumentMatrix& X, NormOrder q,
                                        const NoiseModel& noise, long R,
                                        const AlphaSplit& split,
                                        std::uint64_t seed, McEstimate mc) {
  const double colnorm = column_norm_functional(X, q);
  Threshold t;
  t.method = ThresholdMethod::Concentration;
  t.mc_mean = mc.mean;
  t.mc_std_error = mc.std_error;
  t.R = R;
  t.seed = seed;
  t.tau_terms = {
      {"tau_alpha1", tau(noise, colnorm, X.n(), split.a1)},
      {"tau_alpha2/sqrt(R)",
       tau(noise, colnorm, X.n(), split.a2) / std::sqrt(static_cast<double>(R))}};
  t.value = t.recombine();
  t.concentration = t.value;
  return t;
}

}  // namespace detail

// mc_mean + tau(a1) + tau(a2)/sqrt(R). The expectation is estimated from
// standard normal draws scaled by the noise scale; for non-Gaussian noise
// pass the expectation explicitly through the overload below.
inline Threshold concentration_threshold(const InstrumentMatrix& X, NormOrder q,
                                         const NoiseModel& noise, long R,
                                         const AlphaSplit& split,
                                         std::uint64_t seed) {
  split.validate();
  noise.validate();
  if (noise.kind != NoiseModel::Kind::Gaussian)
    throw InvalidArgument(
        "the Monte-Carlo expectation is only defined for gaussian noise; "
        "supply the expectation for " + noise.name() + " noise");
  const McEstimate mc = mc_gaussian_expectation(X, q, noise.sigma, R, seed);
  return detail::assemble_concentration(X, q, noise, R, split, seed, mc);
}

inline Threshold concentration_threshold(const InstrumentMatrix& X, NormOrder q,
                                         const NoiseModel& noise, long R,
                                         const AlphaSplit& split,
                                         std::uint64_t seed,
                                         McEstimate expectation) {
  split.validate();
  noise.validate();
  if (R < 1) throw InvalidArgument("Monte-Carlo draw count R must be >= 1");
  return detail::assemble_concentration(X, q, noise, R, split, seed,
                                        expectation);
}

// Threshold with a sublinear functional zeta dominated by the l_q norm; the
// deviation terms keep the l_q column norm.
inline Threshold concentration_threshold(const InstrumentMatrix& X,
                                         const Functional& zeta, NormOrder q,
                                         double sigma, long R,
                                         const AlphaSplit& split,
                                         std::uint64_t seed) {
  split.validate();
  const NoiseModel noise = NoiseModel::gaussian(sigma);
  const McEstimate mc = mc_gaussian_expectation(X, zeta, sigma, R, seed);
  return detail::assemble_concentration(X, q, noise, R, split, seed, mc);
}

// Known expectation plus one deviation term at the full level.
inline Threshold ideal_threshold(const InstrumentMatrix& X, NormOrder q,
                                 const NoiseModel& noise, double expectation,
                                 double alpha) {
  Threshold t;
  t.method = ThresholdMethod::Ideal;
  t.mc_mean = expectation;
  t.tau_terms = {{"tau_alpha",
                  tau(noise, column_norm_functional(X, q), X.n(), alpha)}};
  t.value = t.recombine();
  return t;
}

// sqrt(max_j (2 sigma^2/n) sum_i X_ij^2) * sqrt((1/n) log(2L/alpha)), q = inf.
inline Threshold union_bound_threshold(const InstrumentMatrix& X, double sigma,
                                       double alpha,
                                       NormOrder q = NormOrder::infinity()) {
  if (!q.is_inf())
    throw InvalidArgument("the union-bound threshold requires q = inf");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidArgument("alpha must lie in (0, 1)");
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  const double n = static_cast<double>(X.n());
  const double L = static_cast<double>(X.L());
  const double max_sq = X.values.colwise().squaredNorm().maxCoeff();
  Threshold t;
  t.method = ThresholdMethod::UnionBound;
  t.tau_terms = {{"union_bound", std::sqrt(2.0 * sigma * sigma / n * max_sq) *
                                     std::sqrt(std::log(2.0 * L / alpha) / n)}};
  t.value = t.recombine();
  t.union_bound = t.value;
  return t;
}

// The smaller of the concentration and union-bound thresholds (q = inf).
inline Threshold min_threshold(const InstrumentMatrix& X, double sigma, long R,
                               const AlphaSplit& split, std::uint64_t seed) {
  const Threshold c = concentration_threshold(
      X, NormOrder::infinity(), NoiseModel::gaussian(sigma), R, split, seed);
  const Threshold u = union_bound_threshold(X, sigma, split.total());
  Threshold t = c;
  t.method = ThresholdMethod::Min;
  t.concentration = c.value;
  t.union_bound = u.value;
  t.tau_terms.push_back(u.tau_terms.front());
  t.value = t.recombine();
  return t;
}

struct SeparationBound {
  double value = 0.0;  // concentration form
  std::optional<double> union_form;
  double beta1 = 0.0, beta2 = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

// 2E + tau(a1) + tau(a2)/sqrt(R) + tau(b1)/sqrt(R) + tau(b2); for q = inf
// and gaussian noise also the union form r_alpha + r_beta.
inline SeparationBound separation_delta(const InstrumentMatrix& X, NormOrder q,
                                        const NoiseModel& noise, long R,
                                        const AlphaSplit& alpha,
                                        const AlphaSplit& beta,
                                        double mc_mean_estimate) {
  alpha.validate();
  beta.validate();
  if (R < 1) throw InvalidArgument("Monte-Carlo draw count R must be >= 1");
  const double colnorm = column_norm_functional(X, q);
  const double root_r = std::sqrt(static_cast<double>(R));
  SeparationBound s;
  s.beta1 = beta.a1;
  s.beta2 = beta.a2;
  s.terms = {{"2E", 2.0 * mc_mean_estimate},
             {"tau_alpha1", tau(noise, colnorm, X.n(), alpha.a1)},
             {"tau_alpha2/sqrt(R)", tau(noise, colnorm, X.n(), alpha.a2) / root_r},
             {"tau_beta1/sqrt(R)", tau(noise, colnorm, X.n(), beta.a1) / root_r},
             {"tau_beta2", tau(noise, colnorm, X.n(), beta.a2)}};
  for (const auto& [_, v] : s.terms) s.value += v;
  if (q.is_inf() && noise.kind == NoiseModel::Kind::Gaussian)
    s.union_form = union_bound_threshold(X, noise.sigma, alpha.total()).value +
                   union_bound_threshold(X, noise.sigma, beta.total()).value;
  return s;
}

// Norms of (1/n) sum_i eps_ir Y_i X_i for Rademacher signs eps.
inline McEstimate mc_rademacher_expectation(const InstrumentMatrix& X,
                                            const Eigen::VectorXd& Y,
                                            NormOrder q, long R,
                                            std::uint64_t seed) {
  if (R < 1) throw InvalidArgument("Monte-Carlo draw count R must be >= 1");
  if (Y.size() != X.n())
    throw InvalidArgument("response length does not match instrument rows");
  const long n = X.n();
  const auto draws = detail::mc_norms(
      X.values, R,
      [&](long r, auto col) {
        rng::Stream s(seed, rng::stream_id(rng::kRademacherMc,
                                           static_cast<std::uint64_t>(r)));
        for (long i = 0; i < n; ++i) col[i] = s.rademacher() * Y[i];
      },
      [&](const auto& v) { return lq_norm(v, q); });
  return detail::summarize(draws, 1.0);
}

// 2 * mean + tau(a1) + 2 tau(a2) + (4/sqrt(R)) tau(a3), with unit scale.
inline Threshold rademacher_threshold(const InstrumentMatrix& X,
                                      const Eigen::VectorXd& Y, NormOrder q,
                                      long R, const AlphaSplit& split,
                                      std::uint64_t seed) {
  split.validate(/*three_terms=*/true);
  for (Eigen::Index i = 0; i < Y.size(); ++i)
    if (!(Y[i] >= 0.0 && Y[i] <= 1.0))
      throw DomainError("responses must lie in [0, 1]; row " +
                        std::to_string(i + 1) + " is " + std::to_string(Y[i]));
  const McEstimate mc = mc_rademacher_expectation(X, Y, q, R, seed);
  const NoiseModel unit = NoiseModel::bounded(0.0, 1.0);
  const double colnorm = column_norm_functional(X, q);
  Threshold t;
  t.method = ThresholdMethod::Rademacher;
  t.mc_mean = 2.0 * mc.mean;
  t.mc_std_error = 2.0 * mc.std_error;
  t.R = R;
  t.seed = seed;
  t.tau_terms = {
      {"tau_alpha1", tau(unit, colnorm, X.n(), split.a1)},
      {"2*tau_alpha2", 2.0 * tau(unit, colnorm, X.n(), split.a2)},
      {"4*tau_alpha3/sqrt(R)", 4.0 * tau(unit, colnorm, X.n(), split.a3) /
                                   std::sqrt(static_cast<double>(R))}};
  t.value = t.recombine();
  return t;
}

// sqrt(2/n) Gamma(n/2) / Gamma((n-1)/2), via log-gamma.
inline double c_n(long n) {
  if (n < 2) throw InvalidArgument("C_n needs n >= 2");
  const double nd = static_cast<double>(n);
  return std::sqrt(2.0 / nd) *
         std::exp(std::lgamma(nd / 2.0) - std::lgamma((nd - 1.0) / 2.0));
}

struct SigmaBound {
  double bound = 0.0;       // sigma_hat / (C_n - Phi^-1(kappa/2)/sqrt(n))
  double c_n = 0.0;
  double sigma_hat = 0.0;   // sqrt((1/n) sum (Y_i - mean)^2)
  double kappa = 0.0;
  bool below_sigma_hat = false;  // the bound is smaller than sigma_hat
};

inline SigmaBound sigma_upper_bound(const Eigen::VectorXd& Y, double kappa) {
  const long n = Y.size();
  if (n < 2) throw InvalidArgument("sigma bound needs at least 2 responses");
  if (!(kappa > 0.0 && kappa < 1.0))
    throw InvalidArgument("kappa must lie in (0, 1)");
  SigmaBound s;
  s.kappa = kappa;
  s.c_n = c_n(n);
  const double mean = Y.mean();
  s.sigma_hat = std::sqrt((Y.array() - mean).square().sum() /
                          static_cast<double>(n));
  const double denom =
      s.c_n - normal_quantile(kappa / 2.0) / std::sqrt(static_cast<double>(n));
  s.bound = s.sigma_hat / denom;
  s.below_sigma_hat = s.bound < s.sigma_hat;
  return s;
}

// 1/2 (1 - 1/e) sqrt((log L)/(4 n^2) min_{j != l} sum_i (X_ij - X_il)^2),
// for unit noise scale and L >= 20.
inline double gaussian_max_lower(const InstrumentMatrix& X) {
  const long L = X.L();
  if (L < 20) throw InvalidArgument("the lower expectation bound needs L >= 20");
  const double n = static_cast<double>(X.n());
  double min_dist = std::numeric_limits<double>::infinity();
  for (long j = 0; j < L; ++j)
    for (long l = j + 1; l < L; ++l)
      min_dist = std::min(min_dist,
                          (X.values.col(j) - X.values.col(l)).squaredNorm());
  return 0.5 * (1.0 - std::exp(-1.0)) *
         std::sqrt(std::log(static_cast<double>(L)) / (4.0 * n * n) * min_dist);
}

// sqrt((2 log L / n^2) max_j sum X^2) + sqrt((8/(n^2 log L)) max_j sum X^2).
inline double gaussian_max_upper(const InstrumentMatrix& X) {
  const long L = X.L();
  if (L < 2) throw InvalidArgument("the upper expectation bound needs L >= 2");
  const double n = static_cast<double>(X.n());
  const double logl = std::log(static_cast<double>(L));
  const double max_sq = X.values.colwise().squaredNorm().maxCoeff();
  return std::sqrt(2.0 * logl / (n * n) * max_sq) +
         std::sqrt(8.0 / (n * n * logl) * max_sq);
}

struct GaussianMaxBounds {
  std::optional<double> lower;  // only for L >= 20
  double upper = 0.0;
};

inline GaussianMaxBounds gaussian_max_bounds(const InstrumentMatrix& X) {
  GaussianMaxBounds b;
  b.upper = gaussian_max_upper(X);
  if (X.L() >= 20) b.lower = gaussian_max_lower(X);
  return b;
}

}  // namespace feastest
