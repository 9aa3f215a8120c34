#pragma once

// JSON run configurations (strict: unknown keys are errors) and the JSON
// form of every report. Each reader returns the effective configuration
// with all defaults filled in, which is echoed into the output.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "feastest/farkas.hpp"
#include "feastest/inference.hpp"
#include "feastest/io.hpp"
#include "feastest/sim.hpp"

namespace feastest::config {

using Json = nlohmann::ordered_json;

// Non-finite numbers are written as the strings "inf", "-inf" and "nan".
inline Json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline Json numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

inline Json numbers(const Eigen::VectorXd& v) {
  return numbers(std::vector<double>(v.data(), v.data() + v.size()));
}

// Strict object reader. Every key must be consumed before finish().
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(where() + " must be an object");
  }

  // Marks key as known, so a null value is accepted as "use the default".
  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw SchemaError("missing required key " + child(key));
    return j_.at(key);
  }

  Reader object(const std::string& key) { return Reader(raw(key), child(key)); }

  std::string child(const std::string& key) const {
    return path_.empty() ? "'" + key + "'" : "'" + path_ + "." + key + "'";
  }

  double real(const std::string& key) { return as_real(raw(key), child(key)); }
  double real(const std::string& key, double def) {
    seen_.insert(key);
    return has(key) ? as_real(j_.at(key), child(key)) : def;
  }
  long integer(const std::string& key) { return as_integer(raw(key), child(key)); }
  long integer(const std::string& key, long def) {
    seen_.insert(key);
    return has(key) ? as_integer(j_.at(key), child(key)) : def;
  }
  std::uint64_t seed(const std::string& key, std::uint64_t def) {
    seen_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw SchemaError(child(key) + " must be a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool def) {
    seen_.insert(key);
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw SchemaError(child(key) + " must be true or false");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key) { return as_string(raw(key), child(key)); }
  std::string string(const std::string& key, const std::string& def) {
    seen_.insert(key);
    return has(key) ? as_string(j_.at(key), child(key)) : def;
  }
  // A number >= 1 or the string "inf"; "2" is accepted too.
  NormOrder norm_order(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return NormOrder::infinity();
    const Json& v = j_.at(key);
    if (v.is_number()) return NormOrder(v.get<double>());
    return NormOrder::parse(as_string(v, child(key)));
  }
  std::vector<std::string> strings(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_array()) throw SchemaError(child(key) + " must be an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(as_string(v[i], child(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  // Present keys that nobody read are errors; null counts as absent only
  // for keys the reader knows.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()) && !known_.count(it.key()))
        throw SchemaError("unknown key " + child(it.key()));
  }

  static double as_real(const Json& v, const std::string& where) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw SchemaError(where + " must be a number (or \"inf\" / \"-inf\")");
  }
  static long as_integer(const Json& v, const std::string& where) {
    if (!v.is_number_integer()) throw SchemaError(where + " must be an integer");
    return v.get<long>();
  }
  static std::string as_string(const Json& v, const std::string& where) {
    if (!v.is_string()) throw SchemaError(where + " must be a string");
    return v.get<std::string>();
  }

 private:
  std::string where() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_, known_;
};

inline Json split_json(const AlphaSplit& s, bool three) {
  Json j{{"a1", s.a1}, {"a2", s.a2}};
  if (three) j["a3"] = s.a3;
  return j;
}

inline AlphaSplit read_split(Reader& parent, const std::string& key, AlphaSplit def,
                             bool three) {
  if (!parent.has(key)) return def;
  Reader r = parent.object(key);
  AlphaSplit s;
  s.a1 = r.real("a1");
  s.a2 = r.real("a2");
  if (three) s.a3 = r.real("a3");
  r.finish();
  s.validate(three);
  return s;
}

inline Json solver_json(const SolverOptions& o) {
  return Json{{"backend", to_string(o.backend)},
              {"starts", o.starts},
              {"box", Json::array({number(o.box_lower), number(o.box_upper)})},
              {"start_radius", o.start_radius},
              {"seed", o.seed},
              {"hints", o.hints},
              {"max_iterations", o.max_iterations},
              {"lp_feasibility_tol", o.lp_feasibility_tol},
              {"penalty_feasibility_tol", o.penalty_feasibility_tol}};
}

inline SolverOptions read_solver(Reader& parent, std::uint64_t default_seed) {
  SolverOptions o;
  o.seed = default_seed;
  if (!parent.has("solver")) return o;
  Reader r = parent.object("solver");
  o.backend = parse_backend(r.string("backend", "auto"));
  o.starts = static_cast<int>(r.integer("starts", o.starts));
  if (o.starts < 1) throw InvalidArgument("solver.starts must be at least 1");
  if (r.has("box")) {
    const Json& b = r.raw("box");
    if (!b.is_array() || b.size() != 2) throw SchemaError("'solver.box' must be [lower, upper]");
    o.box_lower = Reader::as_real(b[0], "'solver.box[0]'");
    o.box_upper = Reader::as_real(b[1], "'solver.box[1]'");
    if (!(o.box_lower < o.box_upper)) throw InvalidArgument("solver.box needs lower < upper");
  }
  o.start_radius = r.real("start_radius", o.start_radius);
  o.seed = r.seed("seed", default_seed);
  if (r.has("hints")) {
    const Json& h = r.raw("hints");
    if (!h.is_array()) throw SchemaError("'solver.hints' must be an array of points");
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (!h[i].is_array()) throw SchemaError("'solver.hints' entries must be arrays");
      std::vector<double> pt;
      for (const auto& x : h[i]) pt.push_back(Reader::as_real(x, "'solver.hints'"));
      o.hints.push_back(std::move(pt));
    }
  }
  o.max_iterations = static_cast<int>(r.integer("max_iterations", o.max_iterations));
  o.lp_feasibility_tol = r.real("lp_feasibility_tol", o.lp_feasibility_tol);
  o.penalty_feasibility_tol = r.real("penalty_feasibility_tol", o.penalty_feasibility_tol);
  r.finish();
  return o;
}

inline ThresholdMethod parse_method(const std::string& s) {
  if (s == "concentration") return ThresholdMethod::Concentration;
  if (s == "union") return ThresholdMethod::UnionBound;
  if (s == "min") return ThresholdMethod::Min;
  if (s == "ideal") return ThresholdMethod::Ideal;
  throw InvalidArgument("unknown threshold method '" + s +
                        "' (expected concentration, union, min or ideal)");
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

// Configuration shared by test, ci, bounded-test and threshold.
struct TestConfig {
  Json effective;
  TestInput input;
  std::optional<AlphaSplit> beta;        // threshold command: separation
  std::string data_path;                 // as resolved
  bool has_model = true;
};

enum class TestKind { Test, Bounded, ThresholdOnly };

inline TestConfig read_test_config(const Json& raw, const std::filesystem::path& base,
                                   TestKind kind) {
  Reader r(raw, "");
  TestConfig cfg;
  Json& e = cfg.effective;
  TestInput& in = cfg.input;

  const std::string data = r.string("data");
  cfg.data_path = resolve(base, data).string();
  const std::vector<std::string> covs = r.strings("covariates");
  e["data"] = data;
  e["covariates"] = covs;
  const io::Table table = io::read_csv(cfg.data_path);
  in.V = table.columns(covs);

  std::vector<std::string> params;
  if (kind != TestKind::ThresholdOnly) {
    const std::string response = r.string("response");
    params = r.strings("parameters");
    const std::string model = r.string("model");
    e["response"] = response;
    e["parameters"] = params;
    e["model"] = model;
    in.Y = table.column(response);
    in.model = expr::parse_expression(model, params, covs);
    const Json& hyp = r.raw("hypothesis");
    if (!hyp.is_array() || hyp.empty())
      throw SchemaError("'hypothesis' must be a non-empty array of constraints");
    Json hj = Json::array();
    for (std::size_t k = 0; k < hyp.size(); ++k) {
      Reader c(hyp[k], "hypothesis[" + std::to_string(k) + "]");
      const std::string h = c.string("h");
      const double lo = c.real("lower", -std::numeric_limits<double>::infinity());
      const double hi = c.real("upper", std::numeric_limits<double>::infinity());
      c.finish();
      in.hypothesis.constraints.push_back({expr::parse_expression(h, params, covs), lo, hi});
      hj.push_back(Json{{"h", h}, {"lower", number(lo)}, {"upper", number(hi)}});
    }
    e["hypothesis"] = hj;
  } else {
    cfg.has_model = false;
    if (r.has("response")) {
      const std::string response = r.string("response");
      e["response"] = response;
      in.Y = table.column(response);
    }
  }

  std::vector<std::string> inst = covs;
  if (r.has("instruments")) inst = r.strings("instruments");
  e["instruments"] = inst;
  std::vector<expr::ExprAst> f;
  for (const auto& s : inst) f.push_back(expr::parse_expression(s, {}, covs));
  in.X = build_instruments(f, in.V, inst);
  in.normalize = r.boolean("normalize", true);
  e["normalize"] = in.normalize;

  in.q = r.norm_order("q");
  e["q"] = in.q.str();

  // noise
  Json nj;
  if (kind == TestKind::Bounded) {
    if (r.has("noise")) throw SchemaError("'noise' does not apply to bounded-test");
  } else if (!r.has("noise")) {
    in.noise = NoiseModel::gaussian(1.0);
    nj = Json{{"kind", "gaussian"}, {"sigma", 1.0}};
  } else {
    Reader n = r.object("noise");
    const std::string k = n.string("kind");
    if (k == "gaussian") {
      in.noise = NoiseModel::gaussian(n.real("sigma"));
      nj = Json{{"kind", k}, {"sigma", in.noise->sigma}};
    } else if (k == "unknown") {
      if (kind == TestKind::ThresholdOnly && in.Y.size() == 0)
        throw SchemaError("noise kind 'unknown' needs 'response' to bound sigma");
      in.noise.reset();
      in.kappa = n.real("kappa", 0.01);
      nj = Json{{"kind", k}, {"kappa", in.kappa}};
    } else if (k == "log_concave") {
      in.noise = NoiseModel::log_concave(n.real("phi"));
      nj = Json{{"kind", k}, {"phi", in.noise->phi}};
    } else if (k == "bounded") {
      const double a = n.real("a"), b = n.real("b");
      in.noise = NoiseModel::bounded(a, b);
      nj = Json{{"kind", k}, {"a", a}, {"b", b}};
    } else {
      throw InvalidArgument("unknown noise kind '" + k +
                            "' (expected gaussian, unknown, log_concave or bounded)");
    }
    if (n.has("expectation")) {
      in.expectation = McEstimate{n.real("expectation"), 0.0};
      nj["expectation"] = in.expectation->mean;
    }
    n.finish();
  }
  if (!nj.is_null()) e["noise"] = nj;

  const bool three = kind == TestKind::Bounded;
  in.split = read_split(r, "alpha", three ? AlphaSplit{0.03, 0.01, 0.01} : AlphaSplit{}, three);
  e["alpha"] = split_json(in.split, three);
  if (kind == TestKind::ThresholdOnly && r.has("beta")) {
    cfg.beta = read_split(r, "beta", AlphaSplit{0.001, 0.049}, false);
    e["beta"] = split_json(*cfg.beta, false);
  }
  in.R = r.integer("R", 10000);
  if (in.R < 1) throw InvalidArgument("R must be at least 1");
  e["R"] = in.R;
  in.seed = r.seed("seed", 0);
  e["seed"] = in.seed;
  if (kind == TestKind::Bounded) {
    if (r.has("method")) throw SchemaError("'method' does not apply to bounded-test");
    e["method"] = "rademacher";
  } else {
    const std::string def = in.q.is_inf() ? "min" : "concentration";
    in.method = parse_method(r.string("method", def));
    e["method"] = to_string(in.method);
  }
  if (kind != TestKind::ThresholdOnly) {
    in.solver = read_solver(r, rng::stream_id(rng::kMultistart, in.seed));
    e["solver"] = solver_json(in.solver);
  } else {
    // A full test configuration is accepted; its model parts are not used.
    for (const char* key : {"parameters", "model", "hypothesis", "solver"})
      if (r.has(key)) r.raw(key);
  }
  r.finish();
  return cfg;
}

inline sim::StudyConfig read_study_config(const Json& raw, Json& effective) {
  Reader r(raw, "");
  sim::StudyConfig c;
  c.name = r.string("name", c.name);
  c.n = r.integer("n", c.n);
  c.k = static_cast<int>(r.integer("k", c.k));
  c.alpha_star = r.real("alpha_star", c.alpha_star);
  c.tau_star = r.real("tau_star", c.tau_star);
  c.gamma_star = r.real("gamma_star", c.gamma_star);
  c.sigma = r.real("sigma", c.sigma);
  if (r.has("constrained")) {
    const Json& m = r.raw("constrained");
    if (!m.is_array()) throw SchemaError("'constrained' must be an array of 1-based indices");
    for (const auto& x : m) c.constrained.push_back(static_cast<int>(Reader::as_integer(x, "'constrained'")));
  }
  c.lower = r.real("lower", c.lower);
  c.upper = r.real("upper", c.upper);
  c.max_power = static_cast<int>(r.integer("max_power", c.max_power));
  c.reps = static_cast<int>(r.integer("reps", c.reps));
  c.R = r.integer("R", c.R);
  c.alpha = read_split(r, "alpha", c.alpha, false);
  c.beta = read_split(r, "beta", c.beta, false);
  c.rho = r.real("rho", c.rho);
  c.normalization = sim::parse_normalization(r.string("normalization", to_string(c.normalization)));
  c.design_seed = r.seed("design_seed", c.design_seed);
  c.seed = r.seed("seed", c.seed);
  c.solver = read_solver(r, c.solver.seed);
  r.finish();
  c.validate();

  effective = Json{{"name", c.name},
                   {"n", c.n},
                   {"k", c.k},
                   {"alpha_star", c.alpha_star},
                   {"tau_star", c.tau_star},
                   {"gamma_star", c.gamma_star},
                   {"sigma", c.sigma},
                   {"constrained", c.constrained_set()},
                   {"lower", number(c.lower)},
                   {"upper", number(c.upper)},
                   {"max_power", c.max_power},
                   {"reps", c.reps},
                   {"R", c.R},
                   {"alpha", split_json(c.alpha, false)},
                   {"beta", split_json(c.beta, false)},
                   {"rho", c.rho},
                   {"normalization", to_string(c.normalization)},
                   {"design_seed", c.design_seed},
                   {"seed", c.seed},
                   {"solver", solver_json(c.solver)}};
  return c;
}

// ---- reports ----

inline Json threshold_json(const Threshold& t) {
  Json terms = Json::object();
  for (const auto& [name, v] : t.tau_terms) terms[name] = number(v);
  Json j{{"value", number(t.value)},
         {"method", to_string(t.method)},
         {"mc_mean", number(t.mc_mean)},
         {"mc_std_error", number(t.mc_std_error)},
         {"tau_terms", terms},
         {"R", t.R},
         {"seed", t.seed}};
  if (t.concentration) j["concentration"] = number(*t.concentration);
  if (t.union_bound) j["union_bound"] = number(*t.union_bound);
  return j;
}

inline Json solution_json(const SlackSolution& s) {
  return Json{{"theta", numbers(s.theta)},
              {"psi", number(s.psi)},
              {"mu", number(s.mu)},
              {"backend", to_string(s.backend)},
              {"dispersion", number(s.dispersion)},
              {"starts_run", s.starts_run},
              {"starts_converged", s.starts_converged},
              {"max_violation", number(s.max_violation)},
              {"residuals", numbers(s.residuals)}};
}

inline Json diagnostics_json(const PowerDiagnostics& d) {
  return Json{{"p", d.p}, {"n", d.n}, {"m", d.m}, {"L", d.L}, {"q", d.q.str()},
              {"warnings", d.warnings}};
}

inline Json region_json(const ConfidenceRegion& c) {
  return Json{{"lower", number(c.lower)},
              {"upper", number(c.upper)},
              {"length", number(c.length)},
              {"level", number(c.level)}};
}

inline Json noise_json(const NoiseModel& n) {
  switch (n.kind) {
    case NoiseModel::Kind::Gaussian: return Json{{"kind", "gaussian"}, {"sigma", number(n.sigma)}};
    case NoiseModel::Kind::LogConcave: return Json{{"kind", "log_concave"}, {"phi", number(n.phi)}};
    case NoiseModel::Kind::Bounded:
      return Json{{"kind", "bounded"}, {"a", number(n.a)}, {"b", number(n.b)}};
  }
  return nullptr;
}

inline Json instruments_json(const InstrumentMatrix& X) {
  Json cols = Json::array();
  for (Eigen::Index j = 0; j < X.L(); ++j) cols.push_back(X.column_name(j));
  return Json{{"n", X.n()}, {"L", X.L()}, {"normalized", X.normalized},
              {"columns", cols}, {"scale", numbers(X.scale)}};
}

inline Json report_json(const TestReport& r) {
  Json j{{"decision", to_string(r.verdict)},
         {"reject", r.reject},
         {"psi", number(r.psi)},
         {"r", number(r.threshold.value)},
         {"mu", number(r.mu)},
         {"alpha", number(r.alpha)},
         {"split", split_json(r.split, r.split.a3 > 0.0)},
         {"q", r.q.str()},
         {"noise", noise_json(r.noise)}};
  if (r.verdict != Verdict::EmptyHypothesis) {
    j["confidence_region"] = region_json(confidence_region(r));
    j["theta"] = numbers(r.theta);
    j["solution"] = solution_json(r.solution);
  } else {
    j["message"] = r.message;
  }
  j["threshold"] = threshold_json(r.threshold);
  if (r.sigma_bound) {
    const auto& s = *r.sigma_bound;
    j["sigma_bound"] = Json{{"bound", number(s.bound)},
                            {"c_n", number(s.c_n)},
                            {"sigma_hat", number(s.sigma_hat)},
                            {"kappa", number(s.kappa)},
                            {"below_sigma_hat", s.below_sigma_hat},
                            {"note", "overall level is alpha + kappa"}};
  }
  j["diagnostics"] = diagnostics_json(r.diagnostics);
  j["instruments"] = instruments_json(r.X);
  return j;
}

inline Json verdict_json(const FeasibilityVerdict& v) {
  Json j{{"decision", decision_name(v)},
         {"reject", v.reject},
         {"exact_rows_empty", v.exact_rows_empty},
         {"psi", number(v.psi)},
         {"r", number(v.r)},
         {"alpha", number(v.alpha)},
         {"confidence", number(v.confidence)}};
  if (v.pi) j["pi"] = numbers(*v.pi);
  if (!v.exact_rows_empty) {
    j["theta"] = numbers(v.theta);
    j["threshold"] = threshold_json(v.threshold);
    j["solution"] = solution_json(v.solution);
  }
  j["warnings"] = v.warnings;
  return j;
}

inline Json farkas_json(const FarkasResult& f) {
  Json j{{"feasible", f.feasible}};
  if (f.feasible) j["theta"] = numbers(f.theta);
  else j["pi"] = numbers(f.pi);
  return j;
}

inline Json study_json(const sim::StudyResult& s, bool records) {
  Json j{{"name", s.name},
         {"n", s.n},
         {"k", s.k},
         {"p", s.p},
         {"L", s.L},
         {"ape", numbers(s.ape)},
         {"null_true", s.null_true},
         {"mean_separation", number(s.mean_separation)},
         {"mean_two_r", number(s.mean_two_r)},
         {"coverage", number(s.coverage)},
         {"rejection", number(s.rejection)},
         {"completed", s.completed},
         {"failures", s.failures}};
  if (records) {
    Json a = Json::array();
    for (const auto& r : s.records) {
      Json x{{"rep", r.rep}, {"failed", r.failed}};
      if (r.failed) {
        x["error"] = r.error;
      } else {
        x["psi"] = number(r.psi);
        x["r"] = number(r.r);
        x["mu"] = number(r.mu);
        x["separation"] = number(r.separation);
        x["covered"] = r.covered;
        x["reject"] = r.reject;
        x["dispersion"] = number(r.dispersion);
        x["theta"] = numbers(r.theta);
      }
      a.push_back(x);
    }
    j["records"] = a;
  }
  return j;
}

// One row per study in the column layout of the published tables.
inline std::string study_table_csv(const std::vector<sim::StudyResult>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : rows) {
    std::string ape;
    for (std::size_t i = 0; i < s.ape.size(); ++i) ape += (i ? ";" : "") + io::format_double(s.ape[i]);
    out.push_back({s.name, std::to_string(s.n), std::to_string(s.p), std::to_string(s.L), ape,
                   io::format_double(s.mean_separation), io::format_double(s.mean_two_r),
                   io::format_double(s.coverage), io::format_double(s.rejection),
                   std::to_string(s.completed), std::to_string(s.failures)});
  }
  return io::to_csv({"name", "n", "p", "L", "i_ape", "ii_separation", "iii_two_r",
                     "iv_coverage", "v_rejection", "completed", "failures"},
                    out);
}

inline Json provenance(const std::string& command, const Json& effective, Json seeds,
                       Json inputs) {
  return Json{{"tool", "feastest"},
              {"version", FEASTEST_VERSION},
              {"command", command},
              {"config_hash", "fnv1a64:" + io::hex64(io::fnv1a(effective.dump()))},
              {"seeds", std::move(seeds)},
              {"inputs", std::move(inputs)}};
}

}  // namespace feastest::config
