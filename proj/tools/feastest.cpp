// Command-line front end: test, ci, bounded-test, farkas, simulate,
// diagnose and threshold.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "feastest/config.hpp"
#include "feastest/farkas.hpp"
#include "feastest/inference.hpp"
#include "feastest/io.hpp"
#include "feastest/parallel.hpp"
#include "feastest/sim.hpp"

namespace {

using namespace feastest;
using config::Json;
using config::number;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kSchema = 4, kParse = 5, kCompute = 6 };

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  completed (whatever the decision)\n"
    "  2  usage error\n"
    "  3  file could not be read or written\n"
    "  4  invalid configuration (unknown key, wrong type, bad value)\n"
    "  5  malformed input (JSON, CSV number, expression syntax)\n"
    "  6  computation failed (empty constraint set in exact mode, numerical failure)\n"
    "\nFEASTEST_SEED overrides the configuration seed.";

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Output {
  std::string path;  // "-" for stdout

  // JSON goes to the file; the summary to stdout unless JSON took stdout.
  void emit(const Json& j, const std::string& summary) const {
    const std::string text = j.dump(2) + "\n";
    if (path == "-") {
      std::cout << text;
      return;
    }
    io::write_file(path, text);
    std::cout << summary << "wrote " << path << "\n";
  }
};

Json load_json(const std::string& path) {
  return Json::parse(io::read_file(path));
}

fs::path base_dir(const std::string& config_path) {
  const fs::path p = fs::path(config_path).parent_path();
  return p.empty() ? fs::path(".") : p;
}

// Applies FEASTEST_SEED to the raw configuration; returns the seed source.
std::string apply_seed_override(Json& raw, const char* key = "seed") {
  const char* env = std::getenv("FEASTEST_SEED");
  if (env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw UsageError("FEASTEST_SEED must be a nonnegative integer, got '" + s + "'");
    raw[key] = v;
    return "FEASTEST_SEED";
  }
  return raw.contains(key) ? "config" : "default";
}

Json file_hash(const std::string& path) {
  return "fnv1a64:" + io::hex64(io::fnv1a(io::read_file(path)));
}

std::string fmt(double v) { return io::format_double(v); }

// ---- test, ci, bounded-test ----

int run_test_command(const std::string& command, const std::string& config_path,
                     const Output& out) {
  Json raw = load_json(config_path);
  const std::string seed_source = apply_seed_override(raw);
  const bool bounded = command == "bounded-test";
  const auto cfg = config::read_test_config(
      raw, base_dir(config_path), bounded ? config::TestKind::Bounded : config::TestKind::Test);

  TestReport rep;
  ConfidenceRegion region;
  if (bounded) {
    const auto res = bounded_response_test(cfg.input);
    rep = res.report;
    region = res.region;
  } else {
    rep = run_test(cfg.input);
    region = confidence_region(rep);
  }

  Json j;
  j["provenance"] = config::provenance(
      command, cfg.effective,
      Json{{"seed", cfg.input.seed}, {"solver_seed", cfg.input.solver.seed},
           {"seed_source", seed_source}},
      Json{{cfg.effective["data"].get<std::string>(), file_hash(cfg.data_path)}});
  j["config"] = cfg.effective;
  j["report"] = config::report_json(rep);

  std::string s;
  s += "decision: " + std::string(to_string(rep.verdict)) + "\n";
  if (rep.verdict == Verdict::EmptyHypothesis) {
    s += "  " + rep.message + "\n";
  } else {
    s += "  psi = " + fmt(rep.psi) + ", r = " + fmt(rep.threshold.value) + " (" +
         to_string(rep.threshold.method) + "), mu = " + fmt(rep.mu) + "\n";
    if (command != "test" || rep.reject)
      s += "  confidence region at level " + fmt(region.level) + ": [" + fmt(region.lower) +
           ", " + fmt(region.upper) + "], length " + fmt(region.length) + "\n";
  }
  if (rep.sigma_bound)
    s += "  sigma replaced by its bound " + fmt(rep.sigma_bound->bound) +
         "; overall level alpha + kappa = " + fmt(rep.alpha) + "\n";
  for (const auto& w : rep.diagnostics.warnings) s += "  warning: " + w + "\n";
  if (rep.solution.dispersion > 1e-6 * (1.0 + rep.psi))
    s += "  warning: starts disagree on the minimum (dispersion " +
         fmt(rep.solution.dispersion) + ")\n";
  out.emit(j, s);
  return kOk;
}

// ---- threshold ----

int run_threshold_command(const std::string& config_path, const Output& out) {
  Json raw = load_json(config_path);
  const std::string seed_source = apply_seed_override(raw);
  auto cfg = config::read_test_config(raw, base_dir(config_path), config::TestKind::ThresholdOnly);
  const TestInput& in = cfg.input;
  in.split.validate();
  const InstrumentMatrix X = in.normalize ? normalize_columns(in.X) : in.X;
  NoiseModel noise;
  std::optional<SigmaBound> bound;
  double alpha = in.split.total();
  if (in.noise) {
    noise = *in.noise;
  } else {
    bound = sigma_upper_bound(in.Y, in.kappa);
    noise = NoiseModel::gaussian(bound->bound);
    alpha += in.kappa;
  }
  const Threshold t = detail::make_threshold(in, X, noise, in.split.total());

  Json j;
  j["provenance"] = config::provenance(
      "threshold", cfg.effective, Json{{"seed", in.seed}, {"seed_source", seed_source}},
      Json{{cfg.effective["data"].get<std::string>(), file_hash(cfg.data_path)}});
  j["config"] = cfg.effective;
  Json res{{"threshold", config::threshold_json(t)},
           {"alpha", number(alpha)},
           {"noise", config::noise_json(noise)},
           {"column_norm", number(column_norm_functional(X, in.q))},
           {"instruments", config::instruments_json(X)}};
  if (bound)
    res["sigma_bound"] = Json{{"bound", number(bound->bound)}, {"c_n", number(bound->c_n)},
                              {"sigma_hat", number(bound->sigma_hat)},
                              {"below_sigma_hat", bound->below_sigma_hat}};
  std::string s = "r = " + fmt(t.value) + " (" + to_string(t.method) + ")\n";
  if (cfg.beta) {
    const double mc = t.method == ThresholdMethod::Ideal
                          ? in.expectation->mean
                          : (t.method == ThresholdMethod::UnionBound
                                 ? mc_gaussian_expectation(X, in.q, noise.sigma, in.R, in.seed).mean
                                 : t.mc_mean);
    const SeparationBound sep = separation_delta(X, in.q, noise, in.R, in.split, *cfg.beta, mc);
    Json terms = Json::object();
    for (const auto& [name, v] : sep.terms) terms[name] = number(v);
    res["separation"] = Json{{"concentration", number(sep.value)},
                             {"union", sep.union_form ? number(*sep.union_form) : Json()},
                             {"beta", config::split_json(*cfg.beta, false)},
                             {"terms", terms}};
    s += "separation delta = " + fmt(sep.value) + " (concentration)";
    if (sep.union_form) s += ", " + fmt(*sep.union_form) + " (union)";
    s += "\n";
  }
  j["result"] = res;
  out.emit(j, s);
  return kOk;
}

// ---- farkas ----

struct FarkasFlags {
  std::string A, b;
  std::optional<long> noisy_rows;
  std::optional<double> sigma;
  std::optional<std::string> q;
  std::optional<double> a1, a2;
  std::optional<long> R;
  std::optional<std::uint64_t> seed;
  std::string method;
};

Json farkas_flags_to_config(const FarkasFlags& f) {
  Json j{{"A", f.A}, {"b", f.b}};
  if (f.q) j["q"] = *f.q;
  if (f.R) j["R"] = *f.R;
  if (f.noisy_rows) j["noisy_rows"] = *f.noisy_rows;
  if (f.sigma) j["sigma"] = *f.sigma;
  if (f.a1 || f.a2) j["alpha"] = Json{{"a1", f.a1.value_or(0.049)}, {"a2", f.a2.value_or(0.001)}};
  if (f.seed) j["seed"] = *f.seed;
  if (!f.method.empty()) j["method"] = f.method;
  return j;
}

int run_farkas_command(Json raw, const fs::path& base, const Output& out) {
  const std::string seed_source = apply_seed_override(raw);
  config::Reader r(raw, "");
  const std::string a_name = r.string("A"), b_name = r.string("b");
  const std::string a_path = config::resolve(base, a_name).string();
  const std::string b_path = config::resolve(base, b_name).string();
  const io::Table At = io::read_csv(a_path), bt = io::read_csv(b_path);
  const Eigen::Index d = At.rows(), p = static_cast<Eigen::Index>(At.header.size());
  if (bt.rows() != d)
    throw SchemaError("A has " + std::to_string(d) + " rows but b has " +
                      std::to_string(bt.rows()));
  const Eigen::VectorXd b = bt.column("b");
  for (const auto& h : bt.header)
    if (h != "b" && h != "noisy") throw SchemaError("unexpected column '" + h + "' in " + b_name);

  // Noisy rows first, each group in file order.
  std::vector<Eigen::Index> order;
  long n = 0;
  if (bt.has("noisy")) {
    if (r.has("noisy_rows")) throw SchemaError("give either 'noisy_rows' or a 'noisy' column in b");
    const Eigen::VectorXd flag = bt.column("noisy");
    for (Eigen::Index i = 0; i < d; ++i) {
      if (flag[i] != 0.0 && flag[i] != 1.0) throw SchemaError("the 'noisy' column must hold 0 or 1");
      if (flag[i] == 1.0) order.push_back(i);
    }
    n = static_cast<long>(order.size());
    for (Eigen::Index i = 0; i < d; ++i)
      if (flag[i] == 0.0) order.push_back(i);
  } else {
    n = r.integer("noisy_rows", 0);
    if (n < 0 || n > d) throw InvalidArgument("noisy_rows must lie in 0.." + std::to_string(d));
    for (Eigen::Index i = 0; i < d; ++i) order.push_back(i);
  }
  Eigen::MatrixXd A(d, p);
  Eigen::VectorXd bb(d);
  Json row_order = Json::array();
  for (Eigen::Index i = 0; i < d; ++i) {
    A.row(i) = At.values.row(order[static_cast<std::size_t>(i)]);
    bb[i] = b[order[static_cast<std::size_t>(i)]];
    row_order.push_back(order[static_cast<std::size_t>(i)] + 1);
  }

  Json eff{{"A", a_name}, {"b", b_name}, {"noisy_rows", n}};
  NoisyTestOptions opt;
  double sigma = 0.0;
  if (n > 0) {
    sigma = r.real("sigma");
    eff["sigma"] = sigma;
    opt.q = r.norm_order("q");
    opt.split = config::read_split(r, "alpha", AlphaSplit{}, false);
    opt.R = r.integer("R", 10000);
    if (opt.R < 1) throw InvalidArgument("R must be at least 1");
    opt.seed = r.seed("seed", 0);
    const std::string def = opt.q.is_inf() ? "min" : "concentration";
    const std::string m = r.string("method", def);
    opt.method = config::parse_method(m);
    eff["q"] = opt.q.str();
    eff["alpha"] = config::split_json(opt.split, false);
    eff["R"] = opt.R;
    eff["seed"] = opt.seed;
    eff["method"] = to_string(*opt.method);
  } else {
    for (const char* key : {"sigma", "q", "alpha", "R", "seed", "method"})
      if (r.has(key)) throw SchemaError(std::string("'") + key + "' needs noisy rows");
  }
  r.finish();

  Json j;
  j["provenance"] = config::provenance(
      "farkas", eff, n > 0 ? Json{{"seed", opt.seed}, {"seed_source", seed_source}} : Json::object(),
      Json{{a_name, file_hash(a_path)}, {b_name, file_hash(b_path)}});
  j["config"] = eff;
  j["row_order"] = row_order;

  // Exact alternative on the observed right-hand side.
  const FarkasResult exact = farkas_certificate(A, bb);
  j["exact"] = config::farkas_json(exact);
  std::string s;
  if (n == 0) {
    j["decision"] = exact.feasible ? "feasible" : "infeasible";
    s = std::string("exact system: ") + (exact.feasible ? "feasible" : "infeasible") + "\n";
    if (!exact.feasible) s += "  certificate pi with pi^T A >= 0 and pi^T b < 0 written\n";
  } else {
    NoisyLp lp;
    lp.A = A;
    lp.y = bb.head(n);
    lp.b_exact = bb.tail(d - n);
    lp.sigma = sigma;
    const FeasibilityVerdict v = noisy_feasibility_test(lp, opt);
    j["decision"] = decision_name(v);
    j["verdict"] = config::verdict_json(v);
    s = std::string("decision: ") + decision_name(v) + "\n";
    if (v.exact_rows_empty) s += "  the exact rows alone have no nonnegative solution\n";
    else s += "  psi = " + fmt(v.psi) + ", r = " + fmt(v.r) + ", confidence " + fmt(v.confidence) + "\n";
    for (const auto& w : v.warnings) s += "  warning: " + w + "\n";
    s += std::string("  observed system taken as exact: ") +
         (exact.feasible ? "feasible" : "infeasible") + "\n";
  }
  out.emit(j, s);
  return kOk;
}

// ---- simulate ----

int run_simulate_command(const std::string& config_path, const std::string& out_dir,
                         std::optional<int> reps, bool records) {
  Json raw = load_json(config_path);
  const std::string seed_source = apply_seed_override(raw);
  if (reps) raw["reps"] = *reps;
  Json eff;
  const sim::StudyConfig cfg = config::read_study_config(raw, eff);
  const sim::StudyResult res = sim::simulate_study(cfg);

  Json j;
  j["provenance"] = config::provenance(
      "simulate", eff,
      Json{{"design_seed", cfg.design_seed}, {"seed", cfg.seed}, {"seed_source", seed_source}},
      Json::object());
  j["config"] = eff;
  j["result"] = config::study_json(res, records);
  fs::create_directories(out_dir);
  const std::string table = (fs::path(out_dir) / "table.csv").string();
  const std::string report = (fs::path(out_dir) / "study_report.json").string();
  io::write_file(table, config::study_table_csv({res}));
  io::write_file(report, j.dump(2) + "\n");

  std::string ape;
  for (double a : res.ape) ape += (ape.empty() ? "" : ", ") + fmt(a);
  std::cout << res.name << ": n = " << res.n << ", p = " << res.p << ", L = " << res.L << "\n"
            << "  (i) APE " << ape << (res.null_true ? " (null true)" : " (null false)") << "\n"
            << "  (ii) mean separation " << fmt(res.mean_separation) << "\n"
            << "  (iii) mean 2r " << fmt(res.mean_two_r) << "\n"
            << "  (iv) coverage " << fmt(res.coverage) << "\n"
            << "  (v) rejection " << fmt(res.rejection) << "\n"
            << "  " << res.completed << " completed, " << res.failures << " failed\n"
            << "wrote " << table << " and " << report << "\n";
  return kOk;
}

// ---- diagnose ----

struct DiagnoseFlags {
  std::optional<long> p, n, m, L;
  std::string q = "inf";
  std::string design;
  long R = 50000;
  std::optional<std::uint64_t> seed;
};

int run_diagnose_command(Json raw, const fs::path& base, const Output& out) {
  const std::string seed_source = apply_seed_override(raw);
  config::Reader r(raw, "");
  const long p = r.integer("p"), m = r.integer("m");
  long n = r.integer("n"), L = r.integer("L");
  const NormOrder q = r.norm_order("q");
  const long R = r.integer("R", 50000);
  if (R < 1) throw InvalidArgument("R must be at least 1");
  const std::uint64_t seed = r.seed("seed", 0);
  Json eff{{"p", p}, {"n", n}, {"m", m}, {"L", L}, {"q", q.str()}, {"R", R}, {"seed", seed}};
  Json inputs = Json::object();

  InstrumentMatrix X;
  std::string source;
  if (r.has("design")) {
    const std::string d = r.string("design");
    const std::string path = config::resolve(base, d).string();
    const io::Table t = io::read_csv(path);
    X = InstrumentMatrix(t.values, t.header);
    if (X.n() != n || X.L() != L)
      throw SchemaError("design is " + std::to_string(X.n()) + " x " + std::to_string(X.L()) +
                        " but n = " + std::to_string(n) + ", L = " + std::to_string(L));
    eff["design"] = d;
    inputs[d] = file_hash(path);
    source = d;
  } else {
    if (n < 1 || L < 1) throw InvalidArgument("n and L must be positive");
    rng::Stream s(seed, rng::stream_id(rng::kDesign));
    Eigen::MatrixXd x(n, L);
    for (long i = 0; i < n; ++i)
      for (long l = 0; l < L; ++l) x(i, l) = s.normal();
    X = InstrumentMatrix(std::move(x));
    source = "standard normal draws";
  }
  r.finish();
  X = normalize_columns(X);

  const PowerDiagnostics diag = power_feasibility_check(p, n, m, L, q);
  Json j;
  j["provenance"] = config::provenance("diagnose", eff,
                                       Json{{"seed", seed}, {"seed_source", seed_source}}, inputs);
  j["config"] = eff;
  j["diagnostics"] = config::diagnostics_json(diag);
  std::string s;
  if (diag.warnings.empty()) s += "no warnings\n";
  for (const auto& w : diag.warnings) s += "warning: " + w + "\n";

  const McEstimate mc = mc_gaussian_expectation(X, NormOrder::infinity(), 1.0, R, seed);
  Json bracket{{"design", source},
               {"sigma", 1.0},
               {"mc_mean", number(mc.mean)},
               {"mc_std_error", number(mc.std_error)}};
  s += "E||(1/n) X^T W||_inf (sigma = 1): " + fmt(mc.mean) + " +- " + fmt(mc.std_error) + "\n";
  if (L >= 2) {
    const GaussianMaxBounds b = gaussian_max_bounds(X);
    bracket["upper"] = number(b.upper);
    bool inside = mc.mean <= b.upper;
    if (b.lower) {
      bracket["lower"] = number(*b.lower);
      inside = inside && *b.lower <= mc.mean;
      s += "  bracket [" + fmt(*b.lower) + ", " + fmt(b.upper) + "]";
    } else {
      s += "  upper bound " + fmt(b.upper) + " (lower bound needs L >= 20)";
    }
    bracket["contains_mc"] = inside;
    s += inside ? ", contains the estimate\n" : ", does not contain the estimate\n";
  } else {
    s += "  no bracket for L = 1\n";
  }
  j["expectation"] = bracket;
  out.emit(j, s);
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const SchemaError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kSchema;
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "JSON parse error: " << e.what() << "\n";
    return kParse;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kSchema;
  } catch (const ParseError& e) {
    std::cerr << "expression error: " << e.what() << "\n";
    return kParse;
  } catch (const io::CsvError& e) {
    std::cerr << "CSV error: " << e.what() << "\n";
    return kParse;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kSchema;
  } catch (const Error& e) {
    std::cerr << "computation failed: " << e.what() << "\n";
    return kCompute;
  } catch (const std::exception& e) {
    std::cerr << "computation failed: " << e.what() << "\n";
    return kCompute;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonasymptotic tests and confidence regions from moment inequalities, "
               "with a noisy LP feasibility mode."};
  app.footer(kExitCodes);
  app.set_version_flag("--version", FEASTEST_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0 = all cores)");

  std::string config_path, out_path, out_dir = ".";
  CLI::App* test = app.add_subcommand("test", "run the hypothesis test");
  CLI::App* ci = app.add_subcommand("ci", "test and report the confidence region");
  CLI::App* bounded = app.add_subcommand("bounded-test", "test for responses in [0, 1]");
  CLI::App* threshold = app.add_subcommand("threshold", "compute the critical value only");
  for (auto [sub, def] : {std::pair{test, "report.json"}, std::pair{ci, "report.json"},
                          std::pair{bounded, "report.json"},
                          std::pair{threshold, "threshold.json"}}) {
    sub->add_option("--config", config_path, "JSON configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out_path,
                    std::string("JSON report path ('-' for stdout, default ") + def + ")");
  }

  CLI::App* farkas = app.add_subcommand("farkas", "feasibility of A theta = b, theta >= 0");
  FarkasFlags ff;
  std::string farkas_config;
  farkas->add_option("--config", farkas_config, "JSON configuration (instead of flags)")
      ->check(CLI::ExistingFile);
  farkas->add_option("--A", ff.A, "CSV of A with a header row");
  farkas->add_option("--b", ff.b, "CSV with column b and optional 0/1 column noisy");
  farkas->add_option("--noisy-rows", ff.noisy_rows, "the first N rows of b are noisy");
  farkas->add_option("--sigma", ff.sigma, "noise standard deviation");
  farkas->add_option("--q", ff.q, "norm order (default inf)");
  farkas->add_option("--alpha1", ff.a1, "level split, first part");
  farkas->add_option("--alpha2", ff.a2, "level split, second part");
  farkas->add_option("--R", ff.R, "Monte-Carlo draws (default 10000)");
  farkas->add_option("--seed", ff.seed, "Monte-Carlo seed");
  farkas->add_option("--method", ff.method, "concentration, union or min");
  farkas->add_option("--out", out_path, "JSON verdict path ('-' for stdout, default verdict.json)");

  CLI::App* simulate = app.add_subcommand("simulate", "run the Monte-Carlo study");
  std::optional<int> reps;
  bool records = false;
  simulate->add_option("--config", config_path, "study configuration")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out-dir", out_dir, "directory for table.csv and study_report.json")
      ->capture_default_str();
  simulate->add_option("--reps", reps, "override the number of repetitions");
  simulate->add_flag("--records", records, "include per-repetition records in the report");

  CLI::App* diagnose = app.add_subcommand("diagnose", "dimension warnings and the expectation bracket");
  DiagnoseFlags df;
  std::string diagnose_config;
  diagnose->add_option("--config", diagnose_config, "JSON configuration (instead of flags)")
      ->check(CLI::ExistingFile);
  diagnose->add_option("--p", df.p, "number of parameters");
  diagnose->add_option("--n", df.n, "number of observations");
  diagnose->add_option("--m", df.m, "number of restrictions");
  diagnose->add_option("--L", df.L, "number of instruments");
  diagnose->add_option("--q", df.q, "norm order")->capture_default_str();
  diagnose->add_option("--design", df.design, "CSV of instruments (default: normal draws)");
  diagnose->add_option("--R", df.R, "Monte-Carlo draws")->capture_default_str();
  diagnose->add_option("--seed", df.seed, "seed for draws");
  diagnose->add_option("--out", out_path, "JSON path ('-' for stdout, default diagnose.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  set_max_threads(threads);

  auto output = [&](const char* def) { return Output{out_path.empty() ? def : out_path}; };
  return guarded([&]() -> int {
    if (*test) return run_test_command("test", config_path, output("report.json"));
    if (*ci) return run_test_command("ci", config_path, output("report.json"));
    if (*bounded) return run_test_command("bounded-test", config_path, output("report.json"));
    if (*threshold) return run_threshold_command(config_path, output("threshold.json"));
    if (*farkas) {
      if (!farkas_config.empty()) {
        if (!ff.A.empty() || !ff.b.empty() || ff.noisy_rows || ff.sigma)
          throw UsageError("give either --config or the --A/--b flags");
        return run_farkas_command(load_json(farkas_config), base_dir(farkas_config),
                                  output("verdict.json"));
      }
      if (ff.A.empty() || ff.b.empty()) throw UsageError("farkas needs --A and --b (or --config)");
      return run_farkas_command(farkas_flags_to_config(ff), ".", output("verdict.json"));
    }
    if (*simulate) return run_simulate_command(config_path, out_dir, reps, records);
    if (*diagnose) {
      if (!diagnose_config.empty())
        return run_diagnose_command(load_json(diagnose_config), base_dir(diagnose_config),
                                    output("diagnose.json"));
      if (!df.p || !df.n || !df.m || !df.L)
        throw UsageError("diagnose needs --p, --n, --m and --L (or --config)");
      Json raw{{"p", *df.p}, {"n", *df.n}, {"m", *df.m}, {"L", *df.L}, {"q", df.q}, {"R", df.R}};
      if (!df.design.empty()) raw["design"] = df.design;
      if (df.seed) raw["seed"] = *df.seed;
      return run_diagnose_command(raw, ".", output("diagnose.json"));
    }
    throw UsageError("no subcommand");
  });
}
