#include "remex/cli.hpp"

#include "remex/errors.hpp"
#include "remex/power.hpp"
#include "remex/serialize.hpp"
#include "remex/simlab.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace remex {

namespace {

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

void print_test(std::ostream& out, const TestResult& t) {
  out << "test: " << t.description << "  W = " << num(t.statistic, 5) << "  p = " << num(t.p_value, 4)
      << "  " << (t.rejected ? "rejected" : "not rejected") << " at " << num(t.level) << "\n";
}

void print_fit(std::ostream& out, const NamedFit& nf) {
  const FitResult& f = nf.fit;
  out << nf.role << ": " << f.model.label() << (f.reduced ? " (reduced)" : "") << "\n";
  out << "  " << pad("parameter", 12) << lpad("estimate", 14) << lpad("se", 14) << lpad("z", 10)
      << lpad("p", 12) << "\n";
  for (std::size_t k = 0; k < f.model.parameter_count(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << "  " << pad(f.model.parameter_names()[k], 12);
    if (f.model.pinned()[k]) {
      out << lpad(num(f.estimates(i), 8), 14) << "  (held at zero)\n";
      continue;
    }
    out << lpad(num(f.estimates(i), 8), 14) << lpad(num(f.se(i), 6), 14) << lpad(num(f.z(i), 4), 10)
        << lpad(num(f.p(i), 4), 12) << "\n";
  }
  for (const auto& r : f.relative_effects) {
    out << "  relative " << r.parameter << " (%): " << num(100.0 * r.estimate, 6) << "  se "
        << num(100.0 * r.se, 5) << "  p " << num(r.p, 4) << "\n";
  }
  for (const auto& w : f.warnings) out << "  warning: " << w << "\n";
}

Json report_json(const AnalysisReport& rep) {
  Json tests = Json::array();
  for (const auto& t : rep.tests) tests.push_back(to_json(t));
  Json fits = Json::array();
  for (const auto& f : rep.fits) fits.push_back({{"role", f.role}, {"fit", to_json(f.fit)}});
  return {{"design", std::string(to_string(rep.design))},
          {"scale", std::string(to_string(rep.scale))},
          {"path", rep.path},
          {"two_stage", rep.two_stage},
          {"tests", std::move(tests)},
          {"fits", std::move(fits)},
          {"notes", rep.notes}};
}

constexpr const char* kTwoStageNote =
    "two-stage procedure: the reported model was chosen by the test above at the stated level; "
    "its p-values are not adjusted for that choice";

}  // namespace

AnalysisReport run_workflow(DesignKind design, EffectScale scale, bool pre_period, double alpha,
                            const MetricMoments& moments, bool has_pre_data) {
  AnalysisReport rep;
  rep.design = design;
  rep.scale = scale;
  switch (design) {
    case DesignKind::TTest:
    case DesignKind::Cuped:
    case DesignKind::Cumulative: {
      const bool prefix = pre_period && design == DesignKind::Cumulative;
      rep.fits.push_back({"reported model", fit(build_model(design, scale, prefix), moments)});
      rep.path = std::string("single ") + std::string(to_string(design)) + " model";
      break;
    }
    case DesignKind::Crossover:
    case DesignKind::Parallel: {
      const DesignKind two = *two_delta_variant(design);
      FitResult sep = fit(build_model(two, scale, pre_period), moments);
      const TestResult t = wald_test(sep, contrast(sep.model, {{"delta1", 1.0}, {"delta2", -1.0}}), alpha,
                                     "delta1 - delta2 = 0 (equal effects in both periods)");
      rep.tests.push_back(t);
      rep.two_stage = true;
      const std::string family(to_string(design));
      if (!t.rejected) {
        rep.fits.push_back({"equivalence model", std::move(sep)});
        rep.fits.push_back({"reported model", fit(build_model(design, scale, pre_period), moments)});
        rep.path = "pooled " + family + " model";
      } else if (design == DesignKind::Crossover) {
        rep.fits.push_back({"reported model", std::move(sep)});
        rep.path = "separate period effects";
        rep.notes.push_back(
            "per-period effects differ; a re-randomized follow-up can separate a trend from carryover");
      } else {
        rep.fits.push_back({"equivalence model", std::move(sep)});
        const DesignKind cumulative = has_pre_data ? DesignKind::Cuped : DesignKind::TTest;
        rep.fits.push_back({"reported model", fit(build_model(cumulative, scale, false), moments)});
        rep.path = std::string("cumulative effect (") + std::string(to_string(cumulative)) + ")";
        if (!has_pre_data) rep.notes.push_back("no pre-experiment period in the data; cumulative effect fitted without it");
      }
      rep.notes.push_back(kTwoStageNote);
      break;
    }
    case DesignKind::ReRandomized: {
      FitResult full = fit(build_model(design, scale, pre_period), moments);
      const TestResult t =
          wald_test(full, contrast(full.model, {{"alpha", 1.0}}), alpha, "alpha = 0 (no carryover)");
      rep.tests.push_back(t);
      rep.two_stage = true;
      FitResult chosen = reduce_model(full, alpha);
      if (chosen.reduced) {
        rep.fits.push_back({"carryover model", std::move(full)});
        rep.fits.push_back({"reported model", std::move(chosen)});
        rep.path = "reduced model without carryover";
      } else {
        rep.fits.push_back({"reported model", std::move(chosen)});
        rep.path = "full model with carryover";
      }
      rep.notes.push_back(kTwoStageNote);
      break;
    }
    default:
      throw UsageError("analyze takes a design family: ttest, cuped, parallel, cumulative, crossover or rerandomized");
  }
  return rep;
}

namespace {

int cmd_analyze(const AnalysisRequest& req, std::ostream& out) {
  CsvSchema schema = req.schema;
  schema.metric = req.metric;
  schema.design = req.design;
  ExperimentDataset ds = parse_dataset_file(req.input, schema);
  const ValidationReport val = validate(ds, req.design, req.pre_period);
  if (!val.conforms) {
    std::string msg = req.input.string() + ": data does not fit the " + std::string(to_string(req.design)) +
                      " design:";
    for (const auto& n : val.nonconformities) msg += "\n  " + n;
    throw DataError(msg);
  }
  const MetricMoments mm = finalize(summarize(ds), ds.metric());
  const AnalysisReport rep = run_workflow(req.design, req.scale, req.pre_period, req.alpha, mm, ds.has_pre_period());

  if (req.json) {
    Json j = report_json(rep);
    j["input"] = req.input.string();
    j["metric"] = req.metric.to_string();
    j["alpha"] = req.alpha;
    j["validation"] = to_json(val);
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  out << "design: " << to_string(req.design) << ", " << to_string(req.scale) << " effects, metric "
      << req.metric.to_string() << "\n";
  out << "data: " << ds.user_count() << " users;";
  for (std::size_t g = 0; g < val.group_sizes.size(); ++g) out << " group " << g << " = " << val.group_sizes[g] << ";";
  out << " presence";
  for (std::size_t k = 0; k < val.period_labels.size(); ++k) {
    out << " p" << val.period_labels[k] << " " << num(100.0 * val.presence_rates[k], 4) << "%";
  }
  out << "\n";
  for (const auto& w : val.warnings) out << "warning: " << w << "\n";
  for (const auto& t : rep.tests) print_test(out, t);
  out << "path: " << rep.path << "\n";
  for (const auto& f : rep.fits) print_fit(out, f);
  for (const auto& n : rep.notes) out << "note: " << n << "\n";
  return kExitOk;
}

struct SimulateRequest {
  std::filesystem::path config;
  std::string design;
  std::size_t replications = 1000;
  EffectScale scale = EffectScale::Absolute;
  std::optional<std::uint64_t> seed;
  bool json = true;
  std::string csv;
  std::string dataset_out;
};

int cmd_simulate(const SimulateRequest& req, std::ostream& out) {
  std::ifstream in(req.config);
  if (!in) throw DataError("cannot open simulation config " + req.config.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(req.config.string() + ": invalid JSON: " + e.what());
  }
  SimConfig cfg = sim_config_from_json(j);
  if (req.seed) cfg.seed = *req.seed;
  const DesignKind kind = req.design.empty() ? cfg.design : parse_design_kind(req.design);

  if (!req.dataset_out.empty()) {
    SimConfig g = cfg;
    g.design = kind;
    std::ofstream f(req.dataset_out);
    if (!f) throw DataError("cannot write " + req.dataset_out);
    write_csv(f, generate(g));
  }
  if (req.replications == 0) {
    if (req.dataset_out.empty()) throw UsageError("--replications 0 only makes sense with --dataset-out");
    return kExitOk;
  }
  const MonteCarloReport rep = run_monte_carlo(cfg, kind, req.replications, req.scale);
  if (!req.csv.empty()) {
    std::ofstream f(req.csv);
    if (!f) throw DataError("cannot write " + req.csv);
    rep.write_csv(f);
  }
  if (req.json) {
    out << to_json(rep).dump(2) << "\n";
    return kExitOk;
  }
  out << "simulation: condition " << cfg.condition << ", " << to_string(kind) << " (" << to_string(req.scale)
      << "), " << cfg.users_per_group << " users per group, " << rep.requested << " replications, "
      << rep.failed << " failed\n";
  out << "activity: E[p] = " << num(rep.activity.mean_activity) << ", among present users "
      << num(rep.activity.present_activity) << ", missing rate " << num(rep.activity.missing_rate) << "\n";
  for (const auto& e : rep.estimators) {
    out << e.parameter << ": ground_truth " << num(e.ground_truth) << "  mean " << num(e.mean_estimate)
        << "  mcse " << num(e.mc_standard_error, 4) << "  var " << num(e.empirical_variance, 5) << "  fisher "
        << num(e.mean_fisher_variance, 5) << "  ratio " << num(e.variance_ratio, 4) << "  coverage "
        << num(e.coverage, 4) << "\n";
  }
  return kExitOk;
}

struct PowerRequest {
  PowerSpec spec;
  std::optional<double> mde;
  std::optional<double> variance;
  std::optional<double> standardized;
  bool json = false;
};

int cmd_power(PowerRequest req, std::ostream& out) {
  if (req.standardized) {
    if (req.mde || req.variance) throw UsageError("give either --standardized-effect or --mde with --variance");
    if (!(*req.standardized > 0.0)) throw UsageError("--standardized-effect must be positive");
    req.spec.mde = 1.0;
    req.spec.variance_per_unit = 1.0 / *req.standardized;
  } else {
    if (!req.mde || !req.variance) throw UsageError("power needs --mde and --variance, or --standardized-effect");
    req.spec.mde = *req.mde;
    req.spec.variance_per_unit = *req.variance;
  }
  const SampleSize s = sample_size(req.spec);
  if (req.json) {
    out << to_json(s, req.spec).dump(2) << "\n";
    return kExitOk;
  }
  out << "z(1 - alpha/2) = " << num(s.z_alpha, 10) << "\n";
  out << "z(power)       = " << num(s.z_power, 10) << "\n";
  out << "n per group    = " << s.n << "  (before rounding " << num(s.unrounded, 10) << ")\n";
  return kExitOk;
}

struct CompareRequest {
  std::optional<double> s1, s2, rho;
  std::string baseline = "crossover";
  std::vector<std::string> designs;
  std::vector<std::string> fits;  // design=path
  MetricDef metric;
  EffectScale scale = EffectScale::Relative;
  bool pre_period = false;
  bool json = false;
};

int cmd_compare(const CompareRequest& req, std::ostream& out) {
  DesignComparison cmp;
  if (!req.fits.empty()) {
    if (req.s1 || req.s2 || req.rho) throw UsageError("give either --fit inputs or closed-form --s1/--s2/--rho");
    std::vector<DesignVariance> vars;
    for (const auto& spec : req.fits) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw UsageError("--fit expects design=path, got '" + spec + "'");
      const DesignKind kind = parse_design_kind(spec.substr(0, eq));
      const std::filesystem::path path = spec.substr(eq + 1);
      CsvSchema schema;
      schema.metric = req.metric;
      schema.design = kind;
      const ExperimentDataset ds = parse_dataset_file(path, schema);
      const bool prefix = req.pre_period && kind != DesignKind::TTest && kind != DesignKind::Cuped;
      const FitResult f = fit(build_model(kind, req.scale, prefix), finalize(summarize(ds), ds.metric()));
      vars.push_back(comparable_variance(f, std::string(to_string(kind))));
    }
    cmp = compare_designs(vars, req.baseline);
  } else {
    if (!req.s1 || !req.s2 || !req.rho) throw UsageError("compare needs --s1, --s2 and --rho, or --fit inputs");
    std::vector<DesignKind> kinds;
    const std::vector<std::string> names =
        req.designs.empty() ? std::vector<std::string>{"crossover", "parallel", "cumulative"} : req.designs;
    for (const auto& n : names) kinds.push_back(parse_design_kind(n));
    cmp = compare_closed_form(*req.s1, *req.s2, *req.rho, parse_design_kind(req.baseline), kinds);
  }
  if (req.json) {
    out << to_json(cmp).dump(2) << "\n";
    return kExitOk;
  }
  out << "baseline: " << cmp.baseline << " (" << to_string(cmp.scale) << " effect scale)\n";
  out << pad("design", 14) << lpad("variance", 16) << lpad("percent", 12) << "\n";
  for (const auto& r : cmp.rows) {
    out << pad(r.name, 14) << lpad(num(r.variance, 8), 16) << lpad(num(r.percent, 6), 12) << "\n";
  }
  return kExitOk;
}

const std::vector<std::string> kFamilies{"ttest", "cuped", "parallel", "cumulative", "crossover", "rerandomized"};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Repeated-measures analysis of online experiments"};
  app.name("remex");
  app.require_subcommand(1);

  std::string format = "text";
  std::string scale = "absolute";

  // analyze
  AnalysisRequest areq;
  std::string a_design, a_metric = "average:value", a_input, a_delim = ",";
  std::optional<std::string> a_present;
  auto* analyze = app.add_subcommand("analyze", "Fit a design to an experiment log and run its workflow");
  analyze->add_option("input", a_input, "CSV experiment log")->required();
  analyze->add_option("--design", a_design, "Design family")->required()->check(CLI::IsMember(kFamilies));
  analyze->add_option("--scale", scale, "Effect scale")->check(CLI::IsMember({"absolute", "relative"}));
  analyze->add_option("--metric", a_metric, "average:<col> or ratio:<num>/<den>");
  analyze->add_option("--alpha", areq.alpha, "Significance level of the workflow tests");
  analyze->add_flag("--pre-period", areq.pre_period, "Treat period 0 as the pre-experiment baseline");
  analyze->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));
  analyze->add_option("--user-column", areq.schema.user_column, "User id column");
  analyze->add_option("--group-column", areq.schema.group_column, "Sequence group column");
  analyze->add_option("--period-column", areq.schema.period_column, "Period column");
  analyze->add_option("--present-column", a_present, "Optional 0/1 presence column");
  analyze->add_option("--delimiter", a_delim, "Field delimiter");

  // simulate
  SimulateRequest sreq;
  std::string s_format = "json";
  std::uint64_t s_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo study from a JSON simulation config");
  simulate->add_option("config", sreq.config, "JSON SimConfig")->required();
  simulate->add_option("--design", sreq.design, "Design fitted in each replication");
  simulate->add_option("--replications,-k", sreq.replications, "Number of replications");
  simulate->add_option("--scale", scale, "Effect scale")->check(CLI::IsMember({"absolute", "relative"}));
  auto* seed_opt = simulate->add_option("--seed", s_seed, "Override the config seed");
  simulate->add_option("--format", s_format, "Output format")->check(CLI::IsMember({"text", "json"}));
  simulate->add_option("--csv", sreq.csv, "Write per-replication estimates to this CSV");
  simulate->add_option("--dataset-out", sreq.dataset_out, "Write one generated dataset to this CSV");

  // power
  PowerRequest preq;
  auto* power = app.add_subcommand("power", "Users per group needed to detect an effect");
  power->add_option("--alpha", preq.spec.alpha, "Type-I error level");
  power->add_option("--power", preq.spec.power, "Target power");
  power->add_option("--mde", preq.mde, "Minimum detectable effect");
  power->add_option("--variance", preq.variance, "Var(delta-hat) at one user per group");
  power->add_option("--standardized-effect", preq.standardized, "delta^2 / variance, instead of --mde/--variance");
  power->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));

  // compare
  CompareRequest creq;
  std::string c_metric = "average:value";
  std::string c_scale = "relative";
  auto* compare = app.add_subcommand("compare", "Percent samples needed per design relative to a baseline");
  compare->add_option("--s1", creq.s1, "Standard error of period-1 means");
  compare->add_option("--s2", creq.s2, "Standard error of period-2 means");
  compare->add_option("--rho", creq.rho, "Between-period correlation");
  compare->add_option("--baseline", creq.baseline, "Baseline design");
  compare->add_option("--designs", creq.designs, "Designs for the closed-form comparison")->delimiter(',');
  compare->add_option("--fit", creq.fits, "design=path of a CSV log to fit (repeatable)");
  compare->add_option("--metric", c_metric, "Metric for --fit inputs");
  compare->add_option("--scale", c_scale, "Effect scale for --fit inputs")->check(CLI::IsMember({"absolute", "relative"}));
  compare->add_flag("--pre-period", creq.pre_period, "Use period 0 as baseline in --fit inputs");
  compare->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      // help() already renders the selected subcommand when one was given
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsageError;
  }

  try {
    if (analyze->parsed()) {
      areq.input = a_input;
      areq.design = parse_design_kind(a_design);
      areq.scale = parse_effect_scale(scale);
      areq.metric = MetricDef::parse(a_metric);
      areq.json = format == "json";
      areq.schema.present_column = a_present;
      if (a_delim.size() != 1) throw UsageError("--delimiter must be a single character");
      areq.schema.delimiter = a_delim[0];
      if (!(areq.alpha > 0.0 && areq.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
      return cmd_analyze(areq, out);
    }
    if (simulate->parsed()) {
      sreq.scale = parse_effect_scale(scale);
      sreq.json = s_format == "json";
      if (seed_opt->count() > 0) sreq.seed = s_seed;
      return cmd_simulate(sreq, out);
    }
    if (power->parsed()) {
      preq.json = format == "json";
      return cmd_power(preq, out);
    }
    creq.metric = MetricDef::parse(c_metric);
    creq.scale = parse_effect_scale(c_scale);
    creq.json = format == "json";
    return cmd_compare(creq, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsageError;
  } catch (const ConvergenceError& e) {
    err << "convergence error: " << e.what() << "\n  last iterate:";
    for (double v : e.last_iterate()) err << " " << num(v, 10);
    err << "\n";
    return kExitFitError;
  } catch (const IdentifiabilityError& e) {
    err << "identifiability error: " << e.what() << "\n";
    return kExitFitError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
}

}  // namespace remex
