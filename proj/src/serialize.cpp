#include "remex/serialize.hpp"

#include "remex/errors.hpp"

#include <set>

namespace remex {

namespace {

constexpr const char* kMomentsFormat = "remex.moments/1";

Json vec(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json mat(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

Eigen::VectorXd read_vec(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
  return v;
}

Eigen::MatrixXd read_mat(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw DataError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed JSON document: ") + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Json to_json(const MomentSummary& summary) {
  const MomentLayout& l = summary.layout();
  Json j;
  j["format"] = kMomentsFormat;
  j["first_period"] = l.first_period;
  j["period_count"] = l.period_count;
  j["components"] = l.components;
  j["with_total"] = l.with_total;
  Json groups = Json::array();
  for (int g = 0; g < summary.group_count(); ++g) {
    const MomentAccumulator& a = summary.group(g);
    groups.push_back({{"n", a.count()}, {"mean", vec(a.mean())}, {"m2", mat(a.m2())}});
  }
  j["groups"] = std::move(groups);
  return j;
}

MomentSummary moment_summary_from_json(const Json& j) {
  return guarded([&] {
    if (j.at("format").get<std::string>() != kMomentsFormat) {
      throw DataError("unsupported moment summary format '" + j.at("format").get<std::string>() + "'");
    }
    MomentLayout l;
    l.first_period = j.at("first_period").get<int>();
    l.period_count = j.at("period_count").get<int>();
    l.components = j.at("components").get<std::size_t>();
    l.with_total = j.at("with_total").get<bool>();
    std::vector<MomentAccumulator> groups;
    for (const Json& g : j.at("groups")) {
      Eigen::VectorXd mean = read_vec(g.at("mean"));
      Eigen::MatrixXd m2 = read_mat(g.at("m2"));
      if (static_cast<std::size_t>(mean.size()) != l.dimension()) {
        throw DataError("moment summary group has dimension " + std::to_string(mean.size()) +
                        ", layout implies " + std::to_string(l.dimension()));
      }
      groups.push_back(MomentAccumulator::from_state(g.at("n").get<std::size_t>(), std::move(mean), std::move(m2)));
    }
    if (groups.empty()) throw DataError("moment summary has no groups");
    return MomentSummary::from_groups(l, std::move(groups));
  });
}

// ---------------------------------------------------------------------------

Json to_json(const FitResult& fit) {
  const DesignModel& m = fit.model;
  Json model;
  model["design"] = std::string(to_string(m.kind()));
  model["scale"] = std::string(to_string(m.scale()));
  model["pre_period"] = m.has_pre_period();
  model["label"] = m.label();
  Json layout = Json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    layout.push_back({{"group", m.layout()[i].group},
                      {"period", m.layout()[i].period == kTotalPeriod ? Json("total") : Json(m.layout()[i].period)},
                      {"mean", m.describe_entry(i)}});
  }
  model["layout"] = std::move(layout);

  Json params = Json::array();
  for (std::size_t k = 0; k < m.parameter_count(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    params.push_back({{"name", m.parameter_names()[k]},
                      {"estimate", fit.estimates(i)},
                      {"se", fit.se(i)},
                      {"z", fit.z(i)},
                      {"p", fit.p(i)},
                      {"pinned", static_cast<bool>(m.pinned()[k])}});
  }
  Json rel = Json::array();
  for (const auto& r : fit.relative_effects) {
    rel.push_back({{"parameter", r.parameter}, {"estimate", r.estimate}, {"se", r.se}, {"z", r.z}, {"p", r.p}});
  }

  Json j;
  j["model"] = std::move(model);
  j["parameters"] = std::move(params);
  j["covariance"] = mat(fit.covariance);
  j["relative_effects"] = std::move(rel);
  j["objective"] = fit.objective;
  j["iterations"] = fit.iterations;
  j["final_step"] = fit.final_step;
  j["converged"] = fit.converged;
  j["reduced"] = fit.reduced;
  j["warnings"] = fit.warnings;
  j["observed"] = vec(fit.observed);
  j["observed_covariance"] = mat(fit.observed_covariance);
  return j;
}

FitResult fit_result_from_json(const Json& j) {
  return guarded([&] {
    const Json& model = j.at("model");
    FitResult r;
    r.model = build_model(parse_design_kind(model.at("design").get<std::string>()),
                          parse_effect_scale(model.at("scale").get<std::string>()),
                          model.at("pre_period").get<bool>());
    const Json& params = j.at("parameters");
    const auto p = static_cast<Eigen::Index>(r.model.parameter_count());
    if (static_cast<Eigen::Index>(params.size()) != p) throw DataError("parameter count does not match model");
    r.estimates.resize(p);
    r.se.resize(p);
    r.z.resize(p);
    r.p.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      const Json& e = params.at(static_cast<std::size_t>(k));
      if (e.at("name").get<std::string>() != r.model.parameter_names()[static_cast<std::size_t>(k)]) {
        throw DataError("parameter order does not match model");
      }
      r.estimates(k) = e.at("estimate").get<double>();
      r.se(k) = e.at("se").get<double>();
      r.z(k) = e.at("z").get<double>();
      r.p(k) = e.at("p").get<double>();
    }
    r.covariance = read_mat(j.at("covariance"));
    for (const Json& e : j.at("relative_effects")) {
      r.relative_effects.push_back({e.at("parameter").get<std::string>(), e.at("estimate").get<double>(),
                                    e.at("se").get<double>(), e.at("z").get<double>(), e.at("p").get<double>()});
    }
    r.objective = j.at("objective").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.final_step = j.at("final_step").get<double>();
    r.converged = j.at("converged").get<bool>();
    r.reduced = j.at("reduced").get<bool>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.observed = read_vec(j.at("observed"));
    r.observed_covariance = read_mat(j.at("observed_covariance"));
    return r;
  });
}

Json to_json(const TestResult& t) {
  return {{"description", t.description}, {"statistic", t.statistic}, {"df", t.df},
          {"p_value", t.p_value},         {"level", t.level},         {"rejected", t.rejected}};
}

TestResult test_result_from_json(const Json& j) {
  return guarded([&] {
    TestResult t;
    t.description = j.at("description").get<std::string>();
    t.statistic = j.at("statistic").get<double>();
    t.df = j.at("df").get<int>();
    t.p_value = j.at("p_value").get<double>();
    t.level = j.at("level").get<double>();
    t.rejected = j.at("rejected").get<bool>();
    return t;
  });
}

// ---------------------------------------------------------------------------

Json to_json(const SimConfig& c) {
  return {{"users_per_group", c.users_per_group},
          {"condition", c.condition},
          {"design", std::string(to_string(c.design))},
          {"pre_period", c.pre_period},
          {"mu", c.mu},
          {"sigma", c.sigma},
          {"sigma_u", c.sigma_u},
          {"delta", c.delta},
          {"sigma_delta", c.sigma_delta},
          {"target_activity", c.target_activity},
          {"missingness", c.missingness},
          {"target_missing_rate", c.target_missing_rate},
          {"max_missing", c.max_missing},
          {"fixed_effect", c.fixed_effect},
          {"theta", c.theta},
          {"carryover", c.carryover},
          {"delta_shift", c.delta_shift},
          {"seed", c.seed}};
}

SimConfig sim_config_from_json(const Json& j) {
  return guarded([&] {
    if (!j.is_object()) throw DataError("simulation config must be a JSON object");
    static const std::set<std::string> known{
        "users_per_group", "condition", "design",       "pre_period",          "mu",
        "sigma",           "sigma_u",   "delta",        "sigma_delta",         "target_activity",
        "missingness",     "target_missing_rate",       "max_missing",         "fixed_effect",
        "theta",           "carryover", "delta_shift",  "seed"};
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw UsageError("unknown simulation config key '" + key + "'");
    }
    SimConfig c;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("users_per_group", c.users_per_group);
    get("condition", c.condition);
    if (j.contains("design")) c.design = parse_design_kind(j.at("design").get<std::string>());
    get("pre_period", c.pre_period);
    get("mu", c.mu);
    get("sigma", c.sigma);
    get("sigma_u", c.sigma_u);
    get("delta", c.delta);
    get("sigma_delta", c.sigma_delta);
    get("target_activity", c.target_activity);
    get("missingness", c.missingness);
    get("target_missing_rate", c.target_missing_rate);
    get("max_missing", c.max_missing);
    get("fixed_effect", c.fixed_effect);
    get("theta", c.theta);
    get("carryover", c.carryover);
    get("delta_shift", c.delta_shift);
    get("seed", c.seed);
    c.check();
    return c;
  });
}

Json to_json(const MonteCarloReport& r) {
  Json est = Json::array();
  for (const auto& e : r.estimators) {
    est.push_back({{"parameter", e.parameter},
                   {"ground_truth", e.ground_truth},
                   {"mean_estimate", e.mean_estimate},
                   {"mc_standard_error", e.mc_standard_error},
                   {"bias", e.bias},
                   {"empirical_variance", e.empirical_variance},
                   {"mean_fisher_variance", e.mean_fisher_variance},
                   {"variance_ratio", e.variance_ratio},
                   {"coverage", e.coverage},
                   {"replications", e.replications}});
  }
  Json reps = Json::array();
  for (const auto& x : r.replications) {
    Json row{{"index", x.index}, {"seed", x.seed}, {"ok", x.ok},
             {"estimates", x.estimates}, {"standard_errors", x.standard_errors}};
    if (!x.ok) row["error"] = x.error;
    reps.push_back(std::move(row));
  }
  Json j;
  j["config"] = to_json(r.config);
  j["design"] = std::string(to_string(r.design));
  j["scale"] = std::string(to_string(r.scale));
  j["requested"] = r.requested;
  j["failed"] = r.failed;
  j["activity"] = {{"a", r.activity.a},
                   {"b", r.activity.b},
                   {"constant", r.activity.constant},
                   {"constant_p", r.activity.constant_p},
                   {"mean_activity", r.activity.mean_activity},
                   {"present_activity", r.activity.present_activity},
                   {"missing_rate", r.activity.missing_rate},
                   {"notes", r.activity.notes}};
  j["ground_truth"] = r.estimators.empty() ? 0.0 : r.estimators.front().ground_truth;
  j["estimators"] = std::move(est);
  j["replications"] = std::move(reps);
  return j;
}

MonteCarloReport monte_carlo_report_from_json(const Json& j) {
  return guarded([&] {
    MonteCarloReport r;
    r.config = sim_config_from_json(j.at("config"));
    r.design = parse_design_kind(j.at("design").get<std::string>());
    r.scale = parse_effect_scale(j.at("scale").get<std::string>());
    r.requested = j.at("requested").get<std::size_t>();
    r.failed = j.at("failed").get<std::size_t>();
    const Json& a = j.at("activity");
    r.activity.a = a.at("a").get<double>();
    r.activity.b = a.at("b").get<double>();
    r.activity.constant = a.at("constant").get<bool>();
    r.activity.constant_p = a.at("constant_p").get<double>();
    r.activity.mean_activity = a.at("mean_activity").get<double>();
    r.activity.present_activity = a.at("present_activity").get<double>();
    r.activity.missing_rate = a.at("missing_rate").get<double>();
    r.activity.notes = a.at("notes").get<std::vector<std::string>>();
    for (const Json& e : j.at("estimators")) {
      EstimatorSummary s;
      s.parameter = e.at("parameter").get<std::string>();
      s.ground_truth = e.at("ground_truth").get<double>();
      s.mean_estimate = e.at("mean_estimate").get<double>();
      s.mc_standard_error = e.at("mc_standard_error").get<double>();
      s.bias = e.at("bias").get<double>();
      s.empirical_variance = e.at("empirical_variance").get<double>();
      s.mean_fisher_variance = e.at("mean_fisher_variance").get<double>();
      s.variance_ratio = e.at("variance_ratio").get<double>();
      s.coverage = e.at("coverage").get<double>();
      s.replications = e.at("replications").get<std::size_t>();
      r.estimators.push_back(s);
    }
    for (const Json& x : j.at("replications")) {
      Replication rep;
      rep.index = x.at("index").get<std::size_t>();
      rep.seed = x.at("seed").get<std::uint64_t>();
      rep.ok = x.at("ok").get<bool>();
      rep.estimates = x.at("estimates").get<std::vector<double>>();
      rep.standard_errors = x.at("standard_errors").get<std::vector<double>>();
      if (x.contains("error")) rep.error = x.at("error").get<std::string>();
      r.replications.push_back(std::move(rep));
    }
    return r;
  });
}

Json to_json(const BootstrapResult& b) {
  return {{"parameter", b.parameter},
          {"resamples", b.resamples},
          {"skipped", b.skipped},
          {"estimate", b.estimate},
          {"bootstrap_variance", b.bootstrap_variance},
          {"fisher_variance", b.fisher_variance},
          {"ratio", b.ratio}};
}

Json to_json(const DesignComparison& c) {
  Json rows = Json::array();
  for (const auto& r : c.rows) {
    rows.push_back({{"design", r.name}, {"variance", r.variance}, {"percent", r.percent}});
  }
  return {{"baseline", c.baseline}, {"scale", std::string(to_string(c.scale))}, {"rows", std::move(rows)}};
}

Json to_json(const SampleSize& s, const PowerSpec& spec) {
  return {{"alpha", spec.alpha},
          {"power", spec.power},
          {"mde", spec.mde},
          {"variance_per_unit", spec.variance_per_unit},
          {"z_alpha", s.z_alpha},
          {"z_power", s.z_power},
          {"unrounded", s.unrounded},
          {"n_per_group", s.n}};
}

Json to_json(const ValidationReport& v) {
  Json j;
  j["group_sizes"] = v.group_sizes;
  j["period_labels"] = v.period_labels;
  j["presence_rates"] = v.presence_rates;
  j["presence_by_group"] = v.presence_by_group;
  j["design"] = v.design ? Json(std::string(to_string(*v.design))) : Json(nullptr);
  j["conforms"] = v.conforms;
  j["nonconformities"] = v.nonconformities;
  j["warnings"] = v.warnings;
  return j;
}

}  // namespace remex
