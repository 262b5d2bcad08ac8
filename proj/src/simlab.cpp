#include "remex/simlab.hpp"

#include "remex/errors.hpp"
#include "remex/inference.hpp"
#include "remex/moments.hpp"
#include "remex/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>

namespace remex {

void SimConfig::check() const {
  if (condition < 1 || condition > 5) {
    throw UsageError("simulation condition must be 1 to 5, got " + std::to_string(condition));
  }
  if (users_per_group < 2) throw UsageError("users_per_group must be at least 2");
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError(std::string(name) + " must be a finite value >= 0");
  };
  nonneg(sigma, "sigma");
  nonneg(sigma_u, "sigma_u");
  nonneg(sigma_delta, "sigma_delta");
  for (double v : {mu, delta, fixed_effect, theta, carryover, delta_shift}) {
    if (!std::isfinite(v)) throw UsageError("simulation parameters must be finite");
  }
  if (!(target_activity >= 0.0 && target_activity <= 1.0)) {
    throw UsageError("target_activity must lie in [0, 1]");
  }
  if (!(max_missing >= 0.0 && max_missing <= 1.0)) throw UsageError("max_missing must lie in [0, 1]");
  if (missingness && !(target_missing_rate > 0.0 && target_missing_rate <= max_missing)) {
    throw UsageError("target_missing_rate must lie in (0, max_missing]");
  }
  if (design_shape(design).experiment_periods != 2) throw UsageError("generator supports two experiment periods");
}

double ActivityModel::activity(double u) const {
  return constant ? constant_p : stats::normal_cdf((u - a) / b);
}

namespace {

/// Quadrature nodes (u, weight) for the user-effect distribution.
struct UserEffectLaw {
  std::vector<double> u;
  std::vector<double> w;
};

UserEffectLaw user_effect_law(const SimConfig& c) {
  UserEffectLaw law;
  if (c.sigma_u == 0.0) {
    law.u = {0.0};
    law.w = {1.0};
    return law;
  }
  if (c.condition == 2) {
    // centred Poisson with variance sigma_u^2
    const double lambda = c.sigma_u * c.sigma_u;
    const auto kmax = static_cast<long>(std::ceil(lambda + 12.0 * std::sqrt(lambda) + 20.0));
    double log_pmf = -lambda;
    for (long k = 0; k <= kmax; ++k) {
      if (k > 0) log_pmf += std::log(lambda) - std::log(static_cast<double>(k));
      law.u.push_back(static_cast<double>(k) - lambda);
      law.w.push_back(std::exp(log_pmf));
    }
    return law;
  }
  // Simpson's rule on the standard normal density over [-9, 9]
  constexpr int kIntervals = 2000;
  constexpr double kLo = -9.0;
  constexpr double kHi = 9.0;
  const double h = (kHi - kLo) / kIntervals;
  const double norm = 1.0 / std::sqrt(2.0 * M_PI);
  for (int i = 0; i <= kIntervals; ++i) {
    const double z = kLo + h * i;
    const double simpson = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    law.u.push_back(c.sigma_u * z);
    law.w.push_back(simpson * h / 3.0 * norm * std::exp(-0.5 * z * z));
  }
  return law;
}

double presence_probability(const SimConfig& c, double p) {
  return c.missingness ? 1.0 - std::min(c.max_missing, 1.0 - p) : 1.0;
}

template <class F>
double expect(const UserEffectLaw& law, F&& f) {
  double s = 0.0;
  double tw = 0.0;
  for (std::size_t i = 0; i < law.u.size(); ++i) {
    s += law.w[i] * f(law.u[i]);
    tw += law.w[i];
  }
  return s / tw;
}

struct Moments3 {
  double mean_p, missing, present_p;
};

Moments3 activity_moments(const SimConfig& c, const UserEffectLaw& law, const ActivityModel& m) {
  double ep = 0.0, eq = 0.0, epq = 0.0;
  double tw = 0.0;
  for (std::size_t i = 0; i < law.u.size(); ++i) {
    const double p = m.activity(law.u[i]);
    const double q = presence_probability(c, p);
    ep += law.w[i] * p;
    eq += law.w[i] * q;
    epq += law.w[i] * p * q;
    tw += law.w[i];
  }
  return {ep / tw, 1.0 - eq / tw, epq / eq};
}

/// Bisection on a monotone function; increasing says whether f grows with x.
double bisect(const std::function<double(double)>& f, double target, double lo, double hi,
              bool increasing, int iterations = 90) {
  for (int i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    const bool above = f(mid) > target;
    if (above == increasing) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

ActivityModel calibrate_activity(const SimConfig& config) {
  config.check();
  const UserEffectLaw law = user_effect_law(config);
  ActivityModel m;
  const double scale = config.sigma_u > 0.0 ? config.sigma_u : 1.0;
  const double span = 60.0 * scale + 60.0;

  if (config.sigma_u == 0.0 || config.target_activity == 1.0 || config.target_activity == 0.0) {
    m.constant = true;
    if (config.missingness && config.target_activity != 1.0 && config.target_activity != 0.0) {
      // a constant activity level can hit only one target; keep the missing rate
      m.constant_p = 1.0 - config.target_missing_rate;
      m.notes.push_back("no user-effect variation: activity fixed by the missing-rate target");
    } else {
      m.constant_p = config.target_activity;
      if (config.missingness) {
        m.notes.push_back("constant activity: missing rate follows from the activity target");
      }
    }
  } else if (!config.missingness) {
    m.b = scale;
    auto mean_p = [&](double a) {
      ActivityModel t = m;
      t.a = a;
      return activity_moments(config, law, t).mean_p;
    };
    m.a = bisect(mean_p, config.target_activity, -span, span, false);
  } else {
    // For each spread b, the offset a fixing the missing rate; then b fixing
    // the mean activity of present users.
    auto solve_a = [&](double b) {
      auto missing = [&](double a) {
        ActivityModel t;
        t.a = a;
        t.b = b;
        return activity_moments(config, law, t).missing;
      };
      return bisect(missing, config.target_missing_rate, -span, span, true);
    };
    auto present_activity = [&](double log_b) {
      ActivityModel t;
      t.b = std::exp(log_b);
      t.a = solve_a(t.b);
      return activity_moments(config, law, t).present_p;
    };
    const double lo = std::log(scale * 1e-4);
    const double hi = std::log(scale * 1e4);
    const double at_lo = present_activity(lo);
    const double at_hi = present_activity(hi);
    if (config.target_activity > at_lo || config.target_activity < at_hi) {
      std::ostringstream os;
      os << "activity target " << config.target_activity << " is unreachable at missing rate "
         << config.target_missing_rate << " (attainable range " << at_hi << " to " << at_lo << ")";
      throw UsageError(os.str());
    }
    const double log_b = bisect(present_activity, config.target_activity, lo, hi, false, 70);
    m.b = std::exp(log_b);
    m.a = solve_a(m.b);
  }
  const Moments3 mom = activity_moments(config, law, m);
  m.mean_activity = mom.mean_p;
  m.missing_rate = mom.missing;
  m.present_activity = mom.present_p;
  return m;
}

std::vector<double> ground_truth(const SimConfig& config, DesignKind kind, EffectScale scale) {
  const ActivityModel act = calibrate_activity(config);
  const UserEffectLaw law = user_effect_law(config);
  const bool random_effect = config.condition >= 3;
  auto q_of = [&](double u) { return presence_probability(config, act.activity(u)); };

  const double eq = expect(law, q_of);
  const double e_any = expect(law, [&](double u) {
    const double q = q_of(u);
    return 1.0 - (1.0 - q) * (1.0 - q);
  });
  const double period_effect =
      config.fixed_effect +
      (random_effect ? config.delta * expect(law, [&](double u) { return act.activity(u) * q_of(u); }) / eq
                     : 0.0);
  const double total_effect = expect(law, [&](double u) {
                                const double q = q_of(u);
                                const double d = config.fixed_effect +
                                                 (random_effect ? config.delta * act.activity(u) : 0.0);
                                return 2.0 * q * d + q * config.delta_shift;
                              }) /
                              e_any;
  const double period_level = config.mu + expect(law, [&](double u) { return u * q_of(u); }) / eq;
  const double total_level =
      expect(law, [&](double u) { return q_of(u) * (2.0 * (config.mu + u) + config.theta); }) / e_any;

  const DesignShape shape = design_shape(kind);
  const bool total = shape.uses_total;
  double base = 1.0;
  if (scale == EffectScale::Relative) {
    base = kind == DesignKind::Cuped ? period_level : (total ? total_level : period_level);
  }

  std::vector<double> out;
  switch (kind) {
    case DesignKind::TTest:
    case DesignKind::Cuped:
    case DesignKind::Cumulative:
      out.push_back(total_effect / base);
      break;
    case DesignKind::ParallelTwoDelta:
    case DesignKind::CrossoverTwoDelta:
      out.push_back(period_effect / base);
      out.push_back((period_effect + config.delta_shift) / base);
      break;
    case DesignKind::ReRandomized:
      out.push_back(period_effect / base);
      out.push_back(config.carryover);
      break;
    default:
      out.push_back(period_effect / base);
      break;
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

struct SimCell {
  int period;
  bool present;
  double value;
  double noise;
};

/// Draws every user in a fixed order and hands each one to visit(group, u, p, cells).
/// Every random quantity is drawn whether or not it is used, so runs that differ
/// only in effect sizes share their random numbers.
template <class Visit>
void simulate_users(const SimConfig& c, const ActivityModel& act, Visit&& visit) {
  const DesignShape shape = design_shape(c.design);
  const bool pre = c.pre_period || shape.requires_pre_period;
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double lambda = c.sigma_u * c.sigma_u;
  std::poisson_distribution<long long> poisson(lambda > 0.0 ? lambda : 1.0);

  std::vector<SimCell> cells;
  for (int g = 0; g < shape.groups; ++g) {
    const auto& sched = shape.schedule[static_cast<std::size_t>(g)];
    const bool tc = sched.size() == 2 && sched[0] && !sched[1];
    for (std::size_t i = 0; i < c.users_per_group; ++i) {
      double u;
      if (c.condition == 2) {
        u = lambda > 0.0 ? static_cast<double>(poisson(rng)) - lambda : 0.0;
      } else {
        u = c.sigma_u * std_normal(rng);
      }
      const double p = act.activity(u);
      const double q = presence_probability(c, p);
      double noise_sd = c.sigma;
      if (c.condition == 4) noise_sd = 2.0 * p;
      if (c.condition == 5) noise_sd = 4.0 * p;

      cells.clear();
      for (int t = pre ? 0 : 1; t <= 2; ++t) {
        const double effect_draw = (c.delta + c.sigma_delta * std_normal(rng)) * p;
        const double eps = noise_sd * std_normal(rng);
        const bool present = unif(rng) < q;
        const bool treated = t >= 1 && sched[static_cast<std::size_t>(t - 1)];
        double x = c.mu + u + eps;
        if (t == 2) x += c.theta;
        if (treated) {
          x += c.fixed_effect;
          if (c.condition >= 3) x += effect_draw;
          if (t == 2) x += c.delta_shift;
        }
        if (tc && t == 2) x += c.carryover;
        cells.push_back({t, present, x, eps});
      }
      visit(g, u, p, cells);
    }
  }
}

std::string user_name(int group, std::size_t i) {
  return "g" + std::to_string(group) + "u" + std::to_string(i);
}

}  // namespace

ExperimentDataset generate(const SimConfig& config) {
  const ActivityModel act = calibrate_activity(config);
  const DesignShape shape = design_shape(config.design);
  const bool pre = config.pre_period || shape.requires_pre_period;
  ExperimentDataset ds(MetricDef::average("value"), shape.groups, pre ? 0 : 1, pre ? 3 : 2);
  ds.set_design(config.design);
  std::size_t counter = 0;
  int last_group = -1;
  simulate_users(config, act, [&](int g, double, double, const std::vector<SimCell>& cells) {
    if (g != last_group) {
      counter = 0;
      last_group = g;
    }
    const auto user = ds.add_user(user_name(g, counter++), g);
    for (const auto& cell : cells) {
      if (cell.present) ds.set_observation(user, cell.period, std::span<const double>(&cell.value, 1));
    }
  });
  return ds;
}

std::vector<SimulatedUser> generate_latents(const SimConfig& config) {
  const ActivityModel act = calibrate_activity(config);
  std::vector<SimulatedUser> out;
  simulate_users(config, act, [&](int g, double u, double p, const std::vector<SimCell>& cells) {
    SimulatedUser s;
    s.group = g;
    s.u = u;
    s.activity = p;
    for (const auto& cell : cells) {
      s.noise.push_back(cell.noise);
      s.present.push_back(cell.present);
    }
    out.push_back(std::move(s));
  });
  return out;
}

// ---------------------------------------------------------------------------

const EstimatorSummary& MonteCarloReport::estimator(std::string_view parameter) const {
  for (const auto& e : estimators) {
    if (e.parameter == parameter) return e;
  }
  throw UsageError("report has no estimator for '" + std::string(parameter) + "'");
}

void MonteCarloReport::write_csv(std::ostream& out) const {
  out << "replication,seed,parameter,estimate,standard_error,ground_truth\n";
  char buf[32];
  auto num = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  };
  for (const auto& r : replications) {
    if (!r.ok) continue;
    for (std::size_t k = 0; k < estimators.size(); ++k) {
      out << r.index << ',' << r.seed << ',' << estimators[k].parameter << ',' << num(r.estimates[k]);
      out << ',' << num(r.standard_errors[k]);
      out << ',' << num(estimators[k].ground_truth) << '\n';
    }
  }
}

namespace {

std::vector<std::size_t> reported_parameters(const DesignModel& model) {
  std::vector<std::size_t> idx = model.effect_parameters();
  if (auto a = model.find_parameter("alpha")) idx.push_back(*a);
  return idx;
}

DesignModel simulation_model(const SimConfig& c, DesignKind kind, EffectScale scale) {
  const bool prefix = c.pre_period && kind != DesignKind::TTest && kind != DesignKind::Cuped;
  return build_model(kind, scale, prefix);
}

}  // namespace

MonteCarloReport run_monte_carlo(const SimConfig& config, DesignKind kind, std::size_t replications,
                                 EffectScale scale) {
  if (replications < 2) throw UsageError("Monte-Carlo needs at least 2 replications");
  SimConfig base = config;
  if (design_shape(base.design).groups != design_shape(kind).groups ||
      design_shape(base.design).schedule != design_shape(kind).schedule) {
    base.design = kind;
  }
  base.check();

  MonteCarloReport rep;
  rep.config = config;
  rep.design = kind;
  rep.scale = scale;
  rep.requested = replications;
  rep.activity = calibrate_activity(base);

  const DesignModel model = simulation_model(base, kind, scale);
  const auto params = reported_parameters(model);
  const std::vector<double> truth = ground_truth(base, kind, scale);
  const DesignShape shape = design_shape(base.design);
  const bool pre = base.pre_period || shape.requires_pre_period;
  MomentLayout layout;
  layout.first_period = pre ? 0 : 1;
  layout.period_count = pre ? 3 : 2;
  layout.components = 1;
  layout.with_total = true;
  const MetricDef metric = MetricDef::average("value");

  std::vector<double> aug(layout.dimension());
  std::vector<PeriodObservation> rows;
  std::vector<double> values(3);
  std::string first_error;

  for (std::size_t k = 0; k < replications; ++k) {
    SimConfig c = base;
    c.seed = splitmix64(config.seed + k);
    Replication r;
    r.index = k;
    r.seed = c.seed;
    try {
      MomentSummary summary(layout, shape.groups);
      simulate_users(c, rep.activity, [&](int g, double, double, const std::vector<SimCell>& cells) {
        rows.clear();
        for (std::size_t t = 0; t < cells.size(); ++t) {
          values[t] = cells[t].present ? cells[t].value : 0.0;
          PeriodObservation o;
          o.group = g;
          o.period = cells[t].period;
          o.present = cells[t].present;
          o.components = std::span<const double>(&values[t], 1);
          rows.push_back(o);
        }
        augment(layout, rows, aug);
        summary.add(g, aug);
      });
      const FitResult f = fit(model, finalize(summary, metric));
      for (std::size_t p : params) {
        r.estimates.push_back(f.estimates(static_cast<Eigen::Index>(p)));
        r.standard_errors.push_back(f.se(static_cast<Eigen::Index>(p)));
      }
    } catch (const DataError& e) {
      r.ok = false;
      r.error = e.what();
    } catch (const IdentifiabilityError& e) {
      r.ok = false;
      r.error = e.what();
    } catch (const ConvergenceError& e) {
      r.ok = false;
      r.error = e.what();
    }
    if (!r.ok) {
      ++rep.failed;
      if (first_error.empty()) first_error = "replication " + std::to_string(k) + ": " + r.error;
    }
    rep.replications.push_back(std::move(r));
  }
  if (rep.failed * 100 > replications) {
    throw DataError(std::to_string(rep.failed) + " of " + std::to_string(replications) +
                    " replications failed; first failure at " + first_error);
  }

  const double z = stats::normal_quantile(0.975);
  for (std::size_t j = 0; j < params.size(); ++j) {
    EstimatorSummary s;
    s.parameter = model.parameter_names()[params[j]];
    s.ground_truth = truth[j];
    double sum = 0.0, fisher = 0.0;
    std::size_t n = 0, covered = 0;
    for (const auto& r : rep.replications) {
      if (!r.ok) continue;
      ++n;
      sum += r.estimates[j];
      fisher += r.standard_errors[j] * r.standard_errors[j];
      if (std::fabs(r.estimates[j] - s.ground_truth) <= z * r.standard_errors[j]) ++covered;
    }
    s.replications = n;
    s.mean_estimate = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : rep.replications) {
      if (!r.ok) continue;
      const double d = r.estimates[j] - s.mean_estimate;
      ss += d * d;
    }
    s.empirical_variance = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
    s.mc_standard_error = std::sqrt(s.empirical_variance / static_cast<double>(n));
    s.bias = s.mean_estimate - s.ground_truth;
    s.mean_fisher_variance = fisher / static_cast<double>(n);
    s.variance_ratio = s.mean_fisher_variance > 0.0 ? s.empirical_variance / s.mean_fisher_variance : 0.0;
    s.coverage = static_cast<double>(covered) / static_cast<double>(n);
    rep.estimators.push_back(s);
  }
  return rep;
}

// ---------------------------------------------------------------------------

BootstrapResult bootstrap(const ExperimentDataset& ds, DesignKind kind, std::size_t resamples,
                          std::uint64_t seed, EffectScale scale, bool pre_period) {
  if (resamples < 100) throw UsageError("bootstrap needs at least 100 resamples");
  const DesignModel model = build_model(kind, scale, pre_period);
  if (model.effect_parameters().empty()) throw UsageError("model has no effect parameter");
  const auto e = static_cast<Eigen::Index>(model.effect_parameters().front());

  const MomentSummary full = summarize(ds);
  const MomentLayout layout = full.layout();
  const FitResult reference = fit(model, finalize(full, ds.metric()));

  // augmented vectors of every user, grouped
  std::vector<std::vector<double>> by_group(static_cast<std::size_t>(ds.group_count()));
  const std::size_t dim = layout.dimension();
  std::vector<double> aug(dim);
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    augment(layout, ds.user_rows(u), aug);
    auto& g = by_group[static_cast<std::size_t>(ds.user_group(u))];
    g.insert(g.end(), aug.begin(), aug.end());
  }

  std::mt19937_64 rng(seed);
  std::vector<double> estimates;
  estimates.reserve(resamples);
  std::size_t skipped = 0;
  for (std::size_t k = 0; k < resamples; ++k) {
    MomentSummary acc(layout, ds.group_count());
    for (int g = 0; g < ds.group_count(); ++g) {
      const auto& pool = by_group[static_cast<std::size_t>(g)];
      const std::size_t n = pool.size() / dim;
      if (n == 0) continue;
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = pick(rng);
        acc.add(g, std::span<const double>(pool.data() + i * dim, dim));
      }
    }
    try {
      const FitResult f = fit(model, finalize(acc, ds.metric()));
      estimates.push_back(f.estimates(e));
    } catch (const DataError&) {
      ++skipped;
    } catch (const IdentifiabilityError&) {
      ++skipped;
    } catch (const ConvergenceError&) {
      ++skipped;
    }
  }
  if (skipped * 100 > resamples) {
    throw DataError(std::to_string(skipped) + " of " + std::to_string(resamples) +
                    " bootstrap resamples were degenerate");
  }

  BootstrapResult out;
  out.parameter = model.parameter_names()[static_cast<std::size_t>(e)];
  out.resamples = estimates.size();
  out.skipped = skipped;
  out.estimate = reference.estimates(e);
  double mean = 0.0;
  for (double v : estimates) mean += v;
  mean /= static_cast<double>(estimates.size());
  double ss = 0.0;
  for (double v : estimates) ss += (v - mean) * (v - mean);
  out.bootstrap_variance = ss / static_cast<double>(estimates.size() - 1);
  out.fisher_variance = reference.covariance(e, e);
  out.ratio = out.fisher_variance > 0.0 ? out.bootstrap_variance / out.fisher_variance : 0.0;
  return out;
}

}  // namespace remex
