#include "remex/moments.hpp"

#include "remex/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace remex {

int MomentLayout::slot_period(std::size_t s) const noexcept {
  if (s < static_cast<std::size_t>(period_count)) return first_period + static_cast<int>(s);
  return kTotalPeriod;
}

std::size_t MomentLayout::offset(int period) const {
  if (period == kTotalPeriod) {
    if (!with_total) throw std::out_of_range("layout has no aggregate block");
    return static_cast<std::size_t>(period_count) * block();
  }
  if (period < first_period || period >= first_period + period_count) {
    throw std::out_of_range("period " + std::to_string(period) + " outside layout");
  }
  return static_cast<std::size_t>(period - first_period) * block();
}

// ---------------------------------------------------------------------------

MomentAccumulator::MomentAccumulator(std::size_t dimension)
    : mean_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension))),
      m2_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dimension),
                                static_cast<Eigen::Index>(dimension))),
      delta_(static_cast<Eigen::Index>(dimension)) {}

MomentAccumulator MomentAccumulator::from_state(std::size_t n, Eigen::VectorXd mean,
                                                Eigen::MatrixXd m2) {
  if (m2.rows() != mean.size() || m2.cols() != mean.size()) {
    throw std::invalid_argument("moment state has inconsistent dimensions");
  }
  MomentAccumulator acc(static_cast<std::size_t>(mean.size()));
  acc.n_ = n;
  acc.mean_ = std::move(mean);
  acc.m2_ = std::move(m2);
  return acc;
}

void MomentAccumulator::add(std::span<const double> x) {
  const auto d = mean_.size();
  if (static_cast<Eigen::Index>(x.size()) != d) {
    throw std::logic_error("augmented vector dimension mismatch");
  }
  ++n_;
  const double inv_n = 1.0 / static_cast<double>(n_);
  for (Eigen::Index i = 0; i < d; ++i) {
    delta_(i) = x[static_cast<std::size_t>(i)] - mean_(i);
    mean_(i) += delta_(i) * inv_n;
  }
  // (n-1)/n * delta delta^T keeps the update exactly symmetric.
  const double w = static_cast<double>(n_ - 1) * inv_n;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      m2_(i, j) += delta_(i) * delta_(j) * w;
      m2_(j, i) = m2_(i, j);
    }
  }
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.mean_.size() != mean_.size()) {
    throw std::invalid_argument("cannot merge moment accumulators of different dimension");
  }
  if (other.n_ == 0) return;
  if (n_ == 0) {
    n_ = other.n_;
    mean_ = other.mean_;
    m2_ = other.m2_;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const auto d = mean_.size();
  const double w = na * nb / n;
  for (Eigen::Index i = 0; i < d; ++i) delta_(i) = other.mean_(i) - mean_(i);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      m2_(i, j) += other.m2_(i, j) + delta_(i) * delta_(j) * w;
      m2_(j, i) = m2_(i, j);
    }
  }
  for (Eigen::Index i = 0; i < d; ++i) mean_(i) += delta_(i) * (nb / n);
  n_ += other.n_;
}

Eigen::MatrixXd MomentAccumulator::sample_covariance() const {
  if (n_ < 2) throw std::logic_error("sample covariance needs at least two users");
  return m2_ / static_cast<double>(n_ - 1);
}

// ---------------------------------------------------------------------------

MomentSummary::MomentSummary(MomentLayout layout, int group_count) : layout_(layout) {
  if (group_count < 1) throw std::invalid_argument("moment summary needs at least one group");
  groups_.assign(static_cast<std::size_t>(group_count), MomentAccumulator(layout_.dimension()));
}

MomentSummary MomentSummary::from_groups(MomentLayout layout, std::vector<MomentAccumulator> groups) {
  MomentSummary s(layout, static_cast<int>(groups.size()));
  for (const auto& g : groups) {
    if (g.dimension() != layout.dimension()) {
      throw std::invalid_argument("group accumulator does not match layout dimension");
    }
  }
  s.groups_ = std::move(groups);
  return s;
}

void augment(const MomentLayout& layout, std::span<const PeriodObservation> user_rows,
             std::span<double> out) {
  if (out.size() != layout.dimension()) throw std::logic_error("augment: output size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t b = layout.block();
  bool any = false;
  for (const auto& r : user_rows) {
    if (r.components.size() != layout.components) {
      throw std::logic_error("augment: component count mismatch");
    }
    const std::size_t off = layout.offset(r.period);
    if (!r.present) continue;
    out[off] = 1.0;
    for (std::size_t c = 0; c < layout.components; ++c) out[off + 1 + c] = r.components[c];
    if (layout.with_total && r.period >= 1) {
      const std::size_t tot = layout.offset(kTotalPeriod);
      any = true;
      for (std::size_t c = 0; c < layout.components; ++c) out[tot + 1 + c] += r.components[c];
    }
  }
  if (layout.with_total && any) out[layout.offset(kTotalPeriod)] = 1.0;
  (void)b;
}

void MomentSummary::accumulate(std::span<const PeriodObservation> user_rows) {
  if (user_rows.empty()) throw std::invalid_argument("accumulate: empty row set");
  if (user_rows.size() != static_cast<std::size_t>(layout_.period_count)) {
    throw std::logic_error("accumulate: expected one row per period");
  }
  const int group = user_rows.front().group;
  for (const auto& r : user_rows) {
    if (r.group != group || r.user != user_rows.front().user) {
      throw std::logic_error("accumulate: rows belong to different users or groups");
    }
  }
  std::vector<double> v(layout_.dimension());
  augment(layout_, user_rows, v);
  add(group, v);
}

void MomentSummary::add(int group, std::span<const double> augmented) {
  groups_.at(static_cast<std::size_t>(group)).add(augmented);
}

MomentSummary& MomentSummary::merge(const MomentSummary& other) {
  if (!(other.layout_ == layout_) || other.groups_.size() != groups_.size()) {
    throw std::invalid_argument("cannot merge moment summaries with different dimensions");
  }
  for (std::size_t g = 0; g < groups_.size(); ++g) groups_[g].merge(other.groups_[g]);
  return *this;
}

MomentSummary accumulate(MomentSummary acc, std::span<const PeriodObservation> user_rows) {
  acc.accumulate(user_rows);
  return acc;
}

MomentSummary merge(MomentSummary a, const MomentSummary& b) {
  a.merge(b);
  return a;
}

MomentLayout layout_for(const ExperimentDataset& ds, bool with_total) {
  MomentLayout l;
  l.first_period = ds.first_period();
  l.period_count = ds.period_count();
  l.components = ds.metric().component_count();
  l.with_total = with_total && ds.last_period() >= 1;
  return l;
}

MomentSummary summarize(const ExperimentDataset& ds, bool with_total) {
  MomentSummary acc(layout_for(ds, with_total), ds.group_count());
  std::vector<double> v(acc.layout().dimension());
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    const auto rows = ds.user_rows(u);
    augment(acc.layout(), rows, v);
    acc.add(ds.user_group(u), v);
  }
  return acc;
}

// ---------------------------------------------------------------------------

SmoothFunction ratio_function(std::size_t numerator, std::size_t denominator) {
  return [numerator, denominator](const Eigen::VectorXd& m) {
    const double num = m(static_cast<Eigen::Index>(numerator));
    const double den = m(static_cast<Eigen::Index>(denominator));
    Linearization lin;
    lin.value = num / den;
    lin.gradient = {{numerator, 1.0 / den}, {denominator, -num / (den * den)}};
    return lin;
  };
}

DeltaResult delta_method(const Eigen::VectorXd& mean, const Eigen::MatrixXd& mean_covariance,
                         std::span<const SmoothFunction> functions) {
  const auto k = static_cast<Eigen::Index>(functions.size());
  std::vector<Linearization> lin;
  lin.reserve(functions.size());
  for (const auto& f : functions) lin.push_back(f(mean));

  DeltaResult out;
  out.value.resize(k);
  out.covariance.resize(k, k);
  for (Eigen::Index s = 0; s < k; ++s) {
    out.value(s) = lin[static_cast<std::size_t>(s)].value;
    for (Eigen::Index t = 0; t <= s; ++t) {
      double acc = 0.0;
      for (const auto& [a, ga] : lin[static_cast<std::size_t>(s)].gradient) {
        for (const auto& [b, gb] : lin[static_cast<std::size_t>(t)].gradient) {
          acc += ga * gb * mean_covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
      }
      out.covariance(s, t) = acc;
      out.covariance(t, s) = acc;
    }
  }
  return out;
}

std::size_t GroupMoments::index_of(int period) const {
  auto it = std::find(periods.begin(), periods.end(), period);
  if (it == periods.end()) {
    throw DataError(period == kTotalPeriod ? std::string("no aggregate (total) slot in moments")
                                           : "no period " + std::to_string(period) + " in moments");
  }
  return static_cast<std::size_t>(it - periods.begin());
}

bool GroupMoments::has(int period) const {
  return std::find(periods.begin(), periods.end(), period) != periods.end();
}

namespace {

std::string period_name(int p) {
  return p == kTotalPeriod ? std::string("total (all experiment periods)") : std::to_string(p);
}

}  // namespace

MetricMoments finalize(const MomentSummary& acc, const MetricDef& metric) {
  metric.check();
  const MomentLayout& layout = acc.layout();
  if (layout.components != metric.component_count()) {
    throw std::invalid_argument("metric definition does not match moment layout");
  }
  MetricMoments out;
  out.metric = metric;
  for (int g = 0; g < acc.group_count(); ++g) {
    const MomentAccumulator& a = acc.group(g);
    if (a.count() < 2) {
      throw DegenerateError("group " + std::to_string(g) + " has " + std::to_string(a.count()) +
                                " user(s); at least 2 are needed",
                            layout.first_period);
    }
    std::vector<SmoothFunction> fns;
    GroupMoments gm;
    gm.n = a.count();
    for (std::size_t s = 0; s < layout.slot_count(); ++s) {
      const int period = layout.slot_period(s);
      const std::size_t off = layout.offset(period);
      if (a.mean()(static_cast<Eigen::Index>(off)) == 0.0) {
        throw DegenerateError("group " + std::to_string(g) + " has no present users in period " +
                                  period_name(period),
                              period);
      }
      std::size_t num = off + 1;
      std::size_t den = off;
      if (metric.kind == MetricKind::RatioOfSums) {
        num = off + 1;
        den = off + 2;
        if (a.mean()(static_cast<Eigen::Index>(den)) == 0.0) {
          throw DegenerateError("group " + std::to_string(g) + " has a zero denominator sum in period " +
                                    period_name(period),
                                period);
        }
      }
      fns.push_back(ratio_function(num, den));
      gm.periods.push_back(period);
    }
    const Eigen::MatrixXd mean_cov =
        a.m2() / (static_cast<double>(a.count() - 1) * static_cast<double>(a.count()));
    DeltaResult d = delta_method(a.mean(), mean_cov, fns);
    gm.mean = std::move(d.value);
    gm.covariance = std::move(d.covariance);
    out.groups.push_back(std::move(gm));
  }
  return out;
}

}  // namespace remex
