#include "remex/designs.hpp"

#include "remex/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <utility>

namespace remex {

namespace {

struct KindName {
  DesignKind kind;
  std::string_view name;
};

constexpr std::array<KindName, 9> kKindNames{{
    {DesignKind::TTest, "ttest"},
    {DesignKind::Cuped, "cuped"},
    {DesignKind::Parallel, "parallel"},
    {DesignKind::ParallelTwoDelta, "parallel-two-delta"},
    {DesignKind::Cumulative, "cumulative"},
    {DesignKind::Crossover, "crossover"},
    {DesignKind::CrossoverTwoDelta, "crossover-two-delta"},
    {DesignKind::ReRandomized, "rerandomized"},
    {DesignKind::ReRandomizedNoCarryover, "rerandomized-no-carryover"},
}};

}  // namespace

std::string_view to_string(DesignKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

std::string_view to_string(EffectScale scale) {
  return scale == EffectScale::Absolute ? "absolute" : "relative";
}

DesignKind parse_design_kind(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name) return kn.kind;
  }
  throw UsageError("unknown design kind '" + std::string(name) + "'");
}

EffectScale parse_effect_scale(std::string_view name) {
  if (name == "absolute") return EffectScale::Absolute;
  if (name == "relative") return EffectScale::Relative;
  throw UsageError("unknown effect scale '" + std::string(name) + "'");
}

std::string_view family_name(DesignKind kind) {
  switch (kind) {
    case DesignKind::ParallelTwoDelta:
      return "parallel";
    case DesignKind::CrossoverTwoDelta:
      return "crossover";
    case DesignKind::ReRandomizedNoCarryover:
      return "rerandomized";
    default:
      return to_string(kind);
  }
}

DesignShape design_shape(DesignKind kind) {
  DesignShape s;
  switch (kind) {
    case DesignKind::TTest:
      s.uses_total = true;
      s.schedule = {{true, true}, {false, false}};
      break;
    case DesignKind::Cuped:
      s.uses_total = true;
      s.requires_pre_period = true;
      s.schedule = {{true, true}, {false, false}};
      break;
    case DesignKind::Cumulative:
      s.uses_total = true;
      s.additive_only = true;
      s.schedule = {{true, true}, {false, false}};
      break;
    case DesignKind::Parallel:
    case DesignKind::ParallelTwoDelta:
      s.schedule = {{true, true}, {false, false}};
      break;
    case DesignKind::Crossover:
    case DesignKind::CrossoverTwoDelta:
      s.schedule = {{true, false}, {false, true}};
      break;
    case DesignKind::ReRandomized:
    case DesignKind::ReRandomizedNoCarryover:
      s.groups = 4;
      s.schedule = {{false, false}, {false, true}, {true, false}, {true, true}};
      break;
  }
  return s;
}

std::optional<DesignKind> two_delta_variant(DesignKind kind) {
  switch (kind) {
    case DesignKind::Parallel:
      return DesignKind::ParallelTwoDelta;
    case DesignKind::Crossover:
      return DesignKind::CrossoverTwoDelta;
    default:
      return std::nullopt;
  }
}

// ---------------------------------------------------------------------------

class ModelBuilder {
 public:
  struct Term {
    const char* name;
    double coef;
  };

  ModelBuilder(DesignKind kind, EffectScale scale, bool pre, std::vector<std::string> names)
      : kind_(kind), scale_(scale), pre_(pre), names_(std::move(names)) {
    if (pre_) names_.emplace_back("eta");
  }

  /// Adds one mean entry: the listed linear terms plus, optionally, a treatment
  /// effect which is additive on the absolute scale and multiplies the entry's
  /// mu coefficient on the relative scale.
  ModelBuilder& entry(Cell cell, std::initializer_list<Term> terms, const char* effect = nullptr) {
    Entry e;
    e.cell = cell;
    double mu_coef = 0.0;
    for (const auto& t : terms) {
      e.linear.emplace_back(index(t.name), t.coef);
      if (std::string_view(t.name) == "mu") mu_coef = t.coef;
    }
    if (effect != nullptr) {
      const std::size_t k = index(effect);
      if (scale_ == EffectScale::Absolute) {
        e.linear.emplace_back(k, 1.0);
      } else {
        e.bilinear.push_back({index("mu"), k, mu_coef});
      }
    }
    entries_.push_back(std::move(e));
    return *this;
  }

  ModelBuilder& effects(std::initializer_list<const char*> names) {
    for (const char* n : names) effects_.push_back(index(n));
    return *this;
  }

  ModelBuilder& pin(const char* name) {
    pinned_.push_back(index(name));
    return *this;
  }

  ModelBuilder& baseline_coefficient(double k) {
    baseline_coef_ = k;
    return *this;
  }

  DesignModel build() {
    std::vector<Entry> ordered;
    if (pre_) {
      std::vector<int> seen;
      for (const auto& e : entries_) {
        if (std::find(seen.begin(), seen.end(), e.cell.group) == seen.end()) {
          seen.push_back(e.cell.group);
          Entry base;
          base.cell = {e.cell.group, kPrePeriod};
          base.linear = {{index("mu"), 1.0}, {index("eta"), 1.0}};
          ordered.push_back(std::move(base));
        }
        ordered.push_back(e);
      }
    } else {
      ordered = entries_;
    }

    DesignModel m;
    m.kind_ = kind_;
    m.scale_ = scale_;
    m.pre_period_ = pre_;
    m.names_ = names_;
    m.linear_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ordered.size()),
                                      static_cast<Eigen::Index>(names_.size()));
    m.bilinear_.resize(ordered.size());
    for (std::size_t r = 0; r < ordered.size(); ++r) {
      m.layout_.push_back(ordered[r].cell);
      for (const auto& [c, v] : ordered[r].linear) {
        m.linear_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += v;
      }
      for (const auto& b : ordered[r].bilinear) {
        m.bilinear_[r].push_back({b.i, b.j, b.coef});
      }
    }
    m.pinned_.assign(names_.size(), false);
    for (auto p : pinned_) m.pinned_[p] = true;
    m.effects_ = effects_;
    m.baseline_coef_ = baseline_coef_;
    return m;
  }

 private:
  struct Entry {
    Cell cell;
    std::vector<std::pair<std::size_t, double>> linear;
    struct B {
      std::size_t i, j;
      double coef;
    };
    std::vector<B> bilinear;
  };

  std::size_t index(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::logic_error("model builder: unknown parameter");
    return static_cast<std::size_t>(it - names_.begin());
  }

  DesignKind kind_;
  EffectScale scale_;
  bool pre_;
  std::vector<std::string> names_;
  std::vector<Entry> entries_;
  std::vector<std::size_t> effects_;
  std::vector<std::size_t> pinned_;
  double baseline_coef_ = 1.0;
};

DesignModel build_model(DesignKind kind, EffectScale scale, bool pre_period) {
  using enum DesignKind;
  if (pre_period && (kind == TTest || kind == Cuped)) {
    throw UsageError(kind == TTest
                         ? "ttest with a pre-experiment period is the cuped design"
                         : "cuped already includes the pre-experiment period");
  }

  // Group indices: no-swap designs 0 = treatment, 1 = control; crossover
  // 0 = TC, 1 = CT; re-randomized 0 = CC, 1 = CT, 2 = TC, 3 = TT.
  switch (kind) {
    case TTest:
      return ModelBuilder(kind, scale, false, {"mu", "delta"})
          .entry({1, kTotalPeriod}, {{"mu", 1}})
          .entry({0, kTotalPeriod}, {{"mu", 1}}, "delta")
          .effects({"delta"})
          .build();
    case Cuped:
      return ModelBuilder(kind, scale, false, {"mu", "theta", "delta"})
          .entry({1, kPrePeriod}, {{"mu", 1}})
          .entry({1, kTotalPeriod}, {{"mu", 1}, {"theta", 1}})
          .entry({0, kPrePeriod}, {{"mu", 1}})
          .entry({0, kTotalPeriod}, {{"mu", 1}, {"theta", 1}}, "delta")
          .effects({"delta"})
          .build();
    case Parallel:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}})
          .entry({0, 1}, {{"mu", 1}}, "delta")
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .effects({"delta"})
          .build();
    case ParallelTwoDelta:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta1", "delta2"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}})
          .entry({0, 1}, {{"mu", 1}}, "delta1")
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}}, "delta2")
          .effects({"delta1", "delta2"})
          .build();
    case Cumulative:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta_total"})
          .entry({1, kTotalPeriod}, {{"mu", 2}, {"theta", 1}})
          .entry({0, kTotalPeriod}, {{"mu", 2}, {"theta", 1}}, "delta_total")
          .effects({"delta_total"})
          .pin("theta")
          .baseline_coefficient(2.0)
          .build();
    case Crossover:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .entry({0, 1}, {{"mu", 1}}, "delta")
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}})
          .effects({"delta"})
          .build();
    case CrossoverTwoDelta:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta1", "delta2"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}}, "delta2")
          .entry({0, 1}, {{"mu", 1}}, "delta1")
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}})
          .effects({"delta1", "delta2"})
          .build();
    case ReRandomized:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta", "alpha"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .entry({2, 1}, {{"mu", 1}}, "delta")
          .entry({2, 2}, {{"mu", 1}, {"theta", 1}, {"alpha", 1}})
          .entry({0, 1}, {{"mu", 1}})
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}})
          .entry({3, 1}, {{"mu", 1}}, "delta")
          .entry({3, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .effects({"delta"})
          .build();
    case ReRandomizedNoCarryover:
      return ModelBuilder(kind, scale, pre_period, {"mu", "theta", "delta"})
          .entry({1, 1}, {{"mu", 1}})
          .entry({1, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .entry({2, 1}, {{"mu", 1}}, "delta")
          .entry({2, 2}, {{"mu", 1}, {"theta", 1}})
          .entry({0, 1}, {{"mu", 1}})
          .entry({0, 2}, {{"mu", 1}, {"theta", 1}})
          .entry({3, 1}, {{"mu", 1}}, "delta")
          .entry({3, 2}, {{"mu", 1}, {"theta", 1}}, "delta")
          .effects({"delta"})
          .build();
  }
  throw UsageError("unknown design kind");
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> DesignModel::find_parameter(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t DesignModel::parameter_index(std::string_view name) const {
  if (auto i = find_parameter(name)) return *i;
  throw UsageError("model " + label() + " has no parameter '" + std::string(name) + "'");
}

void DesignModel::check_lambda(const Eigen::VectorXd& lambda) const {
  if (static_cast<std::size_t>(lambda.size()) != names_.size()) {
    throw UsageError("parameter vector has length " + std::to_string(lambda.size()) +
                     ", model " + label() + " expects " + std::to_string(names_.size()));
  }
}

Eigen::VectorXd DesignModel::mean_vector(const Eigen::VectorXd& lambda) const {
  check_lambda(lambda);
  Eigen::VectorXd beta = linear_ * lambda;
  for (std::size_t r = 0; r < bilinear_.size(); ++r) {
    for (const auto& b : bilinear_[r]) {
      beta(static_cast<Eigen::Index>(r)) += b.coef * lambda(static_cast<Eigen::Index>(b.i)) *
                                            lambda(static_cast<Eigen::Index>(b.j));
    }
  }
  return beta;
}

Eigen::MatrixXd DesignModel::jacobian(const Eigen::VectorXd& lambda) const {
  check_lambda(lambda);
  Eigen::MatrixXd jac = linear_;
  for (std::size_t r = 0; r < bilinear_.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    for (const auto& b : bilinear_[r]) {
      const auto i = static_cast<Eigen::Index>(b.i);
      const auto j = static_cast<Eigen::Index>(b.j);
      jac(row, i) += b.coef * lambda(j);
      jac(row, j) += b.coef * lambda(i);
    }
  }
  return jac;
}

std::string DesignModel::describe_entry(std::size_t i) const {
  std::ostringstream os;
  bool first = true;
  auto emit = [&](double coef, const std::string& body) {
    if (!first) os << (coef < 0 ? " - " : " + ");
    else if (coef < 0) os << "-";
    const double a = std::fabs(coef);
    if (a != 1.0) os << a << "*";
    os << body;
    first = false;
  };
  const auto r = static_cast<Eigen::Index>(i);
  for (Eigen::Index c = 0; c < linear_.cols(); ++c) {
    if (linear_(r, c) != 0.0) emit(linear_(r, c), names_[static_cast<std::size_t>(c)]);
  }
  for (const auto& b : bilinear_[i]) emit(b.coef, names_[b.i] + "*" + names_[b.j]);
  return first ? std::string("0") : os.str();
}

std::string DesignModel::label() const {
  std::string s(to_string(kind_));
  s += "/";
  s += to_string(scale_);
  if (pre_period_) s += "+pre";
  return s;
}

}  // namespace remex
