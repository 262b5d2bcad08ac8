#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace remex {

enum class DesignKind {
  TTest,
  Cuped,
  Parallel,
  ParallelTwoDelta,
  Cumulative,
  Crossover,
  CrossoverTwoDelta,
  ReRandomized,
  ReRandomizedNoCarryover,
};

enum class EffectScale { Absolute, Relative };

/// Period label of the aggregate slot: per-user totals over every experiment
/// period (label >= 1), with presence meaning "present in any of them".
inline constexpr int kTotalPeriod = -1;

/// Period label of the pre-experiment baseline.
inline constexpr int kPrePeriod = 0;

/// One entry of the stacked mean vector: which sequence group and which period slot.
struct Cell {
  int group = 0;
  int period = 1;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Groups x periods shape a design expects from the data, plus the
/// treatment schedule of each sequence group.
struct DesignShape {
  int groups = 2;
  int experiment_periods = 2;
  bool requires_pre_period = false;
  bool uses_total = false;  ///< fitted on the aggregate slot rather than per period
  bool additive_only = false;
  /// schedule[g][k]: group g is treated in experiment period k+1.
  std::vector<std::vector<bool>> schedule;
};

std::string_view to_string(DesignKind kind);
std::string_view to_string(EffectScale scale);
DesignKind parse_design_kind(std::string_view name);
EffectScale parse_effect_scale(std::string_view name);

/// Family name used on the command line and in dataset labels
/// (e.g. CrossoverTwoDelta -> "crossover").
std::string_view family_name(DesignKind kind);

DesignShape design_shape(DesignKind kind);

/// Parametric mean model beta(lambda) over the stacked group x period cells.
///
/// Every entry is affine in lambda plus optional bilinear mu*delta terms; the
/// latter appear only on the relative scale where an additive delta becomes a
/// multiplicative mu(1 + delta).
class DesignModel {
 public:
  DesignKind kind() const noexcept { return kind_; }
  EffectScale scale() const noexcept { return scale_; }
  bool has_pre_period() const noexcept { return pre_period_; }

  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::size_t parameter_count() const noexcept { return names_.size(); }
  std::optional<std::size_t> find_parameter(std::string_view name) const;
  std::size_t parameter_index(std::string_view name) const;

  const std::vector<Cell>& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return layout_.size(); }

  /// Parameters held at zero during fitting (only Cumulative's theta, which is
  /// confounded with mu once the periods are summed).
  const std::vector<bool>& pinned() const noexcept { return pinned_; }

  /// Treatment-effect parameters (delta, delta1/delta2 or delta_total).
  const std::vector<std::size_t>& effect_parameters() const noexcept { return effects_; }

  /// Multiplier k such that the control baseline of an effect cell is k*mu
  /// (2 for Cumulative, 1 otherwise); relative effect = delta / (k mu).
  double effect_baseline_coefficient() const noexcept { return baseline_coef_; }

  Eigen::VectorXd mean_vector(const Eigen::VectorXd& lambda) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& lambda) const;

  /// Symbolic form of entry i, e.g. "mu + theta + delta".
  std::string describe_entry(std::size_t i) const;
  std::string label() const;

 private:
  friend class ModelBuilder;
  struct Bilinear {
    std::size_t i, j;
    double coef;
  };

  void check_lambda(const Eigen::VectorXd& lambda) const;

  DesignKind kind_ = DesignKind::TTest;
  EffectScale scale_ = EffectScale::Absolute;
  bool pre_period_ = false;
  std::vector<std::string> names_;
  std::vector<Cell> layout_;
  Eigen::MatrixXd linear_;
  std::vector<std::vector<Bilinear>> bilinear_;
  std::vector<bool> pinned_;
  std::vector<std::size_t> effects_;
  double baseline_coef_ = 1.0;
};

/// Builds the mean model of a design. With pre_period, every group gains a
/// leading baseline cell with mean mu + eta (all kinds except TTest and Cuped,
/// which either cannot take it or already include it).
DesignModel build_model(DesignKind kind, EffectScale scale, bool pre_period = false);

/// Two-delta variant used to test effect equivalence across periods, if any.
std::optional<DesignKind> two_delta_variant(DesignKind kind);

}  // namespace remex
