#pragma once

#include "remex/designs.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace remex {

enum class MetricKind { SimpleAverage, RatioOfSums };

/// How a period's metric is formed from per-user components.
struct MetricDef {
  MetricKind kind = MetricKind::SimpleAverage;
  std::vector<std::string> component_names{"value"};

  static MetricDef average(std::string column);
  static MetricDef ratio(std::string numerator, std::string denominator);

  /// Parses "average:<col>" or "ratio:<num>/<den>".
  static MetricDef parse(std::string_view text);

  std::size_t component_count() const noexcept { return component_names.size(); }
  /// Per-user values can be summed across periods (simple averages only).
  bool additive() const noexcept { return kind == MetricKind::SimpleAverage; }
  std::string to_string() const;

  /// Throws DataError unless the component count matches the kind.
  void check() const;
};

/// One user's measurement in one period. Absent users carry zero components.
struct PeriodObservation {
  std::string_view user_id;
  std::uint32_t user = 0;
  int group = 0;
  int period = 0;
  bool present = false;
  std::span<const double> components;
};

/// Canonical in-memory experiment log: every user has exactly one row per
/// period, absences synthesized with present = false and zero components.
///
/// Periods are labelled first_period .. first_period + period_count - 1, where
/// label 0 is the pre-experiment baseline. Rows of one user are contiguous.
/// Immutable once built; safe to share across threads for reading.
class ExperimentDataset {
 public:
  ExperimentDataset(MetricDef metric, int group_count, int first_period, int period_count);

  const MetricDef& metric() const noexcept { return metric_; }
  int group_count() const noexcept { return group_count_; }
  int first_period() const noexcept { return first_period_; }
  int period_count() const noexcept { return period_count_; }
  int last_period() const noexcept { return first_period_ + period_count_ - 1; }
  bool has_pre_period() const noexcept { return first_period_ == kPrePeriod; }

  std::optional<DesignKind> design() const noexcept { return design_; }
  void set_design(std::optional<DesignKind> kind) { design_ = kind; }

  std::size_t user_count() const noexcept { return ids_.size(); }
  std::size_t row_count() const noexcept { return ids_.size() * static_cast<std::size_t>(period_count_); }

  /// Appends a user with every period absent; returns its dense index.
  std::uint32_t add_user(std::string id, int group);
  /// Records the user's components for one period and marks it present.
  void set_observation(std::uint32_t user, int period, std::span<const double> components);

  std::string_view user_id(std::uint32_t user) const { return ids_.at(user); }
  int user_group(std::uint32_t user) const { return groups_.at(user); }
  bool present(std::uint32_t user, int period) const;
  std::span<const double> components(std::uint32_t user, int period) const;

  PeriodObservation row(std::size_t i) const;
  std::vector<PeriodObservation> user_rows(std::uint32_t user) const;

 private:
  std::size_t slot(std::uint32_t user, int period) const;

  MetricDef metric_;
  int group_count_;
  int first_period_;
  int period_count_;
  std::optional<DesignKind> design_;
  std::vector<std::string> ids_;
  std::vector<int> groups_;
  std::vector<std::uint8_t> present_;
  std::vector<double> values_;
};

/// Column mapping for the delimited-text input.
struct CsvSchema {
  std::string user_column = "user_id";
  std::string group_column = "group";
  std::string period_column = "period";
  /// Optional explicit 0/1 presence column; rows imply presence otherwise.
  std::optional<std::string> present_column;
  MetricDef metric;
  char delimiter = ',';
  /// Declared shape; inferred from the observed labels when unset.
  std::optional<int> group_count;
  std::optional<int> first_period;
  std::optional<int> period_count;
  std::optional<DesignKind> design;
};

ExperimentDataset parse_dataset(std::istream& source, const CsvSchema& schema);
ExperimentDataset parse_dataset_file(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes present rows only, in the input schema (absence by omission).
void write_csv(std::ostream& out, const ExperimentDataset& ds);

struct ValidationReport {
  std::vector<std::size_t> group_sizes;
  std::vector<int> period_labels;
  /// presence_rates[k]: share of users present in period_labels[k].
  std::vector<double> presence_rates;
  /// presence_by_group[g][k]
  std::vector<std::vector<double>> presence_by_group;
  std::optional<DesignKind> design;
  bool conforms = true;
  std::vector<std::string> nonconformities;
  std::vector<std::string> warnings;
};

/// Summarizes group sizes, presence rates and conformance with the declared
/// (or given) design. Group imbalance is a warning, never an error.
ValidationReport validate(const ExperimentDataset& ds,
                          std::optional<DesignKind> design = std::nullopt,
                          bool expect_pre_period = false);

}  // namespace remex
