#pragma once

#include "remex/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace remex {

/// Dimension bookkeeping of the augmented per-user vector
/// (I_t, X_t1, ..., X_tC) for every period t, optionally followed by one
/// aggregate block (I_any, sum_t X_t1, ...) over the experiment periods.
struct MomentLayout {
  int first_period = 1;
  int period_count = 2;
  std::size_t components = 1;
  bool with_total = true;

  std::size_t block() const noexcept { return 1 + components; }
  std::size_t slot_count() const noexcept {
    return static_cast<std::size_t>(period_count) + (with_total ? 1 : 0);
  }
  std::size_t dimension() const noexcept { return slot_count() * block(); }
  /// Period label of slot s (kTotalPeriod for the aggregate block).
  int slot_period(std::size_t s) const noexcept;
  /// Offset of a period's (or the aggregate's) block in the augmented vector.
  std::size_t offset(int period) const;

  friend bool operator==(const MomentLayout&, const MomentLayout&) = default;
};

/// Streaming mean and centred cross-product accumulator for one group.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dimension = 0);

  void add(std::span<const double> x);
  void merge(const MomentAccumulator& other);

  std::size_t count() const noexcept { return n_; }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  /// Sum of centred cross-products, sum_j (x_j - mean)(x_j - mean)^T.
  const Eigen::MatrixXd& m2() const noexcept { return m2_; }
  Eigen::VectorXd sums() const { return mean_ * static_cast<double>(n_); }
  /// Sample covariance of the per-user vectors (n - 1 denominator).
  Eigen::MatrixXd sample_covariance() const;

  static MomentAccumulator from_state(std::size_t n, Eigen::VectorXd mean, Eigen::MatrixXd m2);

 private:
  std::size_t n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  Eigen::VectorXd delta_;
};

/// Mergeable one-pass summary of augmented per-user vectors, one accumulator
/// per sequence group. Users are the independent unit: each contributes one
/// vector covering all of its periods.
class MomentSummary {
 public:
  MomentSummary(MomentLayout layout, int group_count);

  const MomentLayout& layout() const noexcept { return layout_; }
  int group_count() const noexcept { return static_cast<int>(groups_.size()); }
  const MomentAccumulator& group(int g) const { return groups_.at(static_cast<std::size_t>(g)); }

  /// Adds one user, given all of that user's period rows (absences included).
  void accumulate(std::span<const PeriodObservation> user_rows);
  /// Adds one pre-built augmented vector to group g.
  void add(int group, std::span<const double> augmented);

  MomentSummary& merge(const MomentSummary& other);

  static MomentSummary from_groups(MomentLayout layout, std::vector<MomentAccumulator> groups);

 private:
  MomentLayout layout_;
  std::vector<MomentAccumulator> groups_;
};

/// Functional form of accumulate: returns acc with the user's vector added.
MomentSummary accumulate(MomentSummary acc, std::span<const PeriodObservation> user_rows);
/// Functional form of merge.
MomentSummary merge(MomentSummary a, const MomentSummary& b);

MomentLayout layout_for(const ExperimentDataset& ds, bool with_total = true);

/// Writes the augmented vector of one user into out (size layout.dimension()).
void augment(const MomentLayout& layout, std::span<const PeriodObservation> user_rows,
             std::span<double> out);

/// Single pass over a dataset.
MomentSummary summarize(const ExperimentDataset& ds, bool with_total = true);

/// Scalar function of the augmented mean vector together with its gradient,
/// stored sparsely as (index, partial) pairs.
struct Linearization {
  double value = 0.0;
  std::vector<std::pair<std::size_t, double>> gradient;
};
using SmoothFunction = std::function<Linearization(const Eigen::VectorXd&)>;

/// numerator / denominator of two augmented means; the shipped delta-method instance.
SmoothFunction ratio_function(std::size_t numerator, std::size_t denominator);

/// Multivariate delta method: values f_k(mean) and covariance G cov G^T.
struct DeltaResult {
  Eigen::VectorXd value;
  Eigen::MatrixXd covariance;
};
DeltaResult delta_method(const Eigen::VectorXd& mean, const Eigen::MatrixXd& mean_covariance,
                         std::span<const SmoothFunction> functions);

/// Per-group metric means by period slot and the covariance of those means.
struct GroupMoments {
  std::size_t n = 0;
  std::vector<int> periods;  ///< slot labels, kTotalPeriod for the aggregate
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  std::size_t index_of(int period) const;
  bool has(int period) const;
};

/// Finalized moments of the metric; groups are independent by randomization.
struct MetricMoments {
  MetricDef metric;
  std::vector<GroupMoments> groups;
};

/// Delta-method finalization. Per slot the metric is sum X / sum I for a
/// simple average and sum num / sum den for a ratio of sums.
MetricMoments finalize(const MomentSummary& acc, const MetricDef& metric);

}  // namespace remex
