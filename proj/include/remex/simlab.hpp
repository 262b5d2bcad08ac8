#pragma once

#include "remex/dataset.hpp"
#include "remex/designs.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace remex {

/// Synthetic repeated-measures generator:
///   X_ij = mu + theta [j = 2] + u_i + d_ij + e_ij
/// with user effect u_i, treatment effect d_ij and noise e_ij as set by the
/// condition (1 to 5), and per-period absence driven by the activity level
/// p_i = Phi((u_i - a) / b) of each user.
struct SimConfig {
  std::size_t users_per_group = 2000;
  int condition = 1;
  /// Sequence-group structure of the generated data (schedule of the design).
  DesignKind design = DesignKind::Crossover;
  /// Also generate an untreated pre-experiment period labelled 0.
  bool pre_period = false;

  double mu = 0.0;
  double sigma = 4.0;
  double sigma_u = 2.0;
  double delta = 10.0;
  double sigma_delta = 0.34641016151377546;  // 0.1 * sqrt(12)

  /// Mean activity among present users, E[p q] / E[q] with q = P(present | p).
  /// Without missingness this is simply E[p].
  double target_activity = 0.66;
  bool missingness = true;
  double target_missing_rate = 0.5;
  /// Cap on the per-period miss probability min(max_missing, 1 - p).
  double max_missing = 0.9;

  /// Constant additive effect on every treated cell, in any condition.
  double fixed_effect = 0.0;
  double theta = 0.0;
  /// Added in period 2 to users treated in period 1 only (the TC sequence).
  double carryover = 0.0;
  /// Extra effect on treated cells of period 2 (delta2 = delta1 + shift).
  double delta_shift = 0.0;

  std::uint64_t seed = 1;

  void check() const;
};

/// Calibrated activity model and the moments it implies.
struct ActivityModel {
  double a = 0.0;
  double b = 1.0;
  bool constant = false;  ///< p_i does not vary across users
  double constant_p = 1.0;
  double mean_activity = 0.0;     ///< E[p]
  double present_activity = 0.0;  ///< E[p q] / E[q]
  double missing_rate = 0.0;      ///< E[1 - q]
  std::vector<std::string> notes;

  double activity(double u) const;
};

ActivityModel calibrate_activity(const SimConfig& config);

/// Expected value of each effect parameter of build_model(kind, scale) under
/// the generator, ordered like DesignModel::effect_parameters(). For the
/// re-randomized design the carryover truth is appended.
std::vector<double> ground_truth(const SimConfig& config, DesignKind kind,
                                 EffectScale scale = EffectScale::Absolute);

ExperimentDataset generate(const SimConfig& config);

/// Latent per-user draws, for checking the generator itself.
struct SimulatedUser {
  int group = 0;
  double u = 0.0;
  double activity = 0.0;
  std::vector<double> noise;  ///< e_ij per generated period
  std::vector<bool> present;
};
std::vector<SimulatedUser> generate_latents(const SimConfig& config);

/// SplitMix64 finalizer, used to derive per-replication seeds.
std::uint64_t splitmix64(std::uint64_t x);

struct EstimatorSummary {
  std::string parameter;
  double ground_truth = 0.0;
  double mean_estimate = 0.0;
  double mc_standard_error = 0.0;
  double bias = 0.0;
  double empirical_variance = 0.0;
  double mean_fisher_variance = 0.0;
  double variance_ratio = 0.0;  ///< empirical / mean Fisher
  double coverage = 0.0;        ///< share of 95% Wald intervals covering the truth
  std::size_t replications = 0;
};

struct Replication {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::vector<double> estimates;
  std::vector<double> standard_errors;
  std::string error;
};

struct MonteCarloReport {
  SimConfig config;
  DesignKind design = DesignKind::Crossover;
  EffectScale scale = EffectScale::Absolute;
  std::size_t requested = 0;
  std::size_t failed = 0;
  ActivityModel activity;
  std::vector<EstimatorSummary> estimators;
  std::vector<Replication> replications;

  const EstimatorSummary& estimator(std::string_view parameter) const;
  /// One row per replication and parameter, for external plotting.
  void write_csv(std::ostream& out) const;
};

/// Repeats generate -> moments -> fit K times with seeds splitmix64(seed + k).
/// Failed replications are recorded; more than 1% failing aborts the run.
MonteCarloReport run_monte_carlo(const SimConfig& config, DesignKind kind, std::size_t replications,
                                 EffectScale scale = EffectScale::Absolute);

struct BootstrapResult {
  std::string parameter;
  std::size_t resamples = 0;
  std::size_t skipped = 0;
  double estimate = 0.0;
  double bootstrap_variance = 0.0;
  double fisher_variance = 0.0;
  double ratio = 0.0;  ///< bootstrap / Fisher
};

/// User-level bootstrap: whole user trajectories are resampled with
/// replacement inside each sequence group.
BootstrapResult bootstrap(const ExperimentDataset& ds, DesignKind kind, std::size_t resamples,
                          std::uint64_t seed, EffectScale scale = EffectScale::Absolute,
                          bool pre_period = false);

}  // namespace remex
