#pragma once

#include "remex/dataset.hpp"
#include "remex/inference.hpp"
#include "remex/moments.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace remex {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitDataError = 1,
  kExitFitError = 2,  ///< convergence or identifiability
  kExitUsageError = 3,
};

struct AnalysisRequest {
  std::filesystem::path input;
  DesignKind design = DesignKind::Crossover;
  EffectScale scale = EffectScale::Absolute;
  MetricDef metric;
  double alpha = 0.05;
  bool pre_period = false;
  bool json = false;
  CsvSchema schema;  ///< column names; metric and design are filled from the fields above
};

struct NamedFit {
  std::string role;  ///< e.g. "equivalence model", "reported model"
  FitResult fit;
};

/// Outcome of the analysis workflow for one design family.
struct AnalysisReport {
  DesignKind design = DesignKind::Crossover;
  EffectScale scale = EffectScale::Absolute;
  std::string path;  ///< which branch of the workflow produced the reported model
  bool two_stage = false;
  std::vector<TestResult> tests;
  std::vector<NamedFit> fits;
  std::vector<std::string> notes;
};

/// Runs the design's analysis recipe on finalized moments: equivalence test
/// of the per-period effects (crossover, parallel) or the carryover test
/// (re-randomized), followed by the pooled or reduced fit.
AnalysisReport run_workflow(DesignKind design, EffectScale scale, bool pre_period, double alpha,
                            const MetricMoments& moments, bool has_pre_data);

/// Entry point of the tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace remex
