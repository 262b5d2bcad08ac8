#pragma once

#include "remex/dataset.hpp"
#include "remex/inference.hpp"
#include "remex/moments.hpp"
#include "remex/power.hpp"
#include "remex/simlab.hpp"

#include <json.hpp>

namespace remex {

using Json = nlohmann::json;

/// Compact exchange format for partial summaries of sharded jobs.
Json to_json(const MomentSummary& summary);
MomentSummary moment_summary_from_json(const Json& j);

Json to_json(const FitResult& fit);
FitResult fit_result_from_json(const Json& j);

Json to_json(const TestResult& test);
TestResult test_result_from_json(const Json& j);

Json to_json(const SimConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
SimConfig sim_config_from_json(const Json& j);

Json to_json(const MonteCarloReport& report);
MonteCarloReport monte_carlo_report_from_json(const Json& j);

Json to_json(const BootstrapResult& result);
Json to_json(const DesignComparison& comparison);
Json to_json(const SampleSize& size, const PowerSpec& spec);
Json to_json(const ValidationReport& report);

}  // namespace remex
