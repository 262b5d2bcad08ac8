#include "remex/cli.hpp"
#include "remex/errors.hpp"
#include "remex/serialize.hpp"
#include "remex/simlab.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace remex;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Scratch {
 public:
  Scratch() : dir_(fs::temp_directory_path() / ("remex_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }
  std::string dataset(const std::string& name, const SimConfig& c) const {
    std::ofstream f(path(name));
    write_csv(f, generate(c));
    return path(name);
  }

 private:
  fs::path dir_;
};

SimConfig quiet_config(DesignKind design) {
  SimConfig c;
  c.design = design;
  c.users_per_group = 1500;
  c.sigma = 1.0;
  c.sigma_u = 1.0;
  c.mu = 20.0;
  c.fixed_effect = 1.0;
  c.seed = 31;
  return c;
}

std::string line_with(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (l.rfind(prefix, 0) == 0) return l;
  }
  return {};
}

}  // namespace

TEST(Cli, PowerForAOnePercentStandardizedEffect) {
  const auto r = run({"power", "--standardized-effect", "0.01"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(line_with(r.out, "n per group").find("= 785"), std::string::npos) << r.out;
  const auto j = run({"power", "--mde", "0.02", "--variance", "4", "--format", "json"});
  EXPECT_EQ(Json::parse(j.out)["n_per_group"].get<long long>(), 78489);
}

TEST(Cli, CompareClosedForm) {
  const auto r = run({"compare", "--s1", "1", "--s2", "1", "--rho", "0.5"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(line_with(r.out, "parallel").find("300"), std::string::npos) << r.out;
  EXPECT_NE(line_with(r.out, "cumulative").find("300"), std::string::npos) << r.out;
  EXPECT_NE(line_with(r.out, "crossover").find("100"), std::string::npos) << r.out;
}

TEST(Cli, SimulateReportsTheGroundTruth) {
  Scratch s;
  const auto cfg = s.write("cfg.json", R"({"condition": 3, "users_per_group": 500, "seed": 5})");
  const auto r = run({"simulate", cfg, "-k", "5", "--format", "json", "--csv", s.path("reps.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_NEAR(j["ground_truth"].get<double>(), 6.6, 1e-6);
  const auto back = monte_carlo_report_from_json(j);
  EXPECT_EQ(back.requested, 5u);
  EXPECT_EQ(back.estimators.size(), 1u);
  EXPECT_EQ(to_json(back), j);
  EXPECT_TRUE(fs::exists(s.path("reps.csv")));
}

TEST(Cli, SimulateRejectsUnknownConfigKeys) {
  Scratch s;
  const auto cfg = s.write("cfg.json", R"({"condition": 3, "users": 500})");
  EXPECT_EQ(run({"simulate", cfg, "-k", "5"}).code, kExitUsageError);
}

TEST(Cli, CrossoverWithStableEffectIsPooled) {
  Scratch s;
  const auto csv = s.dataset("x.csv", quiet_config(DesignKind::Crossover));
  const auto r = run({"analyze", csv, "--design", "crossover"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(line_with(r.out, "path:"), "path: pooled crossover model") << r.out;
}

TEST(Cli, CrossoverWithDriftingEffectKeepsPeriodsSeparate) {
  Scratch s;
  auto c = quiet_config(DesignKind::Crossover);
  c.delta_shift = 2.0;
  const auto csv = s.dataset("x.csv", c);
  const auto r = run({"analyze", csv, "--design", "crossover", "--format", "json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["path"], "separate period effects");
}

TEST(Cli, ParallelWithDriftFallsBackToCumulativeEffect) {
  Scratch s;
  auto c = quiet_config(DesignKind::Parallel);
  c.delta_shift = 2.0;
  const auto plain = s.dataset("p.csv", c);
  const auto r = run({"analyze", plain, "--design", "parallel"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(line_with(r.out, "path:"), "path: cumulative effect (ttest)") << r.out;

  c.pre_period = true;
  const auto pre = s.dataset("pre.csv", c);
  const auto q = run({"analyze", pre, "--design", "parallel", "--pre-period"});
  ASSERT_EQ(q.code, kExitOk) << q.err;
  EXPECT_EQ(line_with(q.out, "path:"), "path: cumulative effect (cuped)") << q.out;
}

TEST(Cli, ReRandomizedReducesWithoutCarryover) {
  Scratch s;
  auto c = quiet_config(DesignKind::ReRandomized);
  const auto none = s.dataset("none.csv", c);
  const auto r = run({"analyze", none, "--design", "rerandomized"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(line_with(r.out, "path:"), "path: reduced model without carryover") << r.out;
  c.carryover = 3.0;
  const auto with = s.dataset("with.csv", c);
  const auto q = run({"analyze", with, "--design", "rerandomized"});
  ASSERT_EQ(q.code, kExitOk) << q.err;
  EXPECT_EQ(line_with(q.out, "path:"), "path: full model with carryover") << q.out;
}

TEST(Cli, ReportedFitRoundTripsThroughJson) {
  Scratch s;
  const auto csv = s.dataset("x.csv", quiet_config(DesignKind::Crossover));
  const auto r = run({"analyze", csv, "--design", "crossover", "--scale", "relative", "--format", "json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = Json::parse(r.out);
  ASSERT_TRUE(j.contains("fits"));
  for (const auto& f : j["fits"]) {
    const auto fit = fit_result_from_json(f["fit"]);
    EXPECT_EQ(to_json(fit), f["fit"]);
    const auto again = remex::fit(fit.model, fit.observed, fit.observed_covariance);
    EXPECT_NEAR(again.estimates(0), fit.estimates(0), 1e-9 * std::fabs(fit.estimates(0)));
  }
}

TEST(Cli, ExitCodes) {
  Scratch s;
  EXPECT_EQ(run({"analyze", s.write("empty.csv", ""), "--design", "crossover"}).code, kExitDataError);
  EXPECT_EQ(run({"analyze", s.path("missing.csv"), "--design", "crossover"}).code, kExitDataError);
  EXPECT_EQ(run({"analyze", s.write("a.csv", "user_id,group,period,value\na,0,1,1\n"), "--design", "latin"}).code,
            kExitUsageError);
  EXPECT_EQ(run({"power", "--mde", "0"}).code, kExitUsageError);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsageError);

  // every value zero: the relative effect has no baseline to scale against
  std::string zeros = "user_id,group,period,value\n";
  for (int i = 0; i < 10; ++i) zeros += "u" + std::to_string(i) + "," + std::to_string(i % 2) + ",1,0\n";
  const auto r = run({"analyze", s.write("zeros.csv", zeros), "--design", "ttest", "--scale", "relative"});
  EXPECT_EQ(r.code, kExitFitError) << r.out << r.err;
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, NonconformingDataIsADataError) {
  Scratch s;
  const auto csv = s.write("two.csv", "user_id,group,period,value\na,0,1,1\nb,1,1,2\nc,0,1,3\nd,1,1,4\n");
  const auto r = run({"analyze", csv, "--design", "rerandomized"});
  EXPECT_EQ(r.code, kExitDataError);
  EXPECT_NE(r.err.find("groups"), std::string::npos) << r.err;
}
