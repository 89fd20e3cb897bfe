#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "trybuy/trybuy.hpp"

namespace fs = std::filesystem;
using namespace trybuy;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run_cli(const std::string& args) {
  std::string cmd = std::string(TRYBUY_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) { return read_file_bytes(p.string()); }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("trybuy_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name, std::ios::binary) << text;
  }

  // Simulates a small dataset into <name>/.
  void simulate(const std::string& name, const std::string& extra_params = "") {
    write(name + ".json", R"({"participants": 40, "seed": 5)" + extra_params + "}");
    auto r = run_cli("simulate -i " + path(name + ".json") + " -o " + path(name));
    ASSERT_EQ(r.code, 0) << r.output;
  }

  fs::path dir;
};

}  // namespace

TEST_F(CliTest, EmptyInputIsSchemaError) {
  write("empty.csv", "");
  auto r = run_cli("preprocess -i " + path("empty.csv") + " -o " + path("out"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("expected header"), std::string::npos) << r.output;
}

TEST_F(CliTest, BadArgumentsExitTwo) {
  EXPECT_EQ(run_cli("preprocess").code, 2);
  EXPECT_EQ(run_cli("frobnicate -i x").code, 2);
  EXPECT_EQ(run_cli("fit -i x --scores y --model nonsense").code, 2);
  EXPECT_EQ(run_cli("preprocess -i " + path("missing.csv")).code, 2);
}

TEST_F(CliTest, MalformedRowsReportLineNumbers) {
  write("bad.csv", "participant_id,post_id,position,dwell_raw,shared,liked\nU1,A,1,2.0,0,0\nU1,B,2,abc,0,0\n");
  auto r = run_cli("preprocess -i " + path("bad.csv") + " -o " + path("out"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 3"), std::string::npos) << r.output;
}

TEST_F(CliTest, FixtureAuditAndResolvedConfig) {
  auto r = run_cli("preprocess -i " TRYBUY_FIXTURES "/pipeline_fixture.csv -o " + path("out"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto audit = read_json(dir / "out" / "audit.json");
  EXPECT_EQ(audit["input"], 10);
  EXPECT_EQ(audit["stage1"]["removed_max_dwell"], 3);
  EXPECT_EQ(audit["stage1"]["removed_edge_trim"], 4);
  EXPECT_EQ(audit["floor"]["removed_min_dwell"], 1);
  EXPECT_EQ(audit["retained"], 2);
  auto resolved = read_json(dir / "out" / "resolved_config.json");
  EXPECT_EQ(resolved["rules"]["max_dwell"], 30.0);
  EXPECT_EQ(resolved["rules"]["edge_trim"], 3);
  EXPECT_EQ(resolved["rules"]["min_adjusted_dwell"], 0.15);
  EXPECT_EQ(resolved["input_sha256"], file_sha256(TRYBUY_FIXTURES "/pipeline_fixture.csv"));
  auto cleaned = load_impressions(path("out/cleaned.csv"));
  ASSERT_TRUE(cleaned.errors.empty());
  ASSERT_EQ(cleaned.rows.size(), 2u);
  EXPECT_EQ(cleaned.rows[0].position, 5);
  EXPECT_EQ(cleaned.rows[1].position, 6);
}

TEST_F(CliTest, RuleOverridesAreEchoed) {
  auto r = run_cli("preprocess -i " TRYBUY_FIXTURES "/pipeline_fixture.csv -o " + path("out") +
                   " --rules.max-dwell 50 --rules.edge-trim 0");
  ASSERT_EQ(r.code, 0) << r.output;
  auto audit = read_json(dir / "out" / "audit.json");
  EXPECT_EQ(audit["stage1"]["removed_max_dwell"], 0);
  EXPECT_EQ(audit["stage1"]["removed_edge_trim"], 0);
  EXPECT_EQ(read_json(dir / "out" / "resolved_config.json")["rules"]["max_dwell"], 50.0);
}

TEST_F(CliTest, SeededSimulationIsByteIdentical) {
  write("cfg.json", R"({"participants": 15, "seed": 42})");
  ASSERT_EQ(run_cli("simulate -i " + path("cfg.json") + " -o " + path("a")).code, 0);
  ASSERT_EQ(run_cli("simulate -i " + path("cfg.json") + " -o " + path("b") + " --threads 3").code, 0);
  for (const char* f : {"impressions.csv", "posts.csv", "ratings.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  ASSERT_EQ(run_cli("simulate -i " + path("cfg.json") + " -o " + path("c") + " --seed 43").code, 0);
  EXPECT_NE(slurp(dir / "a" / "impressions.csv"), slurp(dir / "c" / "impressions.csv"));
}

TEST_F(CliTest, EndToEndMatchesLibrary) {
  simulate("sim");
  auto pre = run_cli("preprocess -i " + path("sim/impressions.csv") + " --posts " + path("sim/posts.csv") + " -o " +
                     path("pre"));
  ASSERT_EQ(pre.code, 0) << pre.output;
  auto pca = run_cli("pca -i " + path("sim/ratings.csv") + " --posts " + path("sim/posts.csv") + " --cleaned " +
                     path("pre/cleaned.csv") + " -o " + path("pca"));
  ASSERT_EQ(pca.code, 0) << pca.output;
  EXPECT_NE(pca.output.find("variance"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "pca" / "correlations.csv"));
  EXPECT_TRUE(fs::exists(dir / "pca" / "top_posts.txt"));

  // The CLI's cleaned data equals the library pipeline's.
  auto imps = load_impressions(path("sim/impressions.csv")).rows;
  auto lib = run_pipeline(imps, ExclusionRules{}, PipelineOptions{});
  std::ostringstream os;
  write_impressions_csv(os, lib.impressions, true);
  EXPECT_EQ(slurp(dir / "pre" / "cleaned.csv"), os.str());

  auto cleaned = load_impressions(path("pre/cleaned.csv")).rows;
  auto scores = load_scores(path("pca/scores.csv"));
  for (std::string model : {"dwell", "engage", "attention"}) {
    auto r = run_cli("fit -i " + path("pre/cleaned.csv") + " --scores " + path("pca/scores.csv") + " --model " +
                     model + " -o " + path("fit"));
    ASSERT_EQ(r.code, 0) << r.output;
    auto cli_fit = regression_fit_from_json(read_json(dir / "fit" / ("fit_" + model + ".json")));
    auto spec = model == "dwell" ? dwell_model_spec() : model == "engage" ? engage_model_spec() : attention_model_spec();
    auto lib_fit = fit_model(cleaned, scores, spec);
    ASSERT_EQ(cli_fit.coefficients.size(), lib_fit.coefficients.size());
    for (std::size_t i = 0; i < lib_fit.coefficients.size(); ++i) {
      EXPECT_EQ(cli_fit.coefficients[i].term, lib_fit.coefficients[i].term);
      EXPECT_EQ(cli_fit.coefficients[i].estimate, lib_fit.coefficients[i].estimate);
      EXPECT_EQ(cli_fit.coefficients[i].se, lib_fit.coefficients[i].se);
    }
    EXPECT_NE(r.output.find(lib_fit.coefficients.back().term), std::string::npos);
  }
  auto rep = run_cli("report -i " + path("fit/fit_engage.json"));
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.output.find("dwell:sensationalism"), std::string::npos);
}

TEST_F(CliTest, DwellModelWithoutEngagementIsRankError) {
  simulate("sim", R"(, "params": {"stage2": {"intercept": -60}})");
  ASSERT_EQ(run_cli("preprocess -i " + path("sim/impressions.csv") + " -o " + path("pre")).code, 0);
  ASSERT_EQ(run_cli("pca -i " + path("sim/ratings.csv") + " -o " + path("pca")).code, 0);
  auto r = run_cli("fit -i " + path("pre/cleaned.csv") + " --scores " + path("pca/scores.csv") + " --model dwell -o " +
                   path("fit"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("engage"), std::string::npos) << r.output;
}

TEST_F(CliTest, ExperimentAndRecoverWriteOutputs) {
  write("cfg.json", R"({"participants": 30, "seed": 3, "replications": 2})");
  auto e = run_cli("experiment -i " + path("cfg.json") + " -o " + path("exp") + " --policies dwell_opt,random -k 10");
  ASSERT_EQ(e.code, 0) << e.output;
  auto rows = csv::read_file(path("exp/policy_outcomes.csv"));
  EXPECT_EQ(rows.size(), 1u + 2 * 4);
  EXPECT_EQ(run_cli("experiment -i " + path("cfg.json") + " --policies bogus -o " + path("x")).code, 2);

  auto r = run_cli("recover -i " + path("cfg.json") + " -o " + path("rec"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto rep = read_json(dir / "rec" / "recovery_report.json");
  EXPECT_EQ(rep["arms"].size(), 2u);
  EXPECT_EQ(run_cli("report -i " + path("rec/recovery_report.json")).code, 0);
  EXPECT_EQ(run_cli("report -i " + path("exp/policy_outcomes.csv")).code, 0);
}

TEST_F(CliTest, UnknownConfigKeyRejected) {
  write("cfg.json", R"({"participants": 3, "sede": 1})");
  auto r = run_cli("simulate -i " + path("cfg.json") + " -o " + path("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("sede"), std::string::npos);
}
