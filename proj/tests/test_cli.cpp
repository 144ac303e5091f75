#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <random>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "metrics_fixture.hpp"
#include "star/cli.hpp"
#include "test_util.hpp"

using namespace star;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "star_kit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string temp_path(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "star_cli";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string write_heatmap(const std::string& name, const HeatmapD& h) {
  const std::string path = temp_path(name);
  write_heatmap_csv(path, h);
  return path;
}

std::string write_text(const std::string& name, const std::string& text) {
  const std::string path = temp_path(name);
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json annotations_json(const std::vector<metrics::Annotation>& anns) {
  json arr = json::array();
  for (const auto& a : anns) {
    json pts = json::array();
    for (const auto& p : a.points) pts.push_back({p.x(), p.y()});
    arr.push_back({{"points", pts}});
  }
  return arr;
}

// A small experiment setup that trains in well under a second.
const char* kSmallConfig = R"({
  "grid": {"width": 24, "height": 24},
  "synthetic": {"contour": {"center": [11.5, 11.5], "semi_x": 3, "semi_y": 3},
                "noise": {"sigma_tangent": 1.0, "sigma_normal": 0.3},
                "translation_jitter": 1, "n_train": 60, "n_test": 30, "n_models": 2,
                "optimizer": {"epochs": 3}}
})";

}  // namespace

TEST(CliDecode, GaussianCenter) {
  const auto h = render_gaussian(Grid(9, 9), Point<double>(4, 4), 1.0);
  const auto r = run_cli({"decode", write_heatmap("gauss.csv", h)});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["mean"][0].get<double>(), 4.0, 1e-12);
  EXPECT_NEAR(j["mean"][1].get<double>(), 4.0, 1e-12);
  EXPECT_NEAR(j["lambda1"].get<double>(), j["lambda2"].get<double>(), 1e-9);
  EXPECT_NEAR(j["anisotropy_ratio"].get<double>(), 1.0, 1e-9);
}

TEST(CliDecode, TwoPointCovariance) {
  const auto h = star::testing::sparse_heatmap(3, 3, {{1, 0, 0.5}, {1, 2, 0.5}});
  const auto r = run_cli({"decode", write_heatmap("two.csv", h)});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["covariance_unbiased"]["xx"].get<double>(), 2.0, 1e-12);
  EXPECT_NEAR(j["covariance_biased"]["xx"].get<double>(), 1.0, 1e-12);
}

TEST(CliDecode, DeltaIsDegenerate) {
  const auto h = star::testing::delta_heatmap(5, 5, 2, 3);
  EXPECT_EQ(run_cli({"decode", write_heatmap("delta.csv", h)}).code, cli::kDegenerate);
}

TEST(CliDecode, BadInputs) {
  EXPECT_EQ(run_cli({"decode", temp_path("missing.csv")}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"decode", write_text("unnorm.csv", "2,2\n0.5,0.4\n0,0\n")}).code,
            cli::kInputError);
  EXPECT_EQ(run_cli({}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
}

TEST(CliLoss, TargetAtMeanWithDetachIsZero) {
  const auto h = render_gaussian(Grid(9, 9), Point<double>(3.5, 4.25), 1.3);
  const auto path = write_heatmap("loss_gauss.csv", h);
  const auto cfg = write_text("detach.json", R"({"loss": {"restriction": {"kind": "detach"}}})");
  // a truncated Gaussian is not centred on its nominal point; use the decoded mean
  const auto d = json::parse(run_cli({"decode", path}).out);
  char mx[32];
  char my[32];
  std::snprintf(mx, sizeof mx, "%.17g", d["mean"][0].get<double>());
  std::snprintf(my, sizeof my, "%.17g", d["mean"][1].get<double>());
  const auto r = run_cli({"loss", path, mx, my, "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["star"].get<double>(), 0.0, 1e-9);
  EXPECT_NEAR(j["restriction"].get<double>(), 0.0, 0.0);
}

TEST(CliLoss, ValueRestrictionIsMeanEigenvalue) {
  const auto h = render_gaussian(Grid(9, 9), Point<double>(4, 4), 1.0);
  const auto path = write_heatmap("loss_iso.csv", h);
  const auto r = run_cli({"loss", path, "5", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  const double half = 0.5 * (j["lambda1"].get<double>() + j["lambda2"].get<double>());
  EXPECT_NEAR(j["restriction"].get<double>(), half, 1e-12);
  EXPECT_NEAR(j["total"].get<double>(), j["star"].get<double>() + half, 1e-12);
}

TEST(CliLoss, ZeroWeightValueMatchesDetach) {
  const auto path = write_heatmap("loss_rand.csv", [] { std::mt19937_64 rng(91); return star::testing::random_heatmap(7, 8, rng); }());
  const auto w0 = write_text("w0.json", R"({"loss": {"restriction": {"kind": "value", "w": 0}}})");
  const auto det = write_text("det.json", R"({"loss": {"restriction": {"kind": "detach"}}})");
  const auto a = json::parse(run_cli({"loss", path, "2.5", "3", "--config", w0}).out);
  const auto b = json::parse(run_cli({"loss", path, "2.5", "3", "--config", det}).out);
  EXPECT_DOUBLE_EQ(a["total"].get<double>(), b["total"].get<double>());
}

TEST(CliLoss, NonFiniteTargetRejected) {
  const auto path = write_heatmap("loss_nan.csv", [] { std::mt19937_64 rng(3); return star::testing::random_heatmap(5, 5, rng); }());
  EXPECT_EQ(run_cli({"loss", path, "nan", "1"}).code, cli::kInputError);
}

TEST(CliGradcheck, DefaultPasses) {
  const auto r = run_cli({"gradcheck", "--seeds", "5"});
  ASSERT_EQ(r.code, cli::kOk) << r.out << r.err;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LT(j["max_rel_error"].get<double>(), 1e-4);
}

TEST(CliGradcheck, ZeroToleranceFails) {
  const auto cfg = write_text("gc_small.json", R"({"grid": {"width": 8, "height": 8}})");
  EXPECT_EQ(run_cli({"gradcheck", "--tolerance", "0", "--config", cfg}).code, cli::kCheckFailed);
}

TEST(CliGradcheck, ConfigErrors) {
  EXPECT_EQ(run_cli({"gradcheck", "--config", write_text("broken.json", "{\"seed\": ")}).code,
            cli::kInputError);
  EXPECT_EQ(run_cli({"gradcheck", "--config", write_text("unknown.json", R"({"sed": 1})")}).code,
            cli::kInputError);
  EXPECT_EQ(run_cli({"gradcheck", "--tolerance", "-1"}).code, cli::kInputError);
}

TEST(CliMetrics, IdenticalFiles) {
  const auto f = star::testing::metrics_fixture();
  const auto gt = write_text("gt.json", annotations_json(f.gts).dump());
  const auto cfg = write_text("const10.json",
                              R"({"metrics": {"normalizer": {"kind": "constant", "value": 10}}})");
  const auto r = run_cli({"metrics", gt, gt, "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["mean_nme"].get<double>(), 0.0);
  EXPECT_EQ(j["fr"].get<double>(), 0.0);
  EXPECT_EQ(j["auc"].get<double>(), 1.0);
}

TEST(CliMetrics, FixtureAndOutputs) {
  const auto f = star::testing::metrics_fixture();
  const auto pred = write_text("pred.json", annotations_json(f.preds).dump());
  const auto gt = write_text("gt2.json", annotations_json(f.gts).dump());
  const auto cfg = write_text("const10b.json",
                              R"({"metrics": {"normalizer": {"kind": "constant", "value": 10}}})");
  const auto dir = temp_path("metrics_out");
  const auto r = run_cli({"metrics", pred, gt, "--config", cfg, "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["images"].get<int>(), 10);
  EXPECT_NEAR(j["mean_nme"].get<double>(), star::testing::kFixtureMeanNme, 1e-12);
  EXPECT_NEAR(j["fr"].get<double>(), star::testing::kFixtureFr, 1e-12);
  EXPECT_NEAR(j["auc"].get<double>(), star::testing::kFixtureAuc, 1e-12);
  for (const char* file : {"nme.csv", "ced.csv", "report.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(dir) / file)) << file;
  }
}

TEST(CliMetrics, MismatchedPointCounts) {
  const auto a = write_text("p2.json", R"({"points": [[0,0],[10,0]]})");
  const auto b = write_text("p3.json", R"({"points": [[0,0],[10,0],[5,5]]})");
  EXPECT_EQ(run_cli({"metrics", a, b}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"metrics", a, write_text("garbage.json", "[{")}).code, cli::kInputError);
}

TEST(CliSimulate, WritesSamplesAndConfig) {
  const auto cfg = write_text("sim.json", kSmallConfig);
  const auto dir = temp_path("sim_out");
  const auto r = run_cli({"simulate", "--config", cfg, "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(fs::path(dir) / "samples.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("split,landmark,image,ambiguous,true_x,true_y", 0), 0u);
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 8 * (60 + 30));
  const RunConfig echoed = load_run_config((fs::path(dir) / "config.json").string());
  EXPECT_EQ(echoed.dataset.n_train, 60);
}

TEST(CliExperiment, StabilityNeedsTwoModels) {
  const auto cfg = write_text("one_model.json", R"({"synthetic": {"n_models": 1}})");
  EXPECT_EQ(run_cli({"experiment", "stability", "--config", cfg, "--out", temp_path("one")}).code,
            cli::kInputError);
}

TEST(CliExperiment, OutputsAreByteIdenticalAcrossRuns) {
  const auto cfg = write_text("small.json", kSmallConfig);
  for (const char* kind : {"stability", "anisotropy", "restriction"}) {
    const auto a = temp_path(std::string("det_a_") + kind);
    const auto b = temp_path(std::string("det_b_") + kind);
    const int ca = run_cli({"experiment", kind, "--config", cfg, "--out", a}).code;
    const int cb = run_cli({"experiment", kind, "--config", cfg, "--out", b}).code;
    ASSERT_TRUE(ca == 0 || ca == 1) << kind;
    EXPECT_EQ(ca, cb);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      ++files;
      EXPECT_EQ(slurp(entry.path()), slurp(fs::path(b) / entry.path().filename()))
          << kind << "/" << entry.path().filename();
    }
    EXPECT_GE(files, 3u);
    const json summary = json::parse(slurp(fs::path(a) / "summary.json"));
    EXPECT_TRUE(summary.contains("all_claims_passed"));
  }
}

TEST(CliExperiment, DivergenceExitCode) {
  const auto cfg = write_text(
      "diverge.json",
      R"({"grid": {"width": 24, "height": 24},
          "synthetic": {"contour": {"center": [11.5, 11.5], "semi_x": 3, "semi_y": 3},
                        "noise": {"sigma_tangent": 1.0, "sigma_normal": 0.3},
                        "translation_jitter": 1, "n_train": 40, "n_test": 10, "n_models": 2,
                        "optimizer": {"kind": "sgd", "learning_rate": 1e300, "epochs": 3}}})");
  const auto r = run_cli({"experiment", "restriction", "--config", cfg, "--out", temp_path("div")});
  EXPECT_EQ(r.code, cli::kDivergence);
  EXPECT_NE(r.err.find("numeric divergence at epoch"), std::string::npos);
}

#ifdef STAR_KIT_PATH
TEST(CliBinary, ProcessExitCodes) {
  const std::string bin = STAR_KIT_PATH;
  const auto delta = write_heatmap("bin_delta.csv", star::testing::delta_heatmap(4, 4, 1, 1));
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " decode " + delta + " >/dev/null 2>&1").c_str())), 3);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " bogus >/dev/null 2>&1").c_str())), 2);
  const auto gauss = write_heatmap("bin_gauss.csv",
                                   render_gaussian(Grid(6, 6), Point<double>(2, 3), 1.0));
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " decode " + gauss + " >/dev/null").c_str())), 0);
}
#endif
