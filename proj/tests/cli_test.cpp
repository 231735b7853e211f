#include "ldl/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ldl/dataset.hpp"
#include "support/fixtures.hpp"

namespace ldl {
namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  return (fs::path(::testing::TempDir()) / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args) {
  return cli::dispatch(std::move(args));
}

struct SynthFiles {
  std::string images, labels, dataset;
};

// One small synthetic dataset shared by the pipeline tests.
const SynthFiles& fixture_dataset() {
  static const SynthFiles files = [] {
    SynthFiles f;
    f.images = temp_path("fx-images.idx");
    f.labels = temp_path("fx-labels.idx");
    f.dataset = temp_path("fx.ldl");
    const testing::DigitFixture fx = testing::make_digit_fixture(40, 12, 7);
    write_idx_images(fx.images, f.images);
    write_idx_labels(fx.classes, f.labels);
    EXPECT_EQ(run({"synth", "--images", f.images, "--labels", f.labels,
                   "--out", f.dataset, "--pca", "10", "--labels-count", "14"}),
              0);
    return f;
  }();
  return files;
}

std::vector<std::string> tiny_cv_args(const std::string& data,
                                      const std::string& out) {
  return {"cv",       "--data",  data, "--out",     out,      "--epochs", "2",
          "--batch",  "16",      "--lr", "0.003",   "--blocks", "2",
          "--hidden", "16",      "--k",  "2",       "--repeats", "1"};
}

TEST(Cli, HelpExistsForEverySubcommand) {
  EXPECT_EQ(run({"--help"}), 0);
  for (const char* sub : {"synth", "train", "eval", "cv", "ablate", "noise",
                          "score", "check"})
    EXPECT_EQ(run({sub, "--help"}), 0) << sub;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"cv", "--data", "x.ldl", "--out", "y.csv", "--frequency",
                 "11"}),
            2);
  EXPECT_EQ(run({"cv"}), 2);  // missing required flags
  EXPECT_EQ(run({}), 2);      // no subcommand
}

TEST(Cli, RuntimeFailuresExitOne) {
  EXPECT_EQ(run({"cv", "--data", temp_path("nope.ldl"), "--out",
                 temp_path("r.csv")}),
            1);
}

TEST(Cli, SynthWritesCanonicalDataset) {
  const SynthFiles& f = fixture_dataset();
  const LdlDataset ds = parse_ldl_file(f.dataset);
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.feature_dim(), 10u);
  EXPECT_EQ(ds.label_dim(), 14u);
  ds.validate();
}

TEST(Cli, CvRunsAreByteIdentical) {
  const SynthFiles& f = fixture_dataset();
  const std::string out1 = temp_path("cv1.csv");
  const std::string out2 = temp_path("cv2.csv");
  std::vector<std::string> args1 = tiny_cv_args(f.dataset, out1);
  std::vector<std::string> args2 = tiny_cv_args(f.dataset, out2);
  args2.push_back("--workers");
  args2.push_back("3");  // worker count must not matter
  ASSERT_EQ(run(args1), 0);
  ASSERT_EQ(run(args2), 0);
  const std::string a = read_file(out1), b = read_file(out2);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, 26), "metric,direction,mean,std\n");
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 7);  // header + 6 metrics
}

TEST(Cli, SeedChangesOutput) {
  const SynthFiles& f = fixture_dataset();
  const std::string out1 = temp_path("cv-s1.csv");
  const std::string out2 = temp_path("cv-s2.csv");
  std::vector<std::string> args1 = tiny_cv_args(f.dataset, out1);
  std::vector<std::string> args2 = tiny_cv_args(f.dataset, out2);
  args2.push_back("--seed");
  args2.push_back("7");
  ASSERT_EQ(run(args1), 0);
  ASSERT_EQ(run(args2), 0);
  EXPECT_NE(read_file(out1), read_file(out2));
}

TEST(Cli, EnvSeedActsAsDefaultOnly) {
  const SynthFiles& f = fixture_dataset();
  const std::string via_env = temp_path("cv-env.csv");
  const std::string via_flag = temp_path("cv-flag.csv");
  const std::string flag_wins = temp_path("cv-flagwins.csv");

  ::setenv("LDL_SEED", "7", 1);
  ASSERT_EQ(run(tiny_cv_args(f.dataset, via_env)), 0);
  std::vector<std::string> override_args = tiny_cv_args(f.dataset, flag_wins);
  override_args.push_back("--seed");
  override_args.push_back("1024");
  ASSERT_EQ(run(override_args), 0);
  ::unsetenv("LDL_SEED");

  std::vector<std::string> flag_args = tiny_cv_args(f.dataset, via_flag);
  flag_args.push_back("--seed");
  flag_args.push_back("7");
  ASSERT_EQ(run(flag_args), 0);

  EXPECT_EQ(read_file(via_env), read_file(via_flag));
  const std::string default_out = temp_path("cv-default.csv");
  ASSERT_EQ(run(tiny_cv_args(f.dataset, default_out)), 0);
  EXPECT_EQ(read_file(flag_wins), read_file(default_out));
}

TEST(Cli, ConfigFilePrecedenceAndUnknownKeys) {
  const SynthFiles& f = fixture_dataset();
  const std::string cfg_path = temp_path("run.cfg");
  {
    std::ofstream cfg(cfg_path);
    cfg << "epochs = 3\n\nbatch = 8\n";
  }
  const std::string model1 = temp_path("m1.tbmx");
  const std::string trace1 = temp_path("t1.csv");
  ASSERT_EQ(run({"train", "--data", f.dataset, "--out", model1, "--trace",
                 trace1, "--config", cfg_path, "--blocks", "2", "--hidden",
                 "16", "--pretrain-epochs", "0"}),
            0);
  // epochs from the config file
  const std::string t1 = read_file(trace1);
  EXPECT_EQ(std::count(t1.begin(), t1.end(), '\n'), 1 + 3);

  const std::string model2 = temp_path("m2.tbmx");
  const std::string trace2 = temp_path("t2.csv");
  ASSERT_EQ(run({"train", "--data", f.dataset, "--out", model2, "--trace",
                 trace2, "--config", cfg_path, "--blocks", "2", "--hidden",
                 "16", "--pretrain-epochs", "0", "--epochs", "2"}),
            0);
  // command line beats the config file
  const std::string t2 = read_file(trace2);
  EXPECT_EQ(std::count(t2.begin(), t2.end(), '\n'), 1 + 2);

  const std::string bad_cfg = temp_path("bad.cfg");
  {
    std::ofstream cfg(bad_cfg);
    cfg << "epoch = 3\n";  // typo must be fatal
  }
  EXPECT_EQ(run({"train", "--data", f.dataset, "--out", model2, "--config",
                 bad_cfg}),
            2);
}

TEST(Cli, TrainEvalRoundTrip) {
  const SynthFiles& f = fixture_dataset();
  const std::string model = temp_path("round.tbmx");
  ASSERT_EQ(run({"train", "--data", f.dataset, "--out", model, "--epochs",
                 "2", "--batch", "16", "--blocks", "2", "--hidden", "16"}),
            0);
  const std::string report = temp_path("eval.csv");
  ASSERT_EQ(run({"eval", "--data", f.dataset, "--model", model, "--out",
                 report}),
            0);
  const std::string text = read_file(report);
  EXPECT_EQ(text.substr(0, 26), "metric,direction,mean,std\n");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

TEST(Cli, ScoreSelfGivesPerfectMetrics) {
  const SynthFiles& f = fixture_dataset();
  const LdlDataset ds = parse_ldl_file(f.dataset);
  const std::string pred_path = temp_path("preds.txt");
  {
    std::ofstream out(pred_path, std::ios::binary);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < ds.label_dim(); ++j)
        out << (j ? " " : "") << fmt_g17(ds.labels(i, j));
      out << '\n';
    }
  }
  const std::string report = temp_path("score.csv");
  ASSERT_EQ(run({"score", "--pred", pred_path, "--data", f.dataset, "--out",
                 report}),
            0);
  std::ifstream in(report);
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, double> mean;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string name, dir, m, s;
    std::getline(ss, name, ',');
    std::getline(ss, dir, ',');
    std::getline(ss, m, ',');
    mean[name] = std::stod(m);
  }
  EXPECT_EQ(mean["chebyshev"], 0.0);
  EXPECT_EQ(mean["kl"], 0.0);
  EXPECT_NEAR(mean["cosine"], 1.0, 1e-12);
  EXPECT_NEAR(mean["intersection"], 1.0, 1e-12);
}

TEST(Cli, AblateAndNoiseWriteStructuredReports) {
  const SynthFiles& f = fixture_dataset();
  const std::string ab_out = temp_path("ablate.csv");
  ASSERT_EQ(run({"ablate", "--data", f.dataset, "--out", ab_out, "--epochs",
                 "2", "--batch", "16", "--blocks", "2", "--hidden", "16",
                 "--k", "2", "--repeats", "1"}),
            0);
  const std::string ab = read_file(ab_out);
  EXPECT_EQ(ab.substr(0, ab.find('\n')),
            "metric,direction,full_mean,full_std,wo_fa_mean,wo_fa_std,"
            "wo_pt_mean,wo_pt_std");
  EXPECT_EQ(std::count(ab.begin(), ab.end(), '\n'), 7);

  const std::string no_out = temp_path("noise.csv");
  ASSERT_EQ(run({"noise", "--data", f.dataset, "--out", no_out, "--sigmas",
                 "0.1,0.5", "--epochs", "2", "--batch", "16", "--blocks", "2",
                 "--hidden", "16", "--k", "2", "--repeats", "1"}),
            0);
  const std::string no = read_file(no_out);
  EXPECT_EQ(no.substr(0, no.find('\n')), "sigma,metric,direction,mean,std");
  EXPECT_EQ(std::count(no.begin(), no.end(), '\n'), 1 + 2 * 6);
  EXPECT_EQ(run({"noise", "--data", f.dataset, "--out", no_out, "--sigmas",
                 "abc"}),
            2);
}

}  // namespace
}  // namespace ldl
