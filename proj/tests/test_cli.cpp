#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "rnnt/cli.hpp"

using namespace rnnt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rnnt_fusion");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

constexpr const char* kSmallConfig = R"(# small run
[task]
n_train = 40
n_dev = 5

[model]
encoder_hidden = 8
prediction_hidden = 8
d_enc = 8
d_pred = 8

[fusion]
kind = gating
d_joint = 8

[train]
seed = 5
batch_size = 2
total_steps = 4
eval_every = 2
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const std::string name = ::testing::UnitTest::GetInstance()->current_test_info()->name();
    dir_ = fs::temp_directory_path() / ("rnnt_cli_test_" + name);
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write("small.ini", kSmallConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST(Cli, ParamCount) {
  const Outcome r = run_cli({"paramcount", "--fusion", "bilinear-lowrank", "--denc", "512", "--dpred", "640", "--djoint",
                             "640", "--drank", "640"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "1884160\n");
  EXPECT_EQ(run_cli({"paramcount", "--fusion", "combination", "--denc", "512", "--dpred", "640", "--djoint", "640",
                     "--drank", "640"})
                .out,
            "3358720\n");
  EXPECT_EQ(run_cli({"paramcount", "--fusion", "fc-add", "--denc", "512", "--dpred", "640", "--djoint", "640",
                     "--drank", "3"})
                .code,
            2);
}

TEST(Cli, OracleAndGradcheck) {
  const Outcome o = run_cli({"oracle", "--trials", "100"});
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("max_abs_deviation"), std::string::npos);
  const Outcome g = run_cli({"gradcheck", "--fusion", "fc-mul", "--trials", "1"});
  EXPECT_EQ(g.code, 0) << g.out << g.err;
  EXPECT_NE(g.out.find("max_rel_error"), std::string::npos);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"paramcount", "--fusion", "fc-add"}).code, 2);
  EXPECT_EQ(run_cli({"gradcheck", "--fusion", "fc-sub"}).code, 2);
  const Outcome missing = run_cli({"train", "--config", "/nonexistent/config.ini"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_TRUE(missing.out.empty());
  EXPECT_NE(missing.err.find("cannot open"), std::string::npos);
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(run_cli({"train", "--config", write("bad_key.ini", "[train]\nspeed = 3\n")}).code, 2);
  EXPECT_EQ(run_cli({"train", "--config", write("bad_val.ini", "[train]\nbatch_size = many\n")}).code, 2);
  EXPECT_EQ(run_cli({"train", "--config", write("bad_kind.ini", "[fusion]\nkind = fc-sub\n")}).code, 2);
  EXPECT_EQ(run_cli({"train", "--config", write("nosection.ini", "seed = 3\n")}).code, 2);
}

TEST_F(CliTest, DumpConfigRoundTrips) {
  const Outcome first = run_cli({"train", "--config", path("small.ini"), "--dump-config", "--seed", "17"});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("seed = 17"), std::string::npos);
  const Outcome second = run_cli({"train", "--config", write("dumped.ini", first.out), "--dump-config"});
  EXPECT_EQ(second.code, 0);
  EXPECT_EQ(second.out, first.out);
  const ParsedConfig a = parse_config_string(first.out);
  EXPECT_TRUE(a.notices.empty());
}

TEST_F(CliTest, DefaultsAreReportedAsNotices) {
  const ParsedConfig p = parse_config_string(kSmallConfig);
  bool saw_lr = false;
  for (const auto& n : p.notices) saw_lr |= n.find("train.learning_rate") != std::string::npos;
  EXPECT_TRUE(saw_lr);
  EXPECT_EQ(p.config.model.fusion.kind, FusionKind::kGating);
  EXPECT_EQ(p.config.model.fusion.d_rank, 0u);
  EXPECT_EQ(p.config.seed, 5u);
}

TEST_F(CliTest, TrainEvalDecodeAreDeterministic) {
  const Outcome a = run_cli({"train", "--config", path("small.ini"), "--out", path("a")});
  const Outcome b = run_cli({"train", "--config", path("small.ini"), "--out", path("b")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.bin"), slurp(dir_ / "b" / "checkpoint.bin"));
  EXPECT_FALSE(a.err.empty());  // default-value notices

  const std::string ck = path("a/checkpoint.bin");
  const Outcome ev = run_cli({"eval", "--checkpoint", ck, "--config", path("small.ini")});
  EXPECT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(ev.out.rfind("dev_loss ", 0), 0u);
  const Outcome ev2 = run_cli({"eval", "--checkpoint", ck, "--config", path("small.ini")});
  EXPECT_EQ(ev.out, ev2.out);

  const Outcome dec = run_cli({"decode", "--checkpoint", ck, "--config", path("small.ini")});
  EXPECT_EQ(dec.code, 0);
  EXPECT_EQ(static_cast<std::size_t>(std::count(dec.out.begin(), dec.out.end(), '\n')), 5u);

  // Resume from the final checkpoint with a longer schedule.
  std::string longer = kSmallConfig;
  longer.replace(longer.find("total_steps = 4"), 15, "total_steps = 6");
  const Outcome resumed = run_cli({"train", "--config", write("longer.ini", longer),
                                   "--resume", ck, "--out", path("c")});
  EXPECT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(resumed.out.rfind("step 6 ", 0), 0u) << resumed.out;
}

TEST_F(CliTest, BadCheckpointsExitWithTwo) {
  EXPECT_EQ(run_cli({"eval", "--checkpoint", path("none.bin"), "--config", path("small.ini")}).code, 2);
  const Outcome corrupt = run_cli({"eval", "--checkpoint", write("junk.bin", "RNTX...."), "--config", path("small.ini")});
  EXPECT_EQ(corrupt.code, 2);
  EXPECT_NE(corrupt.err.find("offset"), std::string::npos);
}

TEST_F(CliTest, ReportSortsByWer) {
  auto make_run = [&](const std::string& name, const std::string& kind, bool reg, const std::string& wer) {
    fs::create_directories(dir_ / "runs" / name);
    std::ofstream(dir_ / "runs" / name / "metrics.csv")
        << kMetricsHeader << "\n100,1,2,50,1,0.001\n200,0.5,0.75," << wer << ",1,0.001\n";
    std::string cfg = std::string("[fusion]\nkind = ") + kind + "\n";
    if (kind == "bilinear-lowrank") cfg += "d_rank = 4\n";
    if (reg) cfg += "[reg]\nenabled = true\n";
    std::ofstream(dir_ / "runs" / name / "config.ini") << cfg;
  };
  make_run("slow", "fc-add", false, "12.5");
  make_run("fast", "bilinear-lowrank", true, "3");
  make_run("mid", "gating", false, "7.25");
  fs::create_directories(dir_ / "runs" / "incomplete");

  const Outcome r = run_cli({"report", "--dir", path("runs")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> lines;
  std::istringstream is(r.out);
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[2], "| fast | bilinear-lowrank | on | 3 | 0.75 | " +
                          std::to_string(param_count(FusionSpec{FusionKind::kBilinearLowRank, 32, 32, 32, 4, false})) +
                          " |");
  EXPECT_EQ(lines[3].rfind("| mid | gating | off | 7.25 |", 0), 0u);
  EXPECT_EQ(lines[4].rfind("| slow | fc-add | off | 12.5 |", 0), 0u);

  EXPECT_EQ(run_cli({"report", "--dir", path("runs/incomplete")}).code, 2);
}

TEST_F(CliTest, ExportWritesCsv) {
  const Outcome r = run_cli({"export", "--config", path("small.ini"), "--index", "3", "--count", "2"});
  ASSERT_EQ(r.code, 0);
  const TrainConfig c = parse_config_string(kSmallConfig).config;
  std::ostringstream expect;
  write_csv(expect, generate(c.seeded_task(), 3));
  write_csv(expect, generate(c.seeded_task(), 4));
  EXPECT_EQ(r.out, expect.str());
}
