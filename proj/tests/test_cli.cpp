#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxgan/checkpoint.hpp"
#include "voxgan/csv.hpp"
#include "voxgan/synth_data.hpp"
#include "voxgan/vgrid_io.hpp"
#include "voxgan/voxel_grid.hpp"

namespace fs = std::filesystem;
using namespace voxgan;

namespace {

struct CmdResult {
  int status = -1;
  std::string out;  // stdout and stderr interleaved
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(VOXGAN_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  CmdResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int rc = pclose(pipe);
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::path(::testing::TempDir()) / ("cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// a small checkpoint for generate/classify/nn tests; trained one step so the
// file comes from the real pipeline
fs::path tiny_run(const fs::path& dir, const std::string& extra = "") {
  const auto data = dir / "data";
  auto r = run_cli("synth --kind voronoi --out " + data.string() +
                   " --count 6 --seed 3 --size 16");
  EXPECT_EQ(r.status, 0) << r.out;
  r = run_cli("train --data " + data.string() + " --out " + (dir / "run").string() +
              " --batch 2 --max_steps 1 --checkpoint_every 1 --latent_dim 8 " +
              "--mapping_layers 1 --g_base_channels 16 --d_base_channels 4 " + extra);
  EXPECT_EQ(r.status, 0) << r.out;
  return dir / "run" / "checkpoints" / "step_000001.ckpt";
}

}  // namespace

TEST(CliSynthTest, WritesFilesManifestAndIsBitwiseRepeatable) {
  const auto dir = fresh_dir("synth");
  const auto a = dir / "a";
  const auto b = dir / "b";
  const std::string args = " --kind voronoi --count 4 --seed 9 --size 16";
  EXPECT_EQ(run_cli("synth --out " + a.string() + args).status, 0);
  EXPECT_EQ(run_cli("synth --out " + b.string() + args).status, 0);

  const auto rows = load_manifest(a / "manifest.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    EXPECT_EQ(load_grid(a / row.file).dims, (Dims{16, 16, 16}));
    EXPECT_EQ(slurp(a / row.file), slurp(b / row.file)) << row.file;
  }
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
}

TEST(CliSynthTest, SolidsCarryThreeLabels) {
  const auto dir = fresh_dir("synth_solids");
  EXPECT_EQ(run_cli("synth --kind solids --out " + dir.string() + " --count 2 --seed 4").status,
            0);
  const auto rows = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].label, static_cast<int>(i / 2));
  }
}

TEST(CliTrainTest, WritesLogAndCheckpointAndEchoesEffectiveConfig) {
  const auto dir = fresh_dir("train");
  const auto data = dir / "data";
  ASSERT_EQ(run_cli("synth --kind voronoi --out " + data.string() + " --count 6 --seed 3").status,
            0);

  const auto cfg = dir / "train.cfg";
  std::ofstream(cfg) << "batch=4\nmax_steps=5\ncheckpoint_every=5\nlatent_dim=8\n"
                     << "mapping_layers=1\ng_base_channels=16\nd_base_channels=4\n"
                     << "# comment\nseed=11\n";
  const auto r = run_cli("train --data " + data.string() + " --out " + (dir / "run").string() +
                         " --config " + cfg.string() + " --batch 2");
  ASSERT_EQ(r.status, 0) << r.out;
  // flag wins over the file, file wins over the default
  EXPECT_NE(r.out.find("batch=2\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("max_steps=5\n"), std::string::npos);
  EXPECT_NE(r.out.find("latent_dim=8\n"), std::string::npos);
  EXPECT_NE(r.out.find("seed=11\n"), std::string::npos);
  EXPECT_NE(r.out.find("n_critic=5\n"), std::string::npos);

  const auto log_rows = csv::read_rows(dir / "run" / "train_log.csv");
  ASSERT_EQ(log_rows.size(), 6u);  // header plus five steps
  EXPECT_EQ(log_rows[0][0], "step");
  const auto ckpt = dir / "run" / "checkpoints" / "step_000005.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(load_checkpoint<float>(ckpt).gen.cfg.latent_dim, 8);
}

TEST(CliTrainTest, UnknownConfigKeyFailsWithTheKeyName) {
  const auto dir = fresh_dir("badkey");
  const auto cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "foo=1\n";
  const auto r = run_cli("train --data x --out y --config " + cfg.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("unknown key 'foo'"), std::string::npos) << r.out;
}

TEST(CliTrainTest, MissingDataPathFailsWithThePath) {
  const auto r = run_cli("train --data /nonexistent/path.csv --out /tmp/unused_run");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("/nonexistent/path.csv"), std::string::npos) << r.out;
}

TEST(CliGenerateTest, WritesCountFilesInsideTheUnitInterval) {
  const auto dir = fresh_dir("generate");
  const auto ckpt = tiny_run(dir);
  const auto out = dir / "gen";
  const auto r = run_cli("generate --checkpoint " + ckpt.string() + " --out " + out.string() +
                         " --count 10 --seed 5");
  ASSERT_EQ(r.status, 0) << r.out;

  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().extension() != ".vgrid") continue;
    ++files;
    const auto g = load_grid(entry.path());
    EXPECT_EQ(g.dims, (Dims{16, 16, 16}));
    for (const float v : g.data) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
  }
  EXPECT_EQ(files, 10u);
}

TEST(CliGenerateTest, FixedSeedIsBitwiseRepeatableAndSeedsDiffer) {
  const auto dir = fresh_dir("gen_seed");
  const auto ckpt = tiny_run(dir);
  const auto a = dir / "a", b = dir / "b", c = dir / "c";
  for (const auto& [out, seed] : {std::pair{a, 7}, {b, 7}, {c, 8}}) {
    ASSERT_EQ(run_cli("generate --checkpoint " + ckpt.string() + " --out " + out.string() +
                      " --count 2 --seed " + std::to_string(seed))
                  .status,
              0);
  }
  EXPECT_EQ(slurp(a / "sample_0000.vgrid"), slurp(b / "sample_0000.vgrid"));
  EXPECT_NE(slurp(a / "sample_0000.vgrid"), slurp(c / "sample_0000.vgrid"));
}

TEST(CliGenerateTest, MissingCheckpointFails) {
  const auto r = run_cli("generate --checkpoint /nonexistent.ckpt --out /tmp/unused_gen");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("/nonexistent.ckpt"), std::string::npos) << r.out;
}

TEST(CliMomentsTest, HandCheckedCubeRowComesOutExact) {
  const auto dir = fresh_dir("moments_cube");
  const auto f = dir / "cube.vgrid";
  save_grid(f, VoxelGrid({2, 2, 2}, 1.0f));
  const auto out = dir / "m.csv";
  const auto r = run_cli("moments --in " + f.string() + " --out " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;

  const auto rows = csv::read_rows(out);
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_GE(rows[1].size(), 7u);
  EXPECT_EQ(rows[1][0], "cube.vgrid");
  EXPECT_EQ(rows[1][1], "8");
  EXPECT_EQ(rows[1][2], "16");
  EXPECT_EQ(rows[1][3], "256");
  EXPECT_EQ(rows[1][4], "4096");
  EXPECT_EQ(rows[1][5], "1");
  EXPECT_EQ(rows[1][6], "none");
}

TEST(CliMomentsTest, SummaryFeedsCompareAndSelfComparisonIsPerfect) {
  const auto dir = fresh_dir("moments_cmp");
  const auto data = dir / "data";
  ASSERT_EQ(run_cli("synth --kind voronoi --out " + data.string() + " --count 8 --seed 6").status,
            0);
  const auto r = run_cli("moments --in " + data.string() + " --out " + (dir / "m.csv").string() +
                         " --summary " + (dir / "s.csv").string() + " --bins 8");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("grains=8\n"), std::string::npos);

  const auto c = run_cli("compare --a " + (dir / "s.csv").string() + " --b " +
                         (dir / "s.csv").string() + " --out " + (dir / "cmp.csv").string());
  ASSERT_EQ(c.status, 0) << c.out;
  EXPECT_NE(c.out.find("delta_mean=0\n"), std::string::npos) << c.out;
  EXPECT_NE(c.out.find("intersection=1\n"), std::string::npos) << c.out;

  const auto rows = csv::read_rows(dir / "cmp.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][3], "0");  // delta_mean
  EXPECT_EQ(rows[1][7], "1");  // intersection
}

TEST(CliClassifyTest, PrintsParseableAccuracies) {
  const auto dir = fresh_dir("classify");
  const auto ckpt = tiny_run(dir);
  ASSERT_EQ(
      run_cli("synth --kind solids --out " + (dir / "tr").string() + " --count 3 --seed 21")
          .status,
      0);
  ASSERT_EQ(
      run_cli("synth --kind solids --out " + (dir / "te").string() + " --count 2 --seed 22")
          .status,
      0);
  const auto r = run_cli("classify --train " + (dir / "tr").string() + " --test " +
                         (dir / "te").string() + " --checkpoint " + ckpt.string() +
                         " --epochs 5");
  ASSERT_EQ(r.status, 0) << r.out;
  for (const char* key : {"train_accuracy=", "test_accuracy="}) {
    const auto at = r.out.find(key);
    ASSERT_NE(at, std::string::npos) << r.out;
    const double v = std::stod(r.out.substr(at + std::string(key).size()));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(CliNnTest, FindsAnExactDuplicateAtDistanceZero) {
  const auto dir = fresh_dir("nn");
  const auto corpus = dir / "corpus";
  ASSERT_EQ(
      run_cli("synth --kind voronoi --out " + corpus.string() + " --count 3 --seed 8").status,
      0);
  const auto query = dir / "query";
  fs::create_directories(query);
  fs::copy_file(corpus / "grain_0001.vgrid", query / "probe.vgrid");

  const auto r = run_cli("nn --query " + query.string() + " --corpus " + corpus.string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("probe.vgrid,1,grain_0001.vgrid,0\n"), std::string::npos) << r.out;
}

TEST(CliNnTest, DimensionMismatchNamesTheFile) {
  const auto dir = fresh_dir("nn_dims");
  const auto corpus = dir / "corpus";
  ASSERT_EQ(
      run_cli("synth --kind voronoi --out " + corpus.string() + " --count 2 --seed 8").status,
      0);
  const auto query = dir / "query";
  fs::create_directories(query);
  save_grid(query / "small.vgrid", VoxelGrid({8, 8, 8}, 1.0f));

  const auto r = run_cli("nn --query " + query.string() + " --corpus " + corpus.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("small.vgrid"), std::string::npos) << r.out;
}

TEST(CliAppTest, BadInvocationsExitNonzero) {
  EXPECT_NE(run_cli("").status, 0);
  EXPECT_NE(run_cli("frobnicate").status, 0);
  EXPECT_NE(run_cli("synth").status, 0);  // --out is required
  EXPECT_EQ(run_cli("--help").status, 0);
  EXPECT_NE(run_cli("--help").out.find("n_critic"), std::string::npos);
}
