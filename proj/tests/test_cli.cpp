#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "lensless_cli_XXXXXX").string();
    path_ = mkdtemp(tmpl.data());
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

int run(const std::string& args) {
  const std::string cmd = std::string(LENSLESS_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

// Small simulated dataset shared by several tests.
const std::string kSmall = "--sensor 16x16 --psf-seed 3";

}  // namespace

TEST(Cli, SimulateIsByteIdenticalAcrossRuns) {
  TempDir t;
  ASSERT_EQ(run("simulate --count 2 --split 0.5 --seed 7 " + kSmall + " --out " + (t / "a").string()), 0);
  ASSERT_EQ(run("simulate --count 2 --split 0.5 --seed 7 " + kSmall + " --out " + (t / "b").string()), 0);
  const auto a = tree(t / "a"), b = tree(t / "b");
  EXPECT_TRUE(a.count("manifest.json"));
  EXPECT_TRUE(a.count("psf.ltg"));
  EXPECT_TRUE(a.count("config.json"));
  EXPECT_TRUE(a.count("train/0000_b.ltg"));
  EXPECT_TRUE(a.count("test/0000_gt.png"));
  EXPECT_EQ(a, b);
}

TEST(Cli, Admm5MatchesUntrainedLeAdmm) {
  TempDir t;
  ASSERT_EQ(run("simulate --count 2 --split 0.5 --seed 7 " + kSmall + " --out " + (t / "d").string()), 0);
  const std::string in = (t / "d/train/0000_b.ltg").string();
  ASSERT_EQ(run("reconstruct --method admm5 --input " + in + " " + kSmall + " --out " + (t / "r1").string()), 0);
  ASSERT_EQ(run("reconstruct --method leadmm --input " + in + " " + kSmall + " --out " + (t / "r2").string()), 0);
  const std::string p1 = slurp(t / "r1/scene.png");
  ASSERT_FALSE(p1.empty());
  EXPECT_EQ(p1, slurp(t / "r2/scene.png"));
}

TEST(Cli, GradcheckPasses) {
  TempDir t;
  EXPECT_EQ(run("gradcheck --out " + (t / "g").string()), 0);
  const std::string csv = slurp(t / "g/gradcheck.csv");
  EXPECT_NE(csv.find("log_mu1[0]"), std::string::npos);
  EXPECT_NE(csv.find("conv_in[0]"), std::string::npos);
}

TEST(Cli, BadConfigExitsTwo) {
  TempDir t;
  fs::create_directories(t / "");
  std::ofstream(t / "bad.json") << R"({"solver": {"mu9": 1}})";
  EXPECT_EQ(run("simulate --config " + (t / "bad.json").string() + " --out " + (t / "o").string()), 2);
  std::ofstream(t / "broken.json") << "{ not json";
  EXPECT_EQ(run("simulate --config " + (t / "broken.json").string() + " --out " + (t / "o").string()), 2);
  EXPECT_EQ(run("reconstruct --method fista --input x.ltg --out " + (t / "o").string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("simulate --count 1 --out " + (t / "o").string()), 2);
}

TEST(Cli, RuntimeFailureExitsThree) {
  TempDir t;
  std::ofstream(t / "junk.ltg") << "definitely not LTG1";
  EXPECT_EQ(run("reconstruct --input " + (t / "junk.ltg").string() + " " + kSmall + " --out " + (t / "o").string()), 3);
}

TEST(Cli, ArtifactsAreReadableByTheCli) {
  TempDir t;
  const std::string data = (t / "d").string();
  ASSERT_EQ(run("simulate --count 4 --split 0.5 --seed 3 " + kSmall + " --out " + data), 0);
  ASSERT_EQ(run("train --dataset " + data + " --epochs 1 --depth 3 --out " + (t / "tr").string()), 0);
  ASSERT_EQ(run("train --dataset " + data + " --variant leadmm_star --epochs 1 --depth 2 --out " +
                (t / "ts").string()),
            0);
  EXPECT_TRUE(fs::exists(t / "tr/history.csv"));
  const std::string ck = (t / "tr/checkpoint.ltg").string(), cks = (t / "ts/checkpoint.ltg").string();
  // checkpoint -> train (resume), reconstruct, eval
  EXPECT_EQ(run("train --dataset " + data + " --epochs 1 --checkpoint " + ck + " --out " + (t / "tr2").string()), 0);
  const std::string in = (t / "d/test/0000_b.ltg").string();
  EXPECT_EQ(run("reconstruct --method leadmm --checkpoint " + ck + " --input " + in + " " + kSmall + " --out " +
                (t / "rc").string()),
            0);
  EXPECT_EQ(run("reconstruct --method leadmm-star --checkpoint " + cks + " --input " + in + " " + kSmall +
                " --out " + (t / "rs").string()),
            0);
  // reconstructed scene -> measurement input of another run (same padded grid)
  EXPECT_EQ(run("reconstruct --method admm --iters 3 --psf " + (t / "d/psf.ltg").string() + " --input " + in +
                " --out " + (t / "rp").string()),
            0);
  EXPECT_EQ(run("eval --dataset " + data + " --iters 10 --checkpoint " + ck + " --checkpoint " + cks + " --out " +
                (t / "ev").string()),
            0);
  const std::string metrics = slurp(t / "ev/metrics.csv");
  EXPECT_NE(metrics.find("leadmm-star"), std::string::npos);
  EXPECT_TRUE(fs::exists(t / "ev/layers_leadmm.csv"));
  EXPECT_EQ(run("sweep --dataset " + data + " --epochs 1 --sizes 1,2 --depth 2 --out " + (t / "sw").string()), 0);
  EXPECT_NE(slurp(t / "sw/sweep.csv").find('\n'), std::string::npos);
  // Dataset written by simulate can seed another simulate through its PSF file.
  EXPECT_EQ(run("simulate --count 2 --psf " + (t / "d/psf.ltg").string() + " --out " + (t / "d2").string()), 0);
}

TEST(Cli, ConfigEchoReproducesOutputs) {
  TempDir t;
  const std::string data = (t / "d").string();
  ASSERT_EQ(run("simulate --count 2 --split 0.5 --seed 5 " + kSmall + " --out " + data), 0);
  ASSERT_EQ(run("reconstruct --method admm --iters 7 --tau 0.004 --input " + (t / "d/train/0000_b.ltg").string() +
                " " + kSmall + " --out " + (t / "r1").string()),
            0);
  ASSERT_EQ(run("reconstruct --config " + (t / "r1/config.json").string() + " --out " + (t / "r2").string()), 0);
  EXPECT_EQ(slurp(t / "r1/scene.ltg"), slurp(t / "r2/scene.ltg"));
  EXPECT_EQ(slurp(t / "r1/config.json"), slurp(t / "r2/config.json"));

  ASSERT_EQ(run("simulate --config " + (t / "d/config.json").string() + " --out " + (t / "d2").string()), 0);
  EXPECT_EQ(tree(t / "d"), tree(t / "d2"));
}

TEST(Cli, BenchmarkWritesTimings) {
  TempDir t;
  EXPECT_EQ(run("benchmark --sensor 24x24 --iters 20 --out " + (t / "b").string()), 0);
  const std::string csv = slurp(t / "b/benchmark.csv");
  EXPECT_NE(csv.find("admm20,"), std::string::npos);
  EXPECT_NE(csv.find("leadmm,"), std::string::npos);
  EXPECT_EQ(run("benchmark --timing-runs 2 --out " + (t / "b2").string()), 2);
}
