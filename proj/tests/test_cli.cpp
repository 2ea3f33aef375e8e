#include <doctest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include "mripet/phantom.hpp"
#include "support.hpp"

using testing::read_file;
using testing::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run(const std::string &args, const TempDir &dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(MRIPET_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("missing required flag is a usage error naming the flag") {
  TempDir dir;
  const RunResult r = run("register --moving x.mhd", dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("--fixed") != std::string::npos);
}

TEST_CASE("unknown flags and subcommands are usage errors") {
  TempDir dir;
  CHECK(run("phantom --bogus 3", dir).code == 1);
  CHECK(run("frobnicate", dir).code == 1);
  CHECK(run("", dir).code == 1);
}

TEST_CASE("missing input file is a runtime error naming the file") {
  TempDir dir;
  const RunResult r = run("pca --input " + (dir / "nope.mhd").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("nope.mhd") != std::string::npos);
}

TEST_CASE("help of every subcommand lists its flags with defaults") {
  TempDir dir;
  const RunResult reg = run("register --help", dir);
  CHECK(reg.code == 0);
  for (const char *flag : {"--fixed", "--moving", "--voi-fixed", "--voi-moving", "--sigmoid-auto",
                           "--sigmoid-alpha", "--sigmoid-beta", "--global-only", "--grid-spacing",
                           "--bins", "--out-dir", "--seed", "--threads", "--trace", "--verbose"})
    CHECK_MESSAGE(reg.out.find(flag) != std::string::npos, flag);
  CHECK(reg.out.find("registration") != std::string::npos);
  CHECK(reg.out.find("50") != std::string::npos);
  for (const char *sub : {"sigmoid", "pca", "metric", "resample", "fuse", "phantom"}) {
    const RunResult r = run(std::string(sub) + " --help", dir);
    CHECK_MESSAGE(r.code == 0, sub);
    CHECK_MESSAGE(r.out.find("--seed") != std::string::npos, sub);
  }
  CHECK(run("phantom --help", dir).out.find("20160912") != std::string::npos);
}

TEST_CASE("phantom output is byte-identical for a fixed seed") {
  TempDir dir;
  const auto a = dir / "a", b = dir / "b";
  REQUIRE(run("phantom --seed 7 --out-dir " + a.string(), dir).code == 0);
  REQUIRE(run("phantom --seed 7 --out-dir " + b.string(), dir).code == 0);
  for (const char *name : {"mri.mhd", "mri.raw", "pet.mhd", "pet.raw", "truth_affine.txt",
                           "truth_bspline.txt", "landmarks.txt"}) {
    const std::string x = read_file(a / name), y = read_file(b / name);
    CHECK_MESSAGE(!x.empty(), name);
    CHECK_MESSAGE(x == y, name);
  }
}

TEST_CASE("tool subcommands run on a phantom pair") {
  TempDir dir;
  const auto ph = dir / "ph";
  REQUIRE(run("phantom --seed 3 --out-dir " + ph.string(), dir).code == 0);
  const std::string mri = (ph / "mri.mhd").string(), pet = (ph / "pet.mhd").string();

  const RunResult sig = run("sigmoid --input " + pet + " --output " + (dir / "s.mhd").string(), dir);
  CHECK(sig.code == 0);
  CHECK(sig.out.find("alpha") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "s.raw"));

  const RunResult pca = run("pca --input " + mri, dir);
  CHECK(pca.code == 0);
  CHECK(pca.out.find("centroid") != std::string::npos);

  const RunResult met = run("metric --fixed " + mri + " --moving " + pet + " --transform "
                                + (ph / "truth_affine.txt").string(),
                            dir);
  CHECK(met.code == 0);
  CHECK(met.out.find("NMI") != std::string::npos);

  const auto resampled = dir / "r.mhd";
  CHECK(run("resample --moving " + pet + " --reference " + mri + " --transform "
                + (ph / "truth_affine.txt").string() + " --output " + resampled.string(),
            dir)
            .code
        == 0);
  const RunResult fz = run("fuse --fixed " + mri + " --moving " + resampled.string() + " --mode alpha --output "
                               + (dir / "f.mhd").string(),
                           dir);
  CHECK(fz.code == 0);
  const RunResult bad = run("fuse --fixed " + mri + " --moving " + pet + " --output " + (dir / "g.mhd").string(), dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("resample") != std::string::npos);
  CHECK(run("fuse --fixed " + mri + " --moving " + pet + " --mode stripes --output x.mhd", dir).code == 1);
}

TEST_CASE("register writes its artifacts") {
  TempDir dir;
  const auto ph = dir / "ph", out = dir / "reg";
  REQUIRE(run("phantom --seed 5 --out-dir " + ph.string(), dir).code == 0);
  const RunResult r = run("register --fixed " + (ph / "mri.mhd").string() + " --moving "
                              + (ph / "pet.mhd").string() + " --out-dir " + out.string() + " --trace "
                              + (dir / "trace.csv").string(),
                          dir);
  CHECK(r.code == 0);
  for (const char *name : {"registered_pet.mhd", "affine.txt", "bspline.txt", "fused.mhd", "report.jsonl"})
    CHECK_MESSAGE(std::filesystem::exists(out / name), name);
  CHECK(read_file(dir / "trace.csv").rfind("stage,level,iteration,cost,step\n", 0) == 0);
  CHECK(run("register --fixed a.mhd --moving b.mhd --bins 3", dir).code == 1);
  CHECK(run("register --fixed a.mhd --moving b.mhd --voi-fixed 1,2,3", dir).code == 1);
}

}
