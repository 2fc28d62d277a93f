// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "echodnd/checkpoint.hpp"
#include "echodnd/config.hpp"
#include "test_util.hpp"

using namespace echodnd;
using namespace echodnd::testing;

namespace {

const std::string kTiny =
    " --set base_channels=4 --set cond_channels=4 --set time_dim=8 --set diffusion_steps=50"
    " --set batch_size=2 --set learning_rate=0.001 --set log_every=1 --stride 10";

int run(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string(ECHODND_CLI) + " " + args + " > " + dir.file("cli.out") + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> listing(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

TEST_CASE("gen-data is reproducible and writes n pairs") {
  TempDir dir;
  REQUIRE(run("gen-data --n 8 --side 32 --seed 7 --out " + dir.file("a"), dir) == 0);
  REQUIRE(run("gen-data --n 8 --side 32 --seed 7 --out " + dir.file("b"), dir) == 0);
  const auto names = listing(dir.file("a"));
  CHECK(names == listing(dir.file("b")));
  std::size_t images = 0;
  std::size_t masks = 0;
  for (const std::string& n : names) {
    images += n.rfind("image_", 0) == 0 ? 1 : 0;
    masks += n.rfind("mask_", 0) == 0 ? 1 : 0;
    CHECK(slurp(dir.file("a/" + n)) == slurp(dir.file("b/" + n)));
  }
  CHECK(images == 8);
  CHECK(masks == 8);
  CHECK(names.size() == 17);
  CHECK(run("gen-data --n 0 --side 32 --seed 7 --out " + dir.file("c"), dir) != 0);
  CHECK(run("gen-data --n 2 --side 30 --out " + dir.file("d"), dir) != 0);
}

TEST_CASE("train with zero steps writes the initial checkpoint only") {
  TempDir dir;
  REQUIRE(run("gen-data --n 4 --side 8 --seed 1 --out " + dir.file("data"), dir) == 0);
  REQUIRE(run("train --data " + dir.file("data") + " --out " + dir.file("m.ckpt") + " --steps 0" + kTiny, dir) == 0);
  CHECK(lines(slurp(dir.file("m.ckpt.csv"))) == std::vector<std::string>{"step,L_G,L_B,L_KLG,L_KLB,L_SCC,total"});
  const Checkpoint c = load_checkpoint(dir.file("m.ckpt"));
  CHECK(c.step == 0);
  CHECK(c.adam_steps == 0);
  CHECK(c.params.size() > 0);
}

TEST_CASE("gaussian-only training logs a zero Bernoulli column") {
  TempDir dir;
  REQUIRE(run("gen-data --n 4 --side 8 --seed 1 --out " + dir.file("data"), dir) == 0);
  REQUIRE(run("train --data " + dir.file("data") + " --out " + dir.file("g.ckpt") + " --steps 5 --noise gaussian" + kTiny,
              dir) == 0);
  const auto log = lines(slurp(dir.file("g.ckpt.csv")));
  REQUIRE(log.size() == 6);
  for (std::size_t i = 1; i < log.size(); ++i) {
    std::vector<std::string> cols;
    std::istringstream row(log[i]);
    std::string cell;
    while (std::getline(row, cell, ',')) cols.push_back(cell);
    REQUIRE(cols.size() == 7);
    CHECK(cols[0] == std::to_string(i));
    CHECK(cols[2] == "0");
    CHECK(cols[4] == "0");
    CHECK(cols[1] != "0");
  }
}

TEST_CASE("resumed training reproduces the uninterrupted log") {
  TempDir dir;
  REQUIRE(run("gen-data --n 6 --side 8 --seed 2 --out " + dir.file("data"), dir) == 0);
  const std::string data = " --data " + dir.file("data");
  REQUIRE(run("train" + data + " --out " + dir.file("full.ckpt") + " --steps 8 --seed 3" + kTiny, dir) == 0);
  REQUIRE(run("train" + data + " --out " + dir.file("part.ckpt") + " --steps 3 --seed 3" + kTiny, dir) == 0);
  REQUIRE(run("train" + data + " --resume " + dir.file("part.ckpt") + " --out " + dir.file("part.ckpt") +
                  " --steps 8",
              dir) == 0);
  CHECK(slurp(dir.file("part.ckpt.csv")) == slurp(dir.file("full.ckpt.csv")));
  CHECK(slurp(dir.file("part.ckpt")) == slurp(dir.file("full.ckpt")));
  CHECK(lines(slurp(dir.file("full.ckpt.csv"))).size() == 9);
  // Changing the model on resume is refused.
  CHECK(run("train" + data + " --resume " + dir.file("part.ckpt") + " --out " + dir.file("x.ckpt") +
                " --steps 9 --noise gaussian",
            dir) != 0);
}

TEST_CASE("eval with an oracle checkpoint") {
  TempDir dir;
  REQUIRE(run("gen-data --n 5 --side 8 --seed 4 --out " + dir.file("data"), dir) == 0);
  Checkpoint oracle;
  oracle.model_kind = "oracle";
  oracle.config = parse_config("diffusion_steps=100\nstride=20\n");
  save_checkpoint(dir.file("oracle.ckpt"), oracle);
  const std::string base = "eval --data " + dir.file("data") + " --checkpoint " + dir.file("oracle.ckpt");
  REQUIRE(run(base + " --report " + dir.file("r1.txt") + " --svg " + dir.file("h.svg"), dir) == 0);
  REQUIRE(run(base + " --report " + dir.file("r2.txt"), dir) == 0);
  const std::string report = slurp(dir.file("r1.txt"));
  CHECK(report == slurp(dir.file("r2.txt")));
  CHECK(report.find("mean_dice=1\n") != std::string::npos);
  CHECK(report.find("sampler=ddim\ndiffusion_steps=100\nstride=20\n") != std::string::npos);
  CHECK(lines(slurp(dir.file("r1.txt.timing.csv"))).size() == 6);
  CHECK(slurp(dir.file("h.svg")).rfind("<svg", 0) == 0);
  CHECK(run(base + " --report " + dir.file("r3.txt") + " --sampler ddpm", dir) == 0);
  CHECK(slurp(dir.file("r3.txt")).find("mean_dice=1\n") != std::string::npos);
  CHECK(run("eval --data " + dir.file("data") + " --checkpoint " + dir.file("nope.ckpt") + " --report " +
                dir.file("r4.txt"),
            dir) != 0);
  CHECK(slurp(dir.file("cli.out")).find("nope.ckpt") != std::string::npos);
}

TEST_CASE("eval of a trained checkpoint is byte-reproducible") {
  TempDir dir;
  REQUIRE(run("gen-data --n 4 --side 8 --seed 5 --out " + dir.file("data"), dir) == 0);
  REQUIRE(run("train --data " + dir.file("data") + " --out " + dir.file("m.ckpt") + " --steps 3" + kTiny, dir) == 0);
  const std::string base = "eval --data " + dir.file("data") + " --checkpoint " + dir.file("m.ckpt") + " --seed 9";
  REQUIRE(run(base + " --report " + dir.file("a.txt"), dir) == 0);
  REQUIRE(run(base + " --report " + dir.file("b.txt"), dir) == 0);
  CHECK(slurp(dir.file("a.txt")) == slurp(dir.file("b.txt")));
  CHECK(run("--kernels scalar " + base + " --report " + dir.file("c.txt"), dir) == 0);
}

TEST_CASE("ablate sweeps the requested axes") {
  TempDir dir;
  REQUIRE(run("gen-data --n 8 --side 8 --seed 6 --out " + dir.file("data"), dir) == 0);
  const std::string base = "ablate --data " + dir.file("data") + " --steps 2" + kTiny;

  REQUIRE(run(base + " --axes noise --out " + dir.file("noise"), dir) == 0);
  const auto noise = lines(slurp(dir.file("noise/summary.csv")));
  REQUIRE(noise.size() == 4);
  CHECK(noise[0] == "variant,noise,mean_dice");
  CHECK(noise[1].find(",gaussian,") != std::string::npos);
  CHECK(noise[2].find(",bernoulli,") != std::string::npos);
  CHECK(noise[3].find(",both,") != std::string::npos);

  REQUIRE(run(base + " --out " + dir.file("none"), dir) == 0);
  const auto none = lines(slurp(dir.file("none/summary.csv")));
  REQUIRE(none.size() == 2);
  CHECK(none[1].rfind("baseline,", 0) == 0);

  REQUIRE(run(base + " --axes conditioner,loss --out " + dir.file("pair"), dir) == 0);
  CHECK(lines(slurp(dir.file("pair/summary.csv"))).size() == 1 + 2 * 3);

  CHECK(run(base + " --axes colour --out " + dir.file("bad"), dir) == 2);
  CHECK(run(base + " --axes noise,noise --out " + dir.file("bad"), dir) == 2);
}
