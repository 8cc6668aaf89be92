// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wmoe/checkpoint.hpp"
#include "wmoe/cli.hpp"
#include "wmoe/metrics.hpp"
#include "wmoe/synth.hpp"

using namespace wmoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const char* kDatasetSpec = R"({
  "image": [64, 64],
  "families": [
    {"name": "ga", "texture": "sinusoid-grating", "period": 9.0, "angle": 0.3,
     "defects": ["blob", "scratch"], "intensity": [0.3, 0.55], "anomaly_rate": 0.5},
    {"name": "gb", "texture": "checkerboard", "period": 10.0, "angle": 0.7,
     "defects": ["blob", "patch-swap"], "intensity": [0.3, 0.55], "anomaly_rate": 0.5},
    {"name": "gc", "texture": "filtered-noise", "smooth_radius": 2.0,
     "defects": ["blob", "scratch"], "intensity": [0.3, 0.55], "anomaly_rate": 0.5}
  ]
})";

const char* kTinyConfig = R"({
  "seed": 3,
  "encoder": {"c": 16, "grid": [4, 4], "taps": 2, "image": [64, 64]},
  "experts": 4, "top_k": 2,
  "optim": {"lr": 0.0005, "epochs": 2, "batch": 8}
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data is deterministic and refuses to clobber") {
  TempDir root("wmoe_cli_gen");
  const auto spec = root.path / "spec.json";
  write_file(spec, kDatasetSpec);

  const auto out1 = root.path / "d1";
  const auto out2 = root.path / "d2";
  CHECK(cli::run({"gen-data", "--spec", spec.string(), "--n", "6", "--seed", "5", "--out",
                  out1.string()}) == 0);
  CHECK(cli::run({"gen-data", "--spec", spec.string(), "--n", "6", "--seed", "5", "--out",
                  out2.string()}) == 0);
  CHECK(read_file(out1 / "index.csv") == read_file(out2 / "index.csv"));
  const auto first_img = synth::read_dataset(out1.string())[0];
  const auto second_img = synth::read_dataset(out2.string())[0];
  CHECK(first_img.pixels == second_img.pixels);

  // refuses an existing non-empty directory without --force
  CHECK(cli::run({"gen-data", "--spec", spec.string(), "--n", "6", "--seed", "5", "--out",
                  out1.string()}) == 2);
  CHECK(cli::run({"gen-data", "--spec", spec.string(), "--n", "6", "--seed", "5", "--out",
                  out1.string(), "--force"}) == 0);
}

TEST_CASE("gen-data rejects an invalid family") {
  TempDir root("wmoe_cli_badfam");
  const auto spec = root.path / "bad.json";
  write_file(spec, R"({"families": [{"name": "x", "texture": "granite"}]})");
  CHECK(cli::run({"gen-data", "--spec", spec.string(), "--n", "4", "--out",
                  (root.path / "d").string()}) == 2);
}

TEST_CASE("train/eval round trip with deterministic checkpoints") {
  TempDir root("wmoe_cli_train");
  const auto spec = root.path / "spec.json";
  const auto config = root.path / "config.json";
  write_file(spec, kDatasetSpec);
  write_file(config, kTinyConfig);
  const auto data = root.path / "data";
  REQUIRE(cli::run({"gen-data", "--spec", spec.string(), "--n", "8", "--seed", "2", "--out",
                    data.string()}) == 0);

  const auto run1 = root.path / "run1";
  const auto run2 = root.path / "run2";
  REQUIRE(cli::run({"train", "--config", config.string(), "--data", data.string(), "--out",
                    run1.string()}) == 0);
  REQUIRE(cli::run({"train", "--config", config.string(), "--data", data.string(), "--out",
                    run2.string()}) == 0);
  CHECK(read_file(run1 / "checkpoint.wmoe") == read_file(run2 / "checkpoint.wmoe"));

  // loss CSV has epochs x steps rows plus the header: 24 images, batch 8 -> 3
  // steps per epoch, 2 epochs
  std::ifstream csv(run1 / "loss.csv");
  std::string line;
  int rows = 0;
  std::getline(csv, line);
  CHECK(line == "epoch,step,global,focal,dice,kl,rec,total");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2 * 3);

  // eval writes a parsable metrics CSV with in-range values
  const auto eval_out = root.path / "eval";
  REQUIRE(cli::run({"eval", "--checkpoint", (run1 / "checkpoint.wmoe").string(), "--data",
                    data.string(), "--out", eval_out.string()}) == 0);
  std::ifstream metrics_csv(eval_out / "metrics.csv");
  std::getline(metrics_csv, line);
  CHECK(line.find("image_auroc") != std::string::npos);
  int metric_rows = 0;
  while (std::getline(metrics_csv, line)) {
    ++metric_rows;
    std::stringstream ss(line);
    std::string field;
    int col = 0;
    while (std::getline(ss, field, ',')) {
      if (col >= 2 && col <= 7 && !field.empty()) {
        const double v = std::stod(field);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      ++col;
    }
  }
  CHECK(metric_rows == 4);  // all + three families
}

TEST_CASE("dumped maps quantize exactly to round(255 * M)") {
  TempDir root("wmoe_cli_maps");
  const auto spec = root.path / "spec.json";
  const auto config = root.path / "config.json";
  write_file(spec, kDatasetSpec);
  write_file(config, kTinyConfig);
  const auto data = root.path / "data";
  REQUIRE(cli::run({"gen-data", "--spec", spec.string(), "--n", "3", "--seed", "4", "--out",
                    data.string()}) == 0);
  const auto run = root.path / "run";
  REQUIRE(cli::run({"train", "--config", config.string(), "--data", data.string(), "--out",
                    run.string()}) == 0);
  const auto eval_out = root.path / "eval";
  REQUIRE(cli::run({"eval", "--checkpoint", (run / "checkpoint.wmoe").string(), "--data",
                    data.string(), "--out", eval_out.string(), "--dump-maps"}) == 0);

  // recompute the fused map through the library and compare quantization
  Model model = checkpoint::load_model((run / "checkpoint.wmoe").string());
  auto images = synth::read_dataset(data.string());
  auto prepared = prepare_samples(model.encoder(), images);
  const auto inf = metrics::run_inference(model, prepared);
  int h = 0, w = 0;
  const auto heat = synth::read_pgm8_gray(
      (eval_out / "maps" / (images[0].id + "_map.pgm")).string(), h, w);
  REQUIRE(heat.size() == inf.fused_maps[0].values.size());
  for (std::size_t i = 0; i < heat.size(); ++i) {
    CHECK(heat[i] == static_cast<unsigned char>(std::lround(
                         255.0 * std::clamp(inf.fused_maps[0].values[i], 0.0, 1.0))));
  }
  // side-by-side file exists with doubled width
  synth::read_pgm8_gray((eval_out / "maps" / (images[0].id + "_side.pgm")).string(), h, w);
  CHECK(w == 128);
}

TEST_CASE("missing inputs and bad configs exit 2") {
  TempDir root("wmoe_cli_err");
  const auto config = root.path / "config.json";
  write_file(config, kTinyConfig);
  CHECK(cli::run({"train", "--config", config.string(), "--data",
                  (root.path / "nope").string(), "--out", (root.path / "o").string()}) == 2);

  const auto bad = root.path / "bad.json";
  write_file(bad, R"({"unknown_key": 1})");
  CHECK(cli::run({"train", "--config", bad.string(), "--data", root.str(), "--out",
                  (root.path / "o2").string()}) == 2);

  // unknown flag is a usage error
  CHECK(cli::run({"train", "--bogus"}) == 2);
  // no subcommand
  CHECK(cli::run({}) == 2);
}

TEST_CASE("corrupted checkpoint is rejected by eval with exit 2") {
  TempDir root("wmoe_cli_corrupt");
  const auto spec = root.path / "spec.json";
  const auto config = root.path / "config.json";
  write_file(spec, kDatasetSpec);
  write_file(config, kTinyConfig);
  const auto data = root.path / "data";
  REQUIRE(cli::run({"gen-data", "--spec", spec.string(), "--n", "3", "--seed", "6", "--out",
                    data.string()}) == 0);
  const auto run = root.path / "run";
  REQUIRE(cli::run({"train", "--config", config.string(), "--data", data.string(), "--out",
                    run.string()}) == 0);

  auto bytes = read_file(run / "checkpoint.wmoe");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
  write_file(run / "checkpoint.wmoe", bytes);
  CHECK(cli::run({"eval", "--checkpoint", (run / "checkpoint.wmoe").string(), "--data",
                  data.string(), "--out", (root.path / "e").string()}) == 2);
}

TEST_CASE("ablate writes the five Table rows in order") {
  TempDir root("wmoe_cli_ablate");
  const auto spec = root.path / "spec.json";
  write_file(spec, kDatasetSpec);
  const auto data = root.path / "data";
  REQUIRE(cli::run({"gen-data", "--spec", spec.string(), "--n", "8", "--seed", "7", "--out",
                    data.string()}) == 0);

  const auto config = root.path / "config.json";
  write_file(config, R"({
    "seed": 3,
    "encoder": {"c": 16, "grid": [4, 4], "taps": 2, "image": [64, 64]},
    "experts": 4, "top_k": 2,
    "optim": {"lr": 0.0005, "epochs": 1, "batch": 8},
    "split": {"train": ["ga", "gb"], "eval": ["gc"]}
  })");
  const auto out = root.path / "ablation";
  REQUIRE(cli::run({"ablate", "--config", config.string(), "--data", data.string(), "--out",
                    out.string()}) == 0);

  std::ifstream csv(out / "ablation.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "ctds,wcma,samoe,image_auroc,pixel_auroc");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) {
    if (!line.empty()) rows.push_back(line);
  }
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].substr(0, 6) == "0,0,0,");
  CHECK(rows[1].substr(0, 6) == "1,0,0,");
  CHECK(rows[2].substr(0, 6) == "1,1,0,");
  CHECK(rows[3].substr(0, 6) == "1,0,1,");
  CHECK(rows[4].substr(0, 6) == "1,1,1,");
}

TEST_CASE("ablate rejects overlapping split families") {
  TempDir root("wmoe_cli_overlap");
  const auto spec = root.path / "spec.json";
  write_file(spec, kDatasetSpec);
  const auto data = root.path / "data";
  REQUIRE(cli::run({"gen-data", "--spec", spec.string(), "--n", "4", "--seed", "8", "--out",
                    data.string()}) == 0);
  const auto config = root.path / "config.json";
  write_file(config, R"({
    "seed": 3,
    "encoder": {"c": 16, "grid": [4, 4], "taps": 2, "image": [64, 64]},
    "experts": 4, "top_k": 2,
    "split": {"train": ["ga", "gb"], "eval": ["ga"]}
  })");
  CHECK(cli::run({"ablate", "--config", config.string(), "--data", data.string(), "--out",
                  (root.path / "out").string()}) == 2);
}

}  // TEST_SUITE
