// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "wmoe/metrics.hpp"
#include "wmoe/train.hpp"

using namespace wmoe;

namespace {

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig mc;
  mc.encoder.seed = seed;
  mc.encoder.C = 16;
  mc.encoder.grid_h = mc.encoder.grid_w = 4;
  mc.encoder.n_tap_layers = 2;
  mc.encoder.image_h = mc.encoder.image_w = 64;
  mc.m = 2;
  mc.n_experts = 4;
  mc.top_k = 2;
  return mc;
}

std::vector<synth::ImageSample> small_dataset(int n, std::uint64_t seed) {
  synth::FamilySpec fam;
  fam.name = "train-fam";
  fam.texture = synth::TextureKind::sinusoid_grating;
  fam.anomaly_rate = 0.5;
  return synth::generate(fam, n, seed);
}

TrainConfig small_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = 3;
  tc.batch = 8;
  return tc;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("LossReport total equals the sum of its components") {
  Model model(small_config(1));
  auto prepared = prepare_samples(model.encoder(), small_dataset(4, 2));
  std::vector<const PreparedSample*> batch;
  for (const auto& p : prepared) batch.push_back(&p);

  TrainConfig cfg = small_train_config(1);
  LossReport report;
  batch_loss(model, batch, Mode::train, 7, cfg, &report);
  const double sum =
      report.global + report.local_focal + report.local_dice + report.kl + report.rec;
  CHECK(std::abs(report.total - sum) <= 1e-12);
  CHECK(report.global >= 0.0);
  CHECK(report.local_focal >= 0.0);
  CHECK(report.local_dice >= 0.0);
  CHECK(report.rec >= 0.0);
  CHECK(std::isfinite(report.kl));
}

TEST_CASE("epoch-0 loss is bit-reproducible across runs") {
  auto run_once = [] {
    Model model(small_config(5));
    auto prepared = prepare_samples(model.encoder(), small_dataset(8, 6));
    TrainConfig cfg = small_train_config(5);
    cfg.epochs = 1;
    std::ostringstream csv;
    auto result = train(model, prepared, cfg, &csv);
    return std::pair{result.log.front().loss.total, csv.str()};
  };
  const auto [loss1, csv1] = run_once();
  const auto [loss2, csv2] = run_once();
  CHECK(std::memcmp(&loss1, &loss2, sizeof(double)) == 0);
  CHECK(csv1 == csv2);
}

TEST_CASE("two train runs produce bit-identical parameters") {
  auto run_once = [] {
    Model model(small_config(9));
    auto prepared = prepare_samples(model.encoder(), small_dataset(12, 10));
    train(model, prepared, small_train_config(9), nullptr);
    std::vector<double> flat;
    for (const auto& [name, t] : model.params()) {
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    }
    return flat;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("20 repeated steps on one 16-image batch decrease the 5-step moving average") {
  Model model(small_config(11));
  auto prepared = prepare_samples(model.encoder(), small_dataset(16, 12));
  TrainConfig cfg = small_train_config(11);
  cfg.epochs = 20;  // batch 16 over 16 images: one step per epoch
  cfg.batch = 16;
  cfg.adam.lr = 1e-3;
  auto result = train(model, prepared, cfg, nullptr);
  REQUIRE(result.log.size() == 20);
  std::vector<double> ma;
  for (std::size_t i = 0; i + 5 <= result.log.size(); ++i) {
    double s = 0;
    for (std::size_t j = i; j < i + 5; ++j) s += result.log[j].loss.total;
    ma.push_back(s / 5);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] < ma[i - 1]);
}

TEST_CASE("frozen encoder weights are untouched by training") {
  Model model(small_config(13));
  const auto before = model.encoder().weight_snapshot();
  auto prepared = prepare_samples(model.encoder(), small_dataset(8, 14));
  train(model, prepared, small_train_config(13), nullptr);
  CHECK(model.encoder().weight_snapshot() == before);
}

TEST_CASE("gradient fidelity of the full composite loss on a 2-image batch") {
  Model model(small_config(15));
  auto prepared = prepare_samples(model.encoder(), small_dataset(2, 16));
  std::vector<const PreparedSample*> batch;
  for (const auto& p : prepared) batch.push_back(&p);
  TrainConfig cfg = small_train_config(15);
  auto f = [&](NamedParamSet&) {
    return batch_loss(model, batch, Mode::train, 99, cfg, nullptr);
  };
  CHECK(grad_check(f, model.params(), 1e-5, 4, 17) <= 1e-5);
}

TEST_CASE("toggles remove their loss terms and parameters") {
  ModelConfig mc = small_config(19);
  mc.modules = {false, false, false};
  Model baseline(mc);
  // baseline has only the 2m prompt vectors
  CHECK(baseline.params().size() == static_cast<std::size_t>(2 * mc.m));

  auto prepared = prepare_samples(baseline.encoder(), small_dataset(4, 20));
  std::vector<const PreparedSample*> batch;
  for (const auto& p : prepared) batch.push_back(&p);
  LossReport report;
  batch_loss(baseline, batch, Mode::train, 3, small_train_config(19), &report);
  CHECK(report.kl == 0.0);
  CHECK(report.rec == 0.0);
  CHECK(report.total > 0.0);
}

TEST_CASE("overfit sanity: training-set AUROC climbs near 1") {
  Model model(small_config(21));
  auto prepared = prepare_samples(model.encoder(), small_dataset(16, 22));
  TrainConfig cfg = small_train_config(21);
  cfg.epochs = 60;
  cfg.batch = 16;
  cfg.adam.lr = 2e-3;
  train(model, prepared, cfg, nullptr);
  const auto report = metrics::evaluate(model, prepared, 0);
  REQUIRE(report.image_auroc.has_value());
  CHECK(*report.image_auroc >= 0.9);
}

TEST_CASE("empty dataset and bad config are rejected") {
  Model model(small_config(23));
  CHECK_THROWS_AS(train(model, {}, small_train_config(23), nullptr), config_error);
}

TEST_CASE("evaluate is deterministic") {
  Model model(small_config(25));
  auto prepared = prepare_samples(model.encoder(), small_dataset(10, 26));
  const auto r1 = metrics::evaluate(model, prepared, 1);
  const auto r2 = metrics::evaluate(model, prepared, 1);
  CHECK(r1.image_auroc == r2.image_auroc);
  CHECK(r1.pixel_auroc == r2.pixel_auroc);
  CHECK(r1.pixel_pro == r2.pixel_pro);
}

}  // TEST_SUITE
