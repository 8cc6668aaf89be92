// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <vector>

#include "wmoe/losses.hpp"
#include "wmoe/model.hpp"
#include "wmoe/synth.hpp"

namespace wmoe {

// A dataset sample with its frozen features precomputed (the encoder never
// changes, so features are encoded once per dataset).
struct PreparedSample {
  synth::ImageSample image;
  FeatureBundle bundle;
  Tensor grid_mask;  // any-positive mask at patch-grid resolution, [H, W]
};

std::vector<PreparedSample> prepare_samples(const FrozenEncoder& enc,
                                            const std::vector<synth::ImageSample>& images);

struct TrainConfig {
  AdamConfig adam;
  int epochs = 20;
  int batch = 32;
  LossWeights weights;
  FocalConfig focal;
  double dice_smooth = 1.0;
  std::uint64_t seed = 1;
};

// Builds the full Eq-style composite objective over one batch and returns the
// scalar loss node. Component values (after batch reduction and weighting) go
// into *report when given. rng_seed fixes the reparameterization draws.
Tensor batch_loss(const Model& model, const std::vector<const PreparedSample*>& batch,
                  Mode mode, std::uint64_t rng_seed, const TrainConfig& cfg,
                  LossReport* report);

struct StepRecord {
  int epoch = 0;
  int step = 0;
  LossReport loss;
};

struct TrainResult {
  std::vector<StepRecord> log;
};

// Deterministic given (model seed, data, config). Writes one CSV row per step
// to loss_csv when given (header: epoch,step,global,focal,dice,kl,rec,total).
TrainResult train(Model& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                  std::ostream* loss_csv);

}  // namespace wmoe
