// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "wmoe/model.hpp"
#include "wmoe/synth.hpp"
#include "wmoe/train.hpp"

namespace wmoe {

// Full run configuration. JSON parsing is strict: unknown keys are rejected,
// every field has a default (paper values where the paper specifies them).
struct RunConfig {
  std::uint64_t seed = 1;
  EncoderSpec encoder;  // seed is mirrored from the top-level seed
  int m = 2;
  int n_experts = 8;
  int top_k = 2;
  double tau = 0.07;
  FocalConfig focal;
  double dice_smooth = 1.0;
  LossWeights weights;
  AdamConfig adam;
  int epochs = 20;
  int batch = 32;
  ModuleToggles modules;
  std::set<std::string> train_families, eval_families;  // used by the ablation harness

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
};

// Dataset generation spec: image size plus a list of family definitions.
struct DatasetSpec {
  std::vector<synth::FamilySpec> families;

  static DatasetSpec from_json(const nlohmann::json& j);
  static DatasetSpec from_file(const std::string& path);
};

}  // namespace wmoe
