// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "wmoe/ctds.hpp"
#include "wmoe/encoders.hpp"
#include "wmoe/samoe.hpp"
#include "wmoe/wcma.hpp"

namespace wmoe {

struct ModuleToggles {
  bool ctds = true;
  bool wcma = true;
  bool samoe = true;
};

struct ModelConfig {
  EncoderSpec encoder;
  int m = 2;          // learnable tokens per prompt
  int n_experts = 8;  // N
  int top_k = 2;      // k
  double tau = 0.07;  // similarity temperature, shared by maps and image score
  ModuleToggles modules;

  int latent_dim() const { return encoder.C / 2; }
  void validate() const;
};

// The full scoring model. Parameters live in a NamedParamSet; the encoder is
// frozen and owned here. Module toggles decide which parameter groups exist.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  struct Forward {
    wcma::AnomalyOutput maps;  // per-layer maps, fused map, refined text
    Tensor f_t;                // [2, C] prompt embeddings
    Tensor s_txt;              // scalar in (0,1)
    Tensor s_hat_raw;          // s_txt + max(fused), in [0,2]
    Tensor s_hat_norm;         // raw / 2
    Tensor mu, log_var;        // defined iff ctds enabled
    std::vector<Tensor> recon;
    Tensor gate_scores;        // defined iff samoe enabled
  };

  Forward forward(const FeatureBundle& bundle, Mode mode, Rng& rng) const;

  NamedParamSet& params() { return params_; }
  const NamedParamSet& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const FrozenEncoder& encoder() const { return enc_; }

 private:
  void init_params();

  ModelConfig cfg_;
  FrozenEncoder enc_;
  NamedParamSet params_;
  ctds::VaeParams vae_;
  ctds::PromptState prompts_;
  wcma::WcmaParams wcma_;
  samoe::MoeParams moe_;
};

}  // namespace wmoe
