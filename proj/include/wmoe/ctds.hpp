// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "wmoe/encoders.hpp"
#include "wmoe/rng.hpp"
#include "wmoe/tensor.hpp"

namespace wmoe {

enum class Mode { train, eval };

namespace ctds {

// VAE over the class token: two-layer encoder MLP, mean/log-variance heads,
// two-layer decoder back to feature space.
struct VaeParams {
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // C -> C, hidden C, ReLU
  Tensor w_mu, w_sigma;                   // [C_lat, C], no bias
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;  // C_lat -> C, hidden C, ReLU

  int latent_dim() const { return w_mu.shape()[0]; }
};

struct LatentDraw {
  Tensor mu, log_var;           // [C_lat]
  std::vector<Tensor> samples;  // m latent vectors
  std::vector<Tensor> recon;    // m reconstructions in R^C
};

// Learnable normal/abnormal prompt vectors plus fixed template word lists.
struct PromptState {
  std::vector<Tensor> v_n, v_a;  // m vectors [C] each
  std::vector<std::string> template_n, template_a;
};

// Reparameterized sampling: mu + eps .* exp(log_var / 2). Eval mode sets
// eps = 0, so every draw equals the posterior mean.
LatentDraw encode_sample(const VaeParams& params, const Tensor& x_c, int m, Mode mode, Rng& rng);

// -1/2 sum_i (1 + log var_i - mu_i^2 - var_i), summed over latent dims.
Tensor kl_loss(const Tensor& mu, const Tensor& log_var);

// Squared L2 distance between reconstruction and class token.
Tensor rec_loss(const Tensor& r, const Tensor& x_c);

// Builds the normal/abnormal token sequences. Slot i carries recon[i] + v_i;
// with empty recon the slots are the raw v_i. Template tokens stay frozen.
std::pair<TokenSequence, TokenSequence> build_prompts(const PromptState& prompt,
                                                      const std::vector<Tensor>& recon,
                                                      const FrozenEncoder& enc);

// Row 0: normal embedding, row 1: abnormal embedding. Unit rows.
Tensor text_embeddings(const FrozenEncoder& enc, const TokenSequence& seq_n,
                       const TokenSequence& seq_a);

}  // namespace ctds
}  // namespace wmoe
