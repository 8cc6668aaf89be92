// SPDX-License-Identifier: Apache-2.0
#include "wmoe/ctds.hpp"

namespace wmoe::ctds {

namespace {

Tensor two_layer(const Tensor& x_row, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2) {
  return linear(relu(linear(x_row, w1, b1)), w2, b2);
}

}  // namespace

LatentDraw encode_sample(const VaeParams& params, const Tensor& x_c, int m, Mode mode, Rng& rng) {
  if (m < 1) throw contract_error("encode_sample: m must be >= 1");
  if (!x_c.defined() || x_c.rank() != 1) throw dim_error("encode_sample: x_c must be rank-1");
  const int c = x_c.shape()[0];
  const int c_lat = params.latent_dim();

  Tensor x_row = reshape(x_c, {1, c});
  Tensor feat = two_layer(x_row, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2);

  LatentDraw draw;
  draw.mu = reshape(matmul_nt(feat, params.w_mu), {c_lat});
  draw.log_var = reshape(matmul_nt(feat, params.w_sigma), {c_lat});
  Tensor std_dev = exp_op(mul_scalar(draw.log_var, 0.5));

  for (int i = 0; i < m; ++i) {
    Tensor sample;
    if (mode == Mode::train) {
      std::vector<double> eps(c_lat);
      for (auto& e : eps) e = rng.gaussian();
      sample = add(draw.mu, mul(Tensor::from(std::move(eps), {c_lat}), std_dev));
    } else {
      sample = draw.mu;
    }
    draw.samples.push_back(sample);
    Tensor r = two_layer(reshape(sample, {1, c_lat}), params.dec_w1, params.dec_b1,
                         params.dec_w2, params.dec_b2);
    draw.recon.push_back(reshape(r, {c}));
  }
  return draw;
}

Tensor kl_loss(const Tensor& mu, const Tensor& log_var) {
  if (mu.shape() != log_var.shape()) {
    throw dim_error("kl_loss: shape mismatch " + shape_str(mu.shape()) + " vs " +
                    shape_str(log_var.shape()));
  }
  // -1/2 * sum(1 + log_var - mu^2 - exp(log_var))
  Tensor term = sub(add_scalar(log_var, 1.0), add(square(mu), exp_op(log_var)));
  return mul_scalar(sum(term), -0.5);
}

Tensor rec_loss(const Tensor& r, const Tensor& x_c) {
  if (r.shape() != x_c.shape()) {
    throw dim_error("rec_loss: shape mismatch " + shape_str(r.shape()) + " vs " +
                    shape_str(x_c.shape()));
  }
  return sum(square(sub(r, x_c)));
}

std::pair<TokenSequence, TokenSequence> build_prompts(const PromptState& prompt,
                                                      const std::vector<Tensor>& recon,
                                                      const FrozenEncoder& enc) {
  const std::size_t m = prompt.v_n.size();
  if (prompt.v_a.size() != m) throw contract_error("build_prompts: v_n/v_a length mismatch");
  if (!recon.empty() && recon.size() != m) {
    throw contract_error("build_prompts: expected " + std::to_string(m) +
                         " reconstructions, got " + std::to_string(recon.size()));
  }

  auto assemble = [&](const std::vector<std::string>& words,
                      const std::vector<Tensor>& slots) {
    TokenSequence seq;
    std::vector<Tensor> rows;
    for (const auto& w : words) {
      rows.push_back(enc.word_embedding(w));
      seq.slot_mask.push_back(false);
    }
    for (const auto& s : slots) {
      rows.push_back(s);
      seq.slot_mask.push_back(true);
    }
    seq.tokens = stack_rows(rows);
    return seq;
  };

  std::vector<Tensor> slots_n, slots_a;
  for (std::size_t i = 0; i < m; ++i) {
    if (recon.empty()) {
      slots_n.push_back(prompt.v_n[i]);
      slots_a.push_back(prompt.v_a[i]);
    } else {
      slots_n.push_back(add(recon[i], prompt.v_n[i]));
      slots_a.push_back(add(recon[i], prompt.v_a[i]));
    }
  }
  return {assemble(prompt.template_n, slots_n), assemble(prompt.template_a, slots_a)};
}

Tensor text_embeddings(const FrozenEncoder& enc, const TokenSequence& seq_n,
                       const TokenSequence& seq_a) {
  return stack_rows({enc.encode_text(seq_n), enc.encode_text(seq_a)});
}

}  // namespace wmoe::ctds
