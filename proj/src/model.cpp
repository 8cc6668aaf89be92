// SPDX-License-Identifier: Apache-2.0
#include "wmoe/model.hpp"

#include <cmath>

namespace wmoe {

void ModelConfig::validate() const {
  encoder.validate();
  if (m < 1) throw config_error("model: m must be >= 1");
  if (n_experts < 1) throw config_error("model: experts must be >= 1");
  if (top_k < 1 || top_k > n_experts) {
    throw config_error("model: top_k must be in [1, experts], got " + std::to_string(top_k));
  }
  if (tau <= 0.0) throw config_error("model: tau must be positive");
  if (encoder.C % 2 != 0) throw config_error("model: C must be even for the latent projection");
  if (modules.samoe && encoder.C % encoder.n_tap_layers != 0) {
    throw config_error("model: C (" + std::to_string(encoder.C) +
                       ") not divisible by tapped layer count (" +
                       std::to_string(encoder.n_tap_layers) + ")");
  }
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg), enc_(cfg.encoder) {
  cfg_.validate();
  init_params();
}

void Model::init_params() {
  const int C = cfg_.encoder.C;
  const int C_lat = cfg_.latent_dim();
  const int L = cfg_.encoder.n_tap_layers;
  const std::uint64_t seed = cfg_.encoder.seed;

  auto param = [&](const std::string& path, int rows, int cols_or_zero) {
    // fan-in init, uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    const bool is_vec = cols_or_zero == 0;
    const int fan_in = is_vec ? rows : cols_or_zero;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::size_t n = is_vec ? rows : static_cast<std::size_t>(rows) * cols_or_zero;
    Rng rng(mix_seed(seed, fnv1a("param"), fnv1a(path)));
    std::vector<double> data(n);
    for (auto& v : data) v = rng.uniform(-bound, bound);
    Tensor t = Tensor::from(std::move(data), is_vec ? Shape{rows} : Shape{rows, cols_or_zero},
                            /*requires_grad=*/true);
    params_.insert(path, t);
    return t;
  };
  // bias fan-in follows the weight it pairs with
  auto bias = [&](const std::string& path, int n, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(mix_seed(seed, fnv1a("param"), fnv1a(path)));
    std::vector<double> data(n);
    for (auto& v : data) v = rng.uniform(-bound, bound);
    Tensor t = Tensor::from(std::move(data), {n}, /*requires_grad=*/true);
    params_.insert(path, t);
    return t;
  };

  prompts_.template_n = {"a", "photo", "of", "a", "good"};
  prompts_.template_a = {"a", "photo", "of", "a", "damaged"};
  for (int i = 0; i < cfg_.m; ++i) {
    prompts_.v_n.push_back(param("prompts.v_n." + std::to_string(i), C, 0));
    prompts_.v_a.push_back(param("prompts.v_a." + std::to_string(i), C, 0));
  }

  if (cfg_.modules.ctds) {
    vae_.mlp_w1 = param("ctds.mlp.w1", C, C);
    vae_.mlp_b1 = bias("ctds.mlp.b1", C, C);
    vae_.mlp_w2 = param("ctds.mlp.w2", C, C);
    vae_.mlp_b2 = bias("ctds.mlp.b2", C, C);
    vae_.w_mu = param("ctds.w_mu", C_lat, C);
    vae_.w_sigma = param("ctds.w_sigma", C_lat, C);
    vae_.dec_w1 = param("ctds.dec.w1", C, C_lat);
    vae_.dec_b1 = bias("ctds.dec.b1", C, C_lat);
    vae_.dec_w2 = param("ctds.dec.w2", C, C);
    vae_.dec_b2 = bias("ctds.dec.b2", C, C);
  }

  if (cfg_.modules.wcma) {
    wcma_.w1 = param("wcma.w1", C, C);
    wcma_.w2 = param("wcma.w2", C, C);
    wcma_.pconv_w = param("wcma.pconv.w", C, C);
    wcma_.pconv_b = bias("wcma.pconv.b", C, C);
    wcma_.wq = param("wcma.wq", C, C);
    wcma_.wk = param("wcma.wk", C, C);
    wcma_.wv = param("wcma.wv", C, C);
  }

  if (cfg_.modules.samoe) {
    const int c_out = C / L;
    for (int l = 0; l < L; ++l) {
      Tensor w = param("samoe.adapter." + std::to_string(l) + ".w", c_out, C);
      Tensor b = bias("samoe.adapter." + std::to_string(l) + ".b", c_out, C);
      moe_.adapters.emplace_back(w, b);
    }
    moe_.gate_w = param("samoe.gate.w", cfg_.n_experts, C);
    moe_.gate_b = bias("samoe.gate.b", cfg_.n_experts, C);
    for (int n = 0; n < cfg_.n_experts; ++n) {
      const std::string base = "samoe.expert." + std::to_string(n) + ".";
      samoe::Expert e;
      e.w1 = param(base + "w1", C, C);
      e.b1 = bias(base + "b1", C, C);
      e.w2 = param(base + "w2", C, C);
      e.b2 = bias(base + "b2", C, C);
      moe_.experts.push_back(e);
    }
    moe_.top_k = cfg_.top_k;
  }
}

Model::Forward Model::forward(const FeatureBundle& bundle, Mode mode, Rng& rng) const {
  bundle.validate();
  const int C = cfg_.encoder.C;
  if (bundle.x_c.shape()[0] != C) {
    throw dim_error("forward: bundle C " + std::to_string(bundle.x_c.shape()[0]) +
                    " does not match model C " + std::to_string(C));
  }
  if (static_cast<int>(bundle.layers.size()) != cfg_.encoder.n_tap_layers) {
    throw dim_error("forward: bundle has " + std::to_string(bundle.layers.size()) +
                    " layers, model expects " + std::to_string(cfg_.encoder.n_tap_layers));
  }

  Forward fwd;
  std::vector<Tensor> grids;
  for (const auto& [id, g] : bundle.layers) grids.push_back(g);

  std::vector<Tensor> recon;
  if (cfg_.modules.ctds) {
    ctds::LatentDraw draw = ctds::encode_sample(vae_, bundle.x_c, cfg_.m, mode, rng);
    fwd.mu = draw.mu;
    fwd.log_var = draw.log_var;
    fwd.recon = draw.recon;
    recon = draw.recon;
  }
  auto [seq_n, seq_a] = ctds::build_prompts(prompts_, recon, enc_);
  fwd.f_t = ctds::text_embeddings(enc_, seq_n, seq_a);

  for (const auto& grid : grids) {
    if (cfg_.modules.wcma) {
      wcma::WaveletBands bands = wcma::haar_decompose(grid);
      Tensor f_hi = wcma::high_freq_aggregate(bands);
      Tensor f_p = wcma::frequency_attention(wcma_, bands.lo, f_hi);
      Tensor f_t_ref = wcma::cross_attend(wcma_, fwd.f_t, f_p);
      fwd.maps.refined_text.push_back(f_t_ref);
      fwd.maps.per_layer.push_back(wcma::anomaly_map(f_t_ref, f_p, cfg_.tau));
    } else {
      fwd.maps.per_layer.push_back(wcma::anomaly_map(fwd.f_t, grid, cfg_.tau));
    }
  }
  fwd.maps.fused = wcma::fuse_maps(fwd.maps.per_layer, cfg_.encoder.image_h, cfg_.encoder.image_w);

  Tensor x_p;
  if (cfg_.modules.samoe) {
    Tensor x_a = samoe::adapter_pool(moe_, grids);
    samoe::RouterOutput routing = samoe::route(moe_, x_a);
    fwd.gate_scores = routing.scores;
    x_p = samoe::moe_aggregate(moe_, routing, x_a);
  } else {
    x_p = Tensor::zeros({C});
  }
  fwd.s_txt = samoe::image_score(x_p, bundle.x_c, fwd.f_t, cfg_.tau);

  samoe::FinalScore fs = samoe::final_score(fwd.s_txt, fwd.maps.fused);
  fwd.s_hat_raw = fs.raw;
  fwd.s_hat_norm = fs.norm;
  return fwd;
}

}  // namespace wmoe
