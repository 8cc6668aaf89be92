// SPDX-License-Identifier: Apache-2.0
#include "wmoe/train.hpp"

#include <cmath>
#include <ostream>

#include "wmoe/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmoe {

std::vector<PreparedSample> prepare_samples(const FrozenEncoder& enc,
                                            const std::vector<synth::ImageSample>& images) {
  std::vector<PreparedSample> out(images.size());
  const int H = enc.spec().grid_h, W = enc.spec().grid_w;
  const int nt = kernels::max_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(dynamic) if (nt > 1)
#endif
  for (long i = 0; i < static_cast<long>(images.size()); ++i) {
    const auto& img = images[i];
    PreparedSample ps;
    ps.image = img;
    ps.bundle = enc.encode_image(Tensor::from(img.pixels, {img.h, img.w}));
    ps.grid_mask = Tensor::from(downsample_mask_any(img.mask, img.h, img.w, H, W), {H, W});
    out[i] = std::move(ps);
  }
  return out;
}

namespace {

Tensor add_into(Tensor acc, const Tensor& term) {
  return acc.defined() ? add(acc, term) : term;
}

}  // namespace

Tensor batch_loss(const Model& model, const std::vector<const PreparedSample*>& batch,
                  Mode mode, std::uint64_t rng_seed, const TrainConfig& cfg,
                  LossReport* report) {
  if (batch.empty()) throw contract_error("batch_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const int m = model.config().m;

  Rng rng(rng_seed);
  Tensor global_sum, focal_sum, dice_sum, kl_sum, rec_sum;
  std::vector<Tensor> gate_probs;  // per-image full softmax over gate scores

  for (const PreparedSample* ps : batch) {
    Model::Forward fwd = model.forward(ps->bundle, mode, rng);
    global_sum = add_into(global_sum, bce(ps->image.label, fwd.s_hat_norm));
    for (const Tensor& m_l : fwd.maps.per_layer) {
      focal_sum = add_into(focal_sum, focal(m_l, ps->grid_mask, cfg.focal.gamma, cfg.focal.alpha));
      dice_sum = add_into(dice_sum, dice(m_l, ps->grid_mask, cfg.dice_smooth));
    }
    if (model.config().modules.ctds) {
      kl_sum = add_into(kl_sum, ctds::kl_loss(fwd.mu, fwd.log_var));
      Tensor rec_i;
      for (const Tensor& r : fwd.recon) rec_i = add_into(rec_i, ctds::rec_loss(r, ps->bundle.x_c));
      rec_sum = add_into(rec_sum, mul_scalar(rec_i, 1.0 / m));
    }
    if (cfg.weights.moe_balance > 0.0 && fwd.gate_scores.defined()) {
      gate_probs.push_back(softmax(fwd.gate_scores, 0));
    }
  }

  Tensor global_t = mul_scalar(global_sum, cfg.weights.global * inv_b);
  Tensor focal_t = mul_scalar(focal_sum, cfg.weights.focal * inv_b);
  Tensor dice_t = mul_scalar(dice_sum, cfg.weights.dice * inv_b);
  Tensor total = add(add(global_t, focal_t), dice_t);

  Tensor kl_t, rec_t;
  if (kl_sum.defined()) {
    kl_t = mul_scalar(kl_sum, cfg.weights.kl * inv_b);
    rec_t = mul_scalar(rec_sum, cfg.weights.rec * inv_b);
    total = add(total, add(kl_t, rec_t));
  }

  if (!gate_probs.empty()) {
    // importance balancing: squared coefficient of variation of the summed
    // gate probabilities across the batch
    Tensor importance;
    for (const Tensor& p : gate_probs) importance = add_into(importance, p);
    Tensor mu = mean(importance);
    Tensor centered = sub(importance, scale_by(Tensor::full(importance.shape(), 1.0), mu));
    Tensor var = mean(square(centered));
    Tensor cv2 = div(var, add_scalar(square(mu), 1e-12));
    total = add(total, mul_scalar(cv2, cfg.weights.moe_balance));
  }

  if (report) {
    report->global = global_t.value();
    report->local_focal = focal_t.value();
    report->local_dice = dice_t.value();
    report->kl = kl_t.defined() ? kl_t.value() : 0.0;
    report->rec = rec_t.defined() ? rec_t.value() : 0.0;
    report->total = total.value();
  }
  return total;
}

TrainResult train(Model& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                  std::ostream* loss_csv) {
  if (data.empty()) throw config_error("train: dataset is empty");
  if (cfg.epochs < 1 || cfg.batch < 1) throw config_error("train: epochs and batch must be >= 1");

  Adam optimizer(cfg.adam);
  TrainResult result;
  if (loss_csv) (*loss_csv) << "epoch,step,global,focal,dice,kl,rec,total\n";

  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // seeded Fisher-Yates, independent of library shuffle internals
    Rng shuffle_rng(mix_seed(cfg.seed, fnv1a("shuffle"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.below(i);
      std::swap(order[i - 1], order[j]);
    }

    const int steps = static_cast<int>((data.size() + cfg.batch - 1) / cfg.batch);
    for (int step = 0; step < steps; ++step) {
      std::vector<const PreparedSample*> batch;
      const std::size_t begin = static_cast<std::size_t>(step) * cfg.batch;
      const std::size_t end = std::min(begin + cfg.batch, data.size());
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);

      LossReport report;
      const std::uint64_t draw_seed =
          mix_seed(cfg.seed, fnv1a("draw"), static_cast<std::uint64_t>(epoch),
                   static_cast<std::uint64_t>(step));
      Tensor loss = batch_loss(model, batch, Mode::train, draw_seed, cfg, &report);

      const struct {
        const char* name;
        double v;
      } components[] = {{"global", report.global}, {"focal", report.local_focal},
                        {"dice", report.local_dice}, {"kl", report.kl},
                        {"rec", report.rec},         {"total", report.total}};
      for (const auto& c : components) {
        if (!std::isfinite(c.v)) {
          throw numeric_error("train: non-finite " + std::string(c.name) + " loss at epoch " +
                              std::to_string(epoch) + " step " + std::to_string(step));
        }
      }

      backward(loss);
      optimizer.step(model.params());

      result.log.push_back({epoch, step, report});
      if (loss_csv) {
        (*loss_csv) << epoch << ',' << step << ',' << report.global << ',' << report.local_focal
                    << ',' << report.local_dice << ',' << report.kl << ',' << report.rec << ','
                    << report.total << '\n';
      }
    }
  }
  return result;
}

}  // namespace wmoe
