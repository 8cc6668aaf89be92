// SPDX-License-Identifier: Apache-2.0
#include "wmoe/config.hpp"

#include <fstream>

namespace wmoe {

using nlohmann::json;

namespace {

void expect_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw config_error(ctx + ": expected a JSON object");
}

void reject_unknown(const json& j, const std::string& ctx,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw config_error(ctx + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(ctx + ": bad value for '" + key + "': " + e.what());
  }
}

std::pair<int, int> get_pair(const json& j, const char* key, std::pair<int, int> fallback,
                             const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw config_error(ctx + ": '" + std::string(key) + "' must be a pair of integers");
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.encoder = encoder;
  mc.encoder.seed = seed;
  mc.m = m;
  mc.n_experts = n_experts;
  mc.top_k = top_k;
  mc.tau = tau;
  mc.modules = modules;
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.adam = adam;
  tc.epochs = epochs;
  tc.batch = batch;
  tc.weights = weights;
  tc.focal = focal;
  tc.dice_smooth = dice_smooth;
  tc.seed = seed;
  return tc;
}

void RunConfig::validate() const {
  model_config().validate();
  if (epochs < 1) throw config_error("config: epochs must be >= 1");
  if (batch < 1) throw config_error("config: batch must be >= 1");
  if (adam.lr <= 0.0) throw config_error("config: lr must be positive");
  if (focal.gamma < 0.0) throw config_error("config: gamma must be >= 0");
  if (focal.alpha < 0.0 || focal.alpha > 1.0) throw config_error("config: alpha must be in [0,1]");
  if (dice_smooth < 0.0) throw config_error("config: smooth must be >= 0");
  if (weights.global < 0 || weights.focal < 0 || weights.dice < 0 || weights.kl < 0 ||
      weights.rec < 0 || weights.moe_balance < 0) {
    throw config_error("config: loss weights must be >= 0");
  }
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["encoder"] = {{"c", encoder.C},
                  {"grid", {encoder.grid_h, encoder.grid_w}},
                  {"taps", encoder.n_tap_layers},
                  {"image", {encoder.image_h, encoder.image_w}}};
  j["m"] = m;
  j["experts"] = n_experts;
  j["top_k"] = top_k;
  j["tau"] = tau;
  j["loss"] = {{"gamma", focal.gamma},
               {"alpha", focal.alpha},
               {"smooth", dice_smooth},
               {"weights",
                {{"global", weights.global},
                 {"focal", weights.focal},
                 {"dice", weights.dice},
                 {"kl", weights.kl},
                 {"rec", weights.rec},
                 {"moe_balance", weights.moe_balance}}}};
  j["optim"] = {{"lr", adam.lr},     {"beta1", adam.beta1}, {"beta2", adam.beta2},
                {"eps", adam.eps},   {"epochs", epochs},    {"batch", batch}};
  j["modules"] = {{"ctds", modules.ctds}, {"wcma", modules.wcma}, {"samoe", modules.samoe}};
  if (!train_families.empty() || !eval_families.empty()) {
    j["split"] = {{"train", train_families}, {"eval", eval_families}};
  }
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  expect_object(j, "config");
  reject_unknown(j, "config",
                 {"seed", "encoder", "m", "experts", "top_k", "tau", "loss", "optim", "modules",
                  "split"});
  RunConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "config");

  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    expect_object(e, "config.encoder");
    reject_unknown(e, "config.encoder", {"c", "grid", "taps", "image"});
    c.encoder.C = get_or<int>(e, "c", c.encoder.C, "config.encoder");
    std::tie(c.encoder.grid_h, c.encoder.grid_w) =
        get_pair(e, "grid", {c.encoder.grid_h, c.encoder.grid_w}, "config.encoder");
    c.encoder.n_tap_layers = get_or<int>(e, "taps", c.encoder.n_tap_layers, "config.encoder");
    std::tie(c.encoder.image_h, c.encoder.image_w) =
        get_pair(e, "image", {c.encoder.image_h, c.encoder.image_w}, "config.encoder");
  }
  c.m = get_or<int>(j, "m", c.m, "config");
  c.n_experts = get_or<int>(j, "experts", c.n_experts, "config");
  c.top_k = get_or<int>(j, "top_k", c.top_k, "config");
  c.tau = get_or<double>(j, "tau", c.tau, "config");

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    expect_object(l, "config.loss");
    reject_unknown(l, "config.loss", {"gamma", "alpha", "smooth", "weights"});
    c.focal.gamma = get_or<double>(l, "gamma", c.focal.gamma, "config.loss");
    c.focal.alpha = get_or<double>(l, "alpha", c.focal.alpha, "config.loss");
    c.dice_smooth = get_or<double>(l, "smooth", c.dice_smooth, "config.loss");
    if (l.contains("weights")) {
      const json& w = l.at("weights");
      expect_object(w, "config.loss.weights");
      reject_unknown(w, "config.loss.weights",
                     {"global", "focal", "dice", "kl", "rec", "moe_balance"});
      c.weights.global = get_or<double>(w, "global", 1.0, "config.loss.weights");
      c.weights.focal = get_or<double>(w, "focal", 1.0, "config.loss.weights");
      c.weights.dice = get_or<double>(w, "dice", 1.0, "config.loss.weights");
      c.weights.kl = get_or<double>(w, "kl", 1.0, "config.loss.weights");
      c.weights.rec = get_or<double>(w, "rec", 1.0, "config.loss.weights");
      c.weights.moe_balance = get_or<double>(w, "moe_balance", 0.0, "config.loss.weights");
    }
  }

  if (j.contains("optim")) {
    const json& o = j.at("optim");
    expect_object(o, "config.optim");
    reject_unknown(o, "config.optim", {"lr", "beta1", "beta2", "eps", "epochs", "batch"});
    c.adam.lr = get_or<double>(o, "lr", c.adam.lr, "config.optim");
    c.adam.beta1 = get_or<double>(o, "beta1", c.adam.beta1, "config.optim");
    c.adam.beta2 = get_or<double>(o, "beta2", c.adam.beta2, "config.optim");
    c.adam.eps = get_or<double>(o, "eps", c.adam.eps, "config.optim");
    c.epochs = get_or<int>(o, "epochs", c.epochs, "config.optim");
    c.batch = get_or<int>(o, "batch", c.batch, "config.optim");
  }

  if (j.contains("modules")) {
    const json& mo = j.at("modules");
    expect_object(mo, "config.modules");
    reject_unknown(mo, "config.modules", {"ctds", "wcma", "samoe"});
    c.modules.ctds = get_or<bool>(mo, "ctds", true, "config.modules");
    c.modules.wcma = get_or<bool>(mo, "wcma", true, "config.modules");
    c.modules.samoe = get_or<bool>(mo, "samoe", true, "config.modules");
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    expect_object(s, "config.split");
    reject_unknown(s, "config.split", {"train", "eval"});
    auto families = [&](const char* key) {
      std::set<std::string> out;
      if (s.contains(key)) {
        for (const auto& f : s.at(key)) out.insert(f.get<std::string>());
      }
      return out;
    };
    c.train_families = families("train");
    c.eval_families = families("eval");
  }

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error(path + ": cannot open config file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

// --- dataset spec -----------------------------------------------------------

DatasetSpec DatasetSpec::from_json(const json& j) {
  expect_object(j, "dataset spec");
  reject_unknown(j, "dataset spec", {"image", "families"});
  std::pair<int, int> image = get_pair(j, "image", {64, 64}, "dataset spec");
  if (!j.contains("families") || !j.at("families").is_array() || j.at("families").empty()) {
    throw config_error("dataset spec: 'families' must be a non-empty array");
  }
  DatasetSpec spec;
  std::set<std::string> seen;
  for (const json& f : j.at("families")) {
    expect_object(f, "dataset spec family");
    reject_unknown(f, "dataset spec family",
                   {"name", "texture", "period", "angle", "smooth_radius", "defects",
                    "intensity", "anomaly_rate"});
    synth::FamilySpec fam;
    fam.image_h = image.first;
    fam.image_w = image.second;
    if (!f.contains("name")) throw config_error("dataset spec family: missing 'name'");
    fam.name = f.at("name").get<std::string>();
    if (!seen.insert(fam.name).second) {
      throw config_error("dataset spec: duplicate family '" + fam.name + "'");
    }
    if (f.contains("texture")) {
      fam.texture = synth::texture_from_name(f.at("texture").get<std::string>());
    }
    fam.period = get_or<double>(f, "period", fam.period, "family " + fam.name);
    fam.angle = get_or<double>(f, "angle", fam.angle, "family " + fam.name);
    fam.smooth_radius =
        get_or<double>(f, "smooth_radius", fam.smooth_radius, "family " + fam.name);
    if (f.contains("defects")) {
      fam.defects.clear();
      for (const auto& d : f.at("defects")) {
        fam.defects.push_back(synth::defect_from_name(d.get<std::string>()));
      }
    }
    if (f.contains("intensity")) {
      const json& iv = f.at("intensity");
      if (!iv.is_array() || iv.size() != 2) {
        throw config_error("family " + fam.name + ": 'intensity' must be [lo, hi]");
      }
      fam.intensity_lo = iv[0].get<double>();
      fam.intensity_hi = iv[1].get<double>();
    }
    fam.anomaly_rate = get_or<double>(f, "anomaly_rate", fam.anomaly_rate, "family " + fam.name);
    fam.validate();
    spec.families.push_back(std::move(fam));
  }
  return spec;
}

DatasetSpec DatasetSpec::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error(path + ": cannot open dataset spec");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace wmoe
