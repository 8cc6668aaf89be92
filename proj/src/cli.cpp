// SPDX-License-Identifier: Apache-2.0
#include "wmoe/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "wmoe/checkpoint.hpp"
#include "wmoe/config.hpp"
#include "wmoe/kernels.hpp"
#include "wmoe/metrics.hpp"
#include "wmoe/synth.hpp"
#include "wmoe/train.hpp"

namespace fs = std::filesystem;

namespace wmoe::cli {

namespace {

// WMOE_THREADS caps worker threads; without it data generation and
// evaluation use all cores while training stays single-threaded.
void apply_thread_policy(bool training) {
  if (const char* env = std::getenv("WMOE_THREADS")) {
    try {
      kernels::set_max_threads(std::max(1, std::stoi(env)));
      return;
    } catch (const std::exception&) {
      throw config_error("WMOE_THREADS is not an integer");
    }
  }
  kernels::set_max_threads(training ? 1 : kernels::hardware_threads());
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

void write_metrics_csv(std::ostream& os, const std::string& split, const std::string& family,
                       const metrics::MetricsReport& r, bool header) {
  if (header) {
    os << "split,family,image_auroc,image_f1max,image_ap,pixel_auroc,pixel_ap,pixel_pro,"
          "n_images,n_image_pos,n_image_neg,n_pixels,n_pixel_pos,n_pixel_neg,"
          "pixels_evaluated\n";
  }
  os << split << ',' << family << ',' << fmt_opt(r.image_auroc) << ',' << fmt_opt(r.image_f1max)
     << ',' << fmt_opt(r.image_ap) << ',' << fmt_opt(r.pixel_auroc) << ',' << fmt_opt(r.pixel_ap)
     << ',' << fmt_opt(r.pixel_pro) << ',' << r.n_images << ',' << r.n_image_pos << ','
     << r.n_image_neg << ',' << r.n_pixels << ',' << r.n_pixel_pos << ',' << r.n_pixel_neg << ','
     << r.pixels_evaluated << '\n';
}

int cmd_gen_data(const std::string& spec_path, int n, std::uint64_t seed,
                 const std::string& out_dir, bool force) {
  const DatasetSpec spec = DatasetSpec::from_file(spec_path);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw config_error(out_dir + " exists and is not empty; pass --force to overwrite");
  }
  apply_thread_policy(/*training=*/false);

  std::vector<synth::ImageSample> all;
  for (const auto& family : spec.families) {
    auto samples = synth::generate(family, n, mix_seed(seed, fnv1a(family.name)));
    all.insert(all.end(), samples.begin(), samples.end());
  }
  synth::write_dataset(all, out_dir);

  for (const auto& family : spec.families) {
    long normal = 0, anomalous = 0;
    for (const auto& s : all) {
      if (s.family == family.name) (s.label ? anomalous : normal)++;
    }
    std::cout << family.name << ": " << normal << " normal, " << anomalous << " anomalous\n";
  }
  std::cout << "wrote " << all.size() << " samples to " << out_dir << "\n";
  return 0;
}

std::vector<synth::ImageSample> load_train_images(const RunConfig& config,
                                                  const std::string& data_dir) {
  std::vector<synth::ImageSample> images = synth::read_dataset(data_dir);
  if (!config.train_families.empty()) {
    images = synth::zero_shot_split(images, config.train_families, config.eval_families).first;
  }
  if (images.empty()) throw config_error(data_dir + ": no training samples");
  return images;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const RunConfig config = RunConfig::from_file(config_path);
  const auto images = load_train_images(config, data_dir);
  fs::create_directories(out_dir);

  apply_thread_policy(/*training=*/true);
  Model model(config.model_config());
  const auto prepared = prepare_samples(model.encoder(), images);

  std::ofstream loss_csv(fs::path(out_dir) / "loss.csv");
  if (!loss_csv) throw config_error(out_dir + ": cannot write loss.csv");
  train(model, prepared, config.train_config(), &loss_csv);

  const std::string ckpt = (fs::path(out_dir) / "checkpoint.wmoe").string();
  checkpoint::save(ckpt, config, model.params());
  std::cout << "trained " << prepared.size() << " samples, checkpoint at " << ckpt << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir, bool dump_maps) {
  Model model = checkpoint::load_model(ckpt_path);
  const RunConfig config = checkpoint::load(ckpt_path).config;
  const auto images = synth::read_dataset(data_dir);
  if (images.empty()) throw config_error(data_dir + ": no eval samples");
  fs::create_directories(out_dir);

  apply_thread_policy(/*training=*/false);
  const auto prepared = prepare_samples(model.encoder(), images);

  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  if (!csv) throw config_error(out_dir + ": cannot write metrics.csv");
  const auto all_report = metrics::evaluate(model, prepared, config.seed);
  write_metrics_csv(csv, "eval", "all", all_report, /*header=*/true);

  std::set<std::string> families;
  for (const auto& p : prepared) families.insert(p.image.family);
  if (families.size() > 1) {
    for (const auto& fam : families) {
      std::vector<PreparedSample> subset;
      for (const auto& p : prepared) {
        if (p.image.family == fam) subset.push_back(p);
      }
      write_metrics_csv(csv, "eval", fam, metrics::evaluate(model, subset, config.seed),
                        /*header=*/false);
    }
  }

  if (dump_maps) {
    const fs::path maps_dir = fs::path(out_dir) / "maps";
    fs::create_directories(maps_dir);
    const auto inf = metrics::run_inference(model, prepared);
    for (std::size_t i = 0; i < prepared.size(); ++i) {
      const auto& img = prepared[i].image;
      const auto& map = inf.fused_maps[i];
      std::vector<unsigned char> heat(map.values.size());
      for (std::size_t p = 0; p < heat.size(); ++p) {
        heat[p] = static_cast<unsigned char>(
            std::lround(255.0 * std::clamp(map.values[p], 0.0, 1.0)));
      }
      synth::write_pgm8_gray((maps_dir / (img.id + "_map.pgm")).string(), heat, map.h, map.w);
      // input | heatmap side by side
      std::vector<unsigned char> side(static_cast<std::size_t>(map.h) * map.w * 2);
      for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
          side[static_cast<long>(y) * (2 * map.w) + x] = static_cast<unsigned char>(
              std::lround(255.0 * std::clamp(img.pixels[static_cast<long>(y) * map.w + x], 0.0, 1.0)));
          side[static_cast<long>(y) * (2 * map.w) + map.w + x] =
              heat[static_cast<long>(y) * map.w + x];
        }
      }
      synth::write_pgm8_gray((maps_dir / (img.id + "_side.pgm")).string(), side, map.h,
                             2 * map.w);
    }
  }

  std::cout << "image_auroc=" << fmt_opt(all_report.image_auroc)
            << " pixel_auroc=" << fmt_opt(all_report.pixel_auroc) << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const std::string& seeds_arg) {
  RunConfig base = RunConfig::from_file(config_path);
  if (base.train_families.empty() || base.eval_families.empty()) {
    throw config_error("ablate: config must define split.train and split.eval families");
  }
  std::vector<std::uint64_t> seeds;
  if (seeds_arg.empty()) {
    seeds.push_back(base.seed);
  } else {
    std::stringstream ss(seeds_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw config_error("ablate: bad seed '" + tok + "'");
      }
    }
    if (seeds.empty()) throw config_error("ablate: no seeds given");
  }

  const auto all_images = synth::read_dataset(data_dir);
  auto [train_images, eval_images] =
      synth::zero_shot_split(all_images, base.train_families, base.eval_families);
  if (train_images.empty() || eval_images.empty()) {
    throw config_error("ablate: empty train or eval split");
  }
  fs::create_directories(out_dir);

  // Table rows: baseline, +CTDS, +CTDS+WCMA, +CTDS+SA-MoE, full.
  const ModuleToggles rows[5] = {{false, false, false},
                                 {true, false, false},
                                 {true, true, false},
                                 {true, false, true},
                                 {true, true, true}};
  double i_auc_sum[5] = {0, 0, 0, 0, 0};
  double p_auc_sum[5] = {0, 0, 0, 0, 0};

  for (const std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    // Frozen features depend only on the encoder seed; encode once per seed.
    apply_thread_policy(/*training=*/false);
    FrozenEncoder enc(cfg.model_config().encoder);
    const auto prep_train = prepare_samples(enc, train_images);
    const auto prep_eval = prepare_samples(enc, eval_images);

    for (int row = 0; row < 5; ++row) {
      RunConfig row_cfg = cfg;
      row_cfg.modules = rows[row];
      Model model(row_cfg.model_config());
      apply_thread_policy(/*training=*/true);
      train(model, prep_train, row_cfg.train_config(), nullptr);
      apply_thread_policy(/*training=*/false);
      const auto report = metrics::evaluate(model, prep_eval, row_cfg.seed);
      if (!report.image_auroc || !report.pixel_auroc) {
        throw config_error("ablate: eval split is single-class, AUROC undefined");
      }
      i_auc_sum[row] += *report.image_auroc;
      p_auc_sum[row] += *report.pixel_auroc;
    }
  }

  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  if (!csv) throw config_error(out_dir + ": cannot write ablation.csv");
  csv << "ctds,wcma,samoe,image_auroc,pixel_auroc\n";
  std::cout << "ctds wcma samoe  I-AUC   P-AUC\n";
  for (int row = 0; row < 5; ++row) {
    const double i_auc = i_auc_sum[row] / seeds.size();
    const double p_auc = p_auc_sum[row] / seeds.size();
    csv << rows[row].ctds << ',' << rows[row].wcma << ',' << rows[row].samoe << ','
        << std::setprecision(10) << i_auc << ',' << p_auc << '\n';
    std::cout << "   " << rows[row].ctds << "    " << rows[row].wcma << "     " << rows[row].samoe
              << "   " << std::fixed << std::setprecision(4) << i_auc << "  " << p_auc << "\n";
    std::cout.unsetf(std::ios::fixed);
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"WMoE zero-shot anomaly detection on synthetic textured-defect data"};
  app.require_subcommand(1);

  std::string spec_path, config_path, data_dir, out_dir, ckpt_path, seeds_arg;
  int n = 100;
  std::uint64_t seed = 1;
  bool force = false, dump_maps = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic defect dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON")->required();
  gen->add_option("--n", n, "samples per family")->required();
  gen->add_option("--seed", seed, "generation seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--data", data_dir, "training dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "eval dataset directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_flag("--dump-maps", dump_maps, "write fused anomaly maps as PGM heatmaps");

  auto* ab = app.add_subcommand("ablate", "Run the five-row module ablation");
  ab->add_option("--config", config_path, "run config JSON with split families")->required();
  ab->add_option("--data", data_dir, "dataset directory holding all families")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--seeds", seeds_arg, "comma-separated seeds (default: config seed)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, n, seed, out_dir, force);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, out_dir, dump_maps);
    if (ab->parsed()) return cmd_ablate(config_path, data_dir, out_dir, seeds_arg);
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace wmoe::cli
