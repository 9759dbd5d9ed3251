// pixmatch: synthetic data generation, consistency training, evaluation,
// ablation sweeps and visual dumps.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pixmatch/config.hpp"
#include "pixmatch/data.hpp"
#include "pixmatch/errors.hpp"
#include "pixmatch/trainer.hpp"

namespace fs = std::filesystem;
using namespace pixmatch;

namespace {

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error: " << kind << ": " << one_line(msg) << '\n';
  return code;
}

TrainConfig load_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                const std::optional<std::string>& out) {
  auto cfg = load_train_config(path);
  if (seed) cfg.seed = *seed;
  cfg.model.init_seed = cfg.seed;
  if (out) cfg.out_dir = *out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixmatch: pixel-level consistency training for domain-adaptive segmentation"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "render a synthetic source/target dataset pair");
  std::string gen_out = "data";
  std::uint64_t gen_seed = 0;
  std::size_t n_source = 200, n_target = 200, image_size = 64, classes = 5;
  bool identity_gap = false;
  double gap_strength = 1.0;
  std::optional<double> intensity_spread, hue_spread, noise_sigma, blur_sigma, gamma;
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen->add_option("--seed", gen_seed, "scene seed")->capture_default_str();
  gen->add_option("--n-source", n_source, "number of source images")->capture_default_str();
  gen->add_option("--n-target", n_target, "number of target images")->capture_default_str();
  gen->add_option("--image-size", image_size, "image side length in pixels")->capture_default_str();
  gen->add_option("--classes", classes, "number of classes (2-5)")->capture_default_str();
  gen->add_option("--gap-strength", gap_strength, "scale of the default domain gap")->capture_default_str();
  gen->add_option("--intensity-spread", intensity_spread, "per-image spread of the gap intensity in [0,1]");
  gen->add_option("--hue-spread", hue_spread, "per-image random hue rotation range in turns");
  gen->add_option("--noise", noise_sigma, "override the target noise sigma");
  gen->add_option("--blur", blur_sigma, "override the target blur sigma");
  gen->add_option("--gamma", gamma, "override the target gamma");
  gen->add_flag("--identity-gap", identity_gap, "render the target domain exactly like the source");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  std::string tr_config;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::string> tr_out;
  bool quiet = false;
  tr->add_option("--config", tr_config, "config file")->required();
  tr->add_option("--seed", tr_seed, "override run.seed");
  tr->add_option("--out", tr_out, "override run.out_dir");
  tr->add_flag("--quiet", quiet, "suppress progress output");

  // eval
  auto* ev = app.add_subcommand("eval", "per-class IoU of a checkpoint on a manifest");
  std::string ev_ckpt, ev_manifest;
  std::optional<std::string> ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  ev->add_option("--out", ev_out, "write the CSV report here instead of stdout");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train once per value of one loss hyperparameter");
  std::string sw_config, sw_axis, sw_values;
  std::optional<std::uint64_t> sw_seed;
  std::optional<std::string> sw_out;
  sw->add_option("--config", sw_config, "base config file")->required();
  sw->add_option("--axis", sw_axis, "lambda_T, tau or lambda_MSL")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required();
  sw->add_option("--seed", sw_seed, "override run.seed");
  sw->add_option("--out", sw_out, "sweep output directory (default: run.out_dir)");
  sw->add_flag("--quiet", quiet, "suppress progress output");

  // visualize
  auto* vis = app.add_subcommand("visualize", "write prediction and perturbation PNGs");
  std::string vis_ckpt, vis_manifest, vis_out = "vis";
  std::optional<std::string> vis_config;
  std::optional<std::uint64_t> vis_seed;
  std::size_t vis_n = 4;
  vis->add_option("--checkpoint", vis_ckpt, "checkpoint file")->required();
  vis->add_option("--manifest", vis_manifest, "dataset manifest")->required();
  vis->add_option("--n", vis_n, "number of samples")->capture_default_str();
  vis->add_option("--out", vis_out, "output directory")->capture_default_str();
  vis->add_option("--config", vis_config, "config whose perturbations are dumped");
  vis->add_option("--seed", vis_seed, "perturbation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    std::ostream* progress = quiet ? nullptr : &std::cerr;
    if (gen->parsed()) {
      SceneSpec spec;
      spec.image_size = image_size;
      spec.num_classes = classes;
      spec.seed = gen_seed;
      auto gap = identity_gap ? DomainGap::identity(classes) : DomainGap::default_gap(classes, gap_strength);
      if (intensity_spread) gap.intensity_spread = *intensity_spread;
      if (hue_spread) gap.hue_spread = *hue_spread;
      if (noise_sigma) gap.noise_sigma = *noise_sigma;
      if (blur_sigma) gap.blur_sigma = *blur_sigma;
      if (gamma) gap.gamma = *gamma;
      const auto [s, t] = generate_pair_dataset(spec, gap, n_source, n_target, gen_out);
      std::cout << "wrote " << s.size() << " source and " << t.size() << " target images to " << gen_out << '\n';
    } else if (tr->parsed()) {
      const auto cfg = load_with_overrides(tr_config, tr_seed, tr_out);
      const auto rec = train(cfg, progress);
      std::printf("final mIoU %.6f  best mIoU %.6f (iter %zu)  run dir %s\n", rec.evals.back().report.miou,
                  rec.best_miou, rec.best_iter, cfg.out_dir.string().c_str());
    } else if (ev->parsed()) {
      const auto model = SegModel::load(ev_ckpt);
      const auto csv = format_iou_csv(evaluate_manifest(model, ev_manifest));
      if (ev_out) {
        std::ofstream os(*ev_out, std::ios::binary);
        if (!(os << csv)) throw IoError("cannot write " + *ev_out);
      } else {
        std::cout << csv;
      }
    } else if (sw->parsed()) {
      const auto cfg = load_with_overrides(sw_config, sw_seed, std::nullopt);
      const fs::path out = sw_out ? fs::path(*sw_out) : cfg.out_dir;
      const auto table = sweep(cfg, parse_sweep_axis(sw_axis), parse_value_list(sw_values), out, progress);
      std::cout << table.to_csv();
    } else if (vis->parsed()) {
      const auto model = SegModel::load(vis_ckpt);
      TrainConfig cfg;
      if (vis_config) cfg = load_train_config(*vis_config);
      if (vis_seed) cfg.seed = *vis_seed;
      const auto files = visualize(model, vis_manifest, vis_n, vis_out, cfg);
      std::cout << "wrote " << files.size() << " images to " << vis_out << '\n';
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const IoError& e) {
    return fail("io", e.what(), 3);
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), 4);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 4);
  } catch (const DomainError& e) {
    return fail("domain", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
