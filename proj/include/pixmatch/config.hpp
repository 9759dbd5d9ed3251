#pragma once

// Training configuration and the TOML-style file format it is read from.
//
// Supported syntax: `[section]` / `[section.sub]` headers, `key = value`
// pairs with strings, numbers, booleans or flat arrays of those, and `#`
// comments. Every field has a default; a minimal file names the manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "pixmatch/losses.hpp"
#include "pixmatch/perturb.hpp"
#include "pixmatch/segnet.hpp"

namespace pixmatch {

struct TomlValue {
  using Array = std::vector<TomlValue>;
  std::variant<bool, std::int64_t, double, std::string, Array> value;
};

/// Flat "section.key" -> value map.
using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text, const std::string& source_name = "<config>");

struct TrainConfig {
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  std::filesystem::path eval_manifest;  // labelled target images scored at eval points; empty = target_manifest

  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;

  std::vector<PerturbKind> perturbations = {PerturbKind::augment};
  AugConfig augment;
  CutMixConfig cutmix;
  FourierConfig fourier;

  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  std::size_t log_every = 50;
  std::size_t eval_max_images = 0;  // 0 = whole evaluation manifest
  std::filesystem::path out_dir = "runs/default";

  void validate() const;
  /// Whether the target stream is consumed at all (consistency or auxiliary target losses on).
  bool uses_target() const;
  const std::filesystem::path& eval_path() const { return eval_manifest.empty() ? target_manifest : eval_manifest; }
  std::vector<PerturbationFn> perturbation_chain() const;
};

/// Relative paths in the file resolve against `base_dir`.
TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& source_name = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);

/// Serialises every field (paths as given) in the format parse_train_config reads.
std::string to_toml(const TrainConfig& cfg);

}  // namespace pixmatch
