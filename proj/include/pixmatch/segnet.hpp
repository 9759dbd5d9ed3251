#pragma once

// Toy fully-convolutional segmentation network and its optimizer.
//
// Three 3x3 conv + relu stages at strides 1, 2, 2, a 1x1 classifier head and
// a bilinear x4 resize of the logits back to input resolution.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pixmatch/checkpoint.hpp"
#include "pixmatch/tensor.hpp"

namespace pixmatch {

struct ModelConfig {
  std::size_t num_classes = 5;
  std::vector<std::size_t> widths = {16, 32, 64};
  std::uint64_t init_seed = 0;
  bool zero_head = false;  // zero classifier weights: uniform softmax at init

  void validate() const;
};

class SegModel {
 public:
  explicit SegModel(const ModelConfig& cfg);

  /// [N,3,H,W] images -> [N,C,H,W] logits. H and W must be divisible by total_stride().
  Tensor forward(const Tensor& images) const;

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return cfg_.num_classes; }
  std::size_t total_stride() const;

  /// Parameters in a fixed order (stage weights/biases, then head).
  NamedTensors& parameters() { return params_; }
  const NamedTensors& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);

  void zero_grad();
  bool all_finite() const;

  /// Parameters plus "meta.*" records describing the architecture.
  NamedTensors to_checkpoint() const;
  static SegModel from_checkpoint(const NamedTensors& records);
  void save(const std::filesystem::path& path) const;
  static SegModel load(const std::filesystem::path& path);

 private:
  struct Stage {
    std::size_t stride;
    std::size_t weight_index;
  };

  ModelConfig cfg_;
  NamedTensors params_;
  std::vector<Stage> stages_;
};

struct OptimConfig {
  double base_lr = 1.0e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;
  std::size_t max_iter = 1000;

  void validate() const;
};

/// base_lr * (1 - iter/max_iter)^power.
double poly_lr(const OptimConfig& cfg, std::size_t iter);

/// SGD with momentum and L2 weight decay on top of the polynomial schedule:
///   v <- momentum*v + grad + weight_decay*param;  param <- param - lr(iter)*v
class SgdMomentum {
 public:
  explicit SgdMomentum(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  /// Updates every parameter, then zeroes the gradients. Throws if a parameter has no gradient.
  void step(NamedTensors& params, std::size_t iter);
  void step(SegModel& model, std::size_t iter) { step(model.parameters(), iter); }

  const OptimConfig& config() const { return cfg_; }

 private:
  OptimConfig cfg_;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace pixmatch
