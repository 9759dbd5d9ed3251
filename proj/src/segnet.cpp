#include "pixmatch/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "pixmatch/errors.hpp"
#include "pixmatch/rng.hpp"

namespace pixmatch {

namespace {

constexpr std::size_t kStageStrides[] = {1, 2, 2};

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2 || num_classes > 254) throw ConfigError("num_classes must be in [2, 254]");
  if (widths.size() != std::size(kStageStrides)) throw ConfigError("model widths must list exactly 3 stages");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("model widths must be positive");
  }
}

SegModel::SegModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.init_seed, 0x5e9));
  std::size_t in_ch = 3;
  for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
    const auto out_ch = cfg_.widths[s];
    const auto prefix = "stage" + std::to_string(s + 1);
    stages_.push_back({kStageStrides[s], params_.size()});
    params_.emplace_back(prefix + ".weight", kaiming_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    params_.emplace_back(prefix + ".bias", Tensor::zeros({out_ch}, true));
    in_ch = out_ch;
  }
  const Shape head_shape{cfg_.num_classes, in_ch, 1, 1};
  params_.emplace_back("head.weight",
                       cfg_.zero_head ? Tensor::zeros(head_shape, true) : kaiming_uniform(head_shape, in_ch, rng));
  params_.emplace_back("head.bias", Tensor::zeros({cfg_.num_classes}, true));
}

std::size_t SegModel::total_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages_) s *= st.stride;
  return s;
}

Tensor SegModel::forward(const Tensor& images) const {
  if (images.dim() != 4 || images.shape()[1] != 3) throw ShapeError("forward expects [N,3,H,W] images");
  const auto h = images.shape()[2];
  const auto w = images.shape()[3];
  const auto stride = total_stride();
  if (h % stride != 0 || w % stride != 0) {
    throw ShapeError("input extent " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by stride " +
                     std::to_string(stride));
  }
  Tensor x = images;
  for (const auto& st : stages_) {
    x = relu(conv2d(x, params_[st.weight_index].second, params_[st.weight_index + 1].second, st.stride, 1));
  }
  const auto& head_w = params_[params_.size() - 2].second;
  const auto& head_b = params_.back().second;
  x = conv2d(x, head_w, head_b, 1, 0);
  return upsample_bilinear(x, h, w);
}

Tensor& SegModel::parameter(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw Error("no parameter named " + name);
}

void SegModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

bool SegModel::all_finite() const {
  for (const auto& [name, t] : params_) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

NamedTensors SegModel::to_checkpoint() const {
  NamedTensors out;
  out.emplace_back("meta.num_classes", Tensor::from_data({1}, {static_cast<double>(cfg_.num_classes)}));
  std::vector<double> widths(cfg_.widths.begin(), cfg_.widths.end());
  out.emplace_back("meta.widths", Tensor::from_data({widths.size()}, widths));
  for (const auto& [name, t] : params_) out.emplace_back(name, detach(t));
  return out;
}

SegModel SegModel::from_checkpoint(const NamedTensors& records) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : records) {
      if (n == name) return t;
    }
    throw ValidationError("checkpoint missing record " + name);
  };
  ModelConfig cfg;
  cfg.num_classes = static_cast<std::size_t>(find("meta.num_classes").item());
  const auto widths = find("meta.widths").data();
  cfg.widths.assign(widths.begin(), widths.end());
  SegModel model(cfg);
  for (auto& [name, t] : model.params_) {
    const auto& stored = find(name);
    if (stored.shape() != t.shape()) throw ValidationError("checkpoint shape mismatch for " + name);
    std::vector<double> data(stored.data().begin(), stored.data().end());
    t = Tensor::from_data(stored.shape(), std::move(data), true);
  }
  return model;
}

void SegModel::save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }

SegModel SegModel::load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------

void OptimConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(power > 0.0)) throw ConfigError("power must be > 0");
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

double poly_lr(const OptimConfig& cfg, std::size_t iter) {
  if (iter > cfg.max_iter) {
    throw ConfigError("poly_lr: iteration " + std::to_string(iter) + " beyond max_iter " + std::to_string(cfg.max_iter));
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(frac, cfg.power);
}

void SgdMomentum::step(NamedTensors& params, std::size_t iter) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw Error("sgd_step: parameter " + name + " has no gradient");
  }
  const double lr = poly_lr(cfg_, iter);
  for (auto& [name, t] : params) {
    auto& v = velocity_[name];
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    const auto g = t.grad();
    auto p = t.mutable_data_for_update();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = cfg_.momentum * v[i] + g[i] + cfg_.weight_decay * p[i];
      p[i] -= lr * v[i];
    }
    t.zero_grad();
  }
}

}  // namespace pixmatch
