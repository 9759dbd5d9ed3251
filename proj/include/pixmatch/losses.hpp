#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pixmatch/image.hpp"
#include "pixmatch/tensor.hpp"

namespace pixmatch {

/// Probabilities are clamped below at this value before taking logs.
inline constexpr double kLogClamp = 1e-12;

struct LossWeights {
  double lambda_t = 0.10;
  double tau = 0.0;  // pseudolabel confidence threshold; 0 keeps every pixel
  double lambda_msl = 0.0;
  double lambda_ent = 0.0;
  bool soft = false;

  void validate() const;
};

/// A pixel-averaged loss and the number of pixels that entered the average.
/// `count == 0` means nothing was scored and the value is exactly 0.
struct MaskedLoss {
  Tensor value;
  std::size_t count = 0;
  bool empty() const { return count == 0; }
};

/// Mean over non-ignored pixels of -log p(true class). `probs` is [N,C,H,W].
MaskedLoss source_ce(const Tensor& probs, std::span<const LabelMap> labels);

struct Pseudolabel {
  std::vector<LabelMap> labels;
  std::vector<Mask> valid;
  std::vector<SoftLabel> soft;  // detached distributions, one per sample
};

/// Per-pixel argmax of detached probabilities; valid where the max probability exceeds `tau`.
Pseudolabel make_pseudolabel(const Tensor& probs, double tau);

/// Hard mode: mean over valid pixels of -log p[pseudolabel].
/// Soft mode (`soft_targets` non-empty): mean over valid pixels of -sum_c q_c log p_c.
MaskedLoss consistency_loss(const Tensor& probs_pert, std::span<const LabelMap> pseudo, std::span<const Mask> valid,
                            std::span<const SoftLabel> soft_targets = {});

/// Mean over pixels of -(1/2) sum_c p_c^2.
Tensor max_square_loss(const Tensor& probs);

/// Mean over pixels of -sum_c p_c log p_c, with 0 log 0 = 0.
Tensor entropy_loss(const Tensor& probs);

/// L_S + lambda_T L_T + lambda_MSL L_MSL + lambda_ENT L_ENT. Terms with zero weight
/// (or undefined tensors) are left out entirely.
Tensor total_loss(const Tensor& source, const Tensor& target, const Tensor& max_square, const Tensor& entropy,
                  const LossWeights& w);

}  // namespace pixmatch
