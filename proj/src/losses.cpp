#include "pixmatch/losses.hpp"

#include <cmath>

#include "pixmatch/errors.hpp"

namespace pixmatch {

namespace {

struct ProbGeometry {
  std::size_t n, c, h, w;
  std::size_t hw() const { return h * w; }
};

ProbGeometry prob_geometry(const Tensor& probs, const char* what) {
  if (!probs.defined() || probs.dim() != 4) throw ShapeError(std::string(what) + ": expected [N,C,H,W] probabilities");
  const auto& s = probs.shape();
  return {s[0], s[1], s[2], s[3]};
}

template <typename Map>
void check_maps(std::span<const Map> maps, const ProbGeometry& g, const char* what) {
  if (maps.size() != g.n) throw ShapeError(std::string(what) + ": batch size mismatch");
  for (const auto& m : maps) {
    if (m.height != g.h || m.width != g.w) throw ShapeError(std::string(what) + ": spatial shape mismatch");
  }
}

// Comparisons are written so that NaN passes through instead of being clamped away.
double safe_log(double p) { return std::log(p < kLogClamp ? kLogClamp : p); }
double safe_inv(double p) { return p < kLogClamp ? 0.0 : 1.0 / p; }

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_t >= 0.0)) throw ConfigError("lambda_T must be >= 0");
  if (!(lambda_msl >= 0.0)) throw ConfigError("lambda_MSL must be >= 0");
  if (!(lambda_ent >= 0.0)) throw ConfigError("lambda_ENT must be >= 0");
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0,1)");
}

MaskedLoss source_ce(const Tensor& probs, std::span<const LabelMap> labels) {
  const auto g = prob_geometry(probs, "source_ce");
  check_maps(labels, g, "source_ce");
  const auto p = probs.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.hw(); ++i) {
      const auto y = labels[n].data[i];
      if (y == kIgnoreLabel) continue;
      if (y >= g.c) throw ValidationError("source_ce: label " + std::to_string(y) + " out of range");
      total += -safe_log(p[(n * g.c + y) * g.hw() + i]);
      ++count;
    }
  }
  const double value = count ? total / static_cast<double>(count) : 0.0;
  std::vector<LabelMap> kept(labels.begin(), labels.end());
  auto t = Tensor::from_op(
      {}, {value}, {probs},
      [probs, kept = std::move(kept), g, count](std::span<const double> go, std::span<const double>) {
        if (count == 0) return;
        const auto p = probs.data();
        auto gp = probs.grad_buffer();
        const double scale = go[0] / static_cast<double>(count);
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t i = 0; i < g.hw(); ++i) {
            const auto y = kept[n].data[i];
            if (y == kIgnoreLabel) continue;
            const auto idx = (n * g.c + y) * g.hw() + i;
            gp[idx] -= scale * safe_inv(p[idx]);
          }
        }
      },
      "source_ce");
  return {std::move(t), count};
}

Pseudolabel make_pseudolabel(const Tensor& probs, double tau) {
  const auto g = prob_geometry(probs, "make_pseudolabel");
  const auto detached = detach(probs);
  const auto p = detached.data();
  Pseudolabel out;
  for (std::size_t n = 0; n < g.n; ++n) {
    LabelMap lm(g.h, g.w);
    Mask mask(g.h, g.w, false);
    const double* base = p.data() + n * g.c * g.hw();
    for (std::size_t i = 0; i < g.hw(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < g.c; ++k) {
        if (base[k * g.hw() + i] > base[best * g.hw() + i]) best = k;
      }
      lm.data[i] = static_cast<std::uint8_t>(best);
      mask.data[i] = base[best * g.hw() + i] > tau ? 1 : 0;
    }
    out.labels.push_back(std::move(lm));
    out.valid.push_back(std::move(mask));
    out.soft.push_back(soft_label_from(detached, n));
  }
  return out;
}

MaskedLoss consistency_loss(const Tensor& probs_pert, std::span<const LabelMap> pseudo, std::span<const Mask> valid,
                            std::span<const SoftLabel> soft_targets) {
  const auto g = prob_geometry(probs_pert, "consistency_loss");
  check_maps(pseudo, g, "consistency_loss");
  check_maps(valid, g, "consistency_loss");
  const bool soft = !soft_targets.empty();
  if (soft) {
    check_maps(soft_targets, g, "consistency_loss");
    for (const auto& s : soft_targets) {
      if (s.classes != g.c) throw ShapeError("consistency_loss: soft target class count mismatch");
    }
  }
  const auto p = probs_pert.data();
  auto pixel_valid = [&](std::size_t n, std::size_t i) {
    return valid[n].data[i] != 0 && pseudo[n].data[i] != kIgnoreLabel;
  };
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.hw(); ++i) {
      if (!pixel_valid(n, i)) continue;
      if (soft) {
        double term = 0.0;
        for (std::size_t k = 0; k < g.c; ++k) {
          term += soft_targets[n].data[k * g.hw() + i] * safe_log(p[(n * g.c + k) * g.hw() + i]);
        }
        total += -term;
      } else {
        const auto y = pseudo[n].data[i];
        if (y >= g.c) throw ValidationError("consistency_loss: pseudolabel out of range");
        total += -safe_log(p[(n * g.c + y) * g.hw() + i]);
      }
      ++count;
    }
  }
  const double value = count ? total / static_cast<double>(count) : 0.0;

  std::vector<std::uint8_t> use(g.n * g.hw(), 0);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.hw(); ++i) use[n * g.hw() + i] = pixel_valid(n, i) ? 1 : 0;
  }
  std::vector<LabelMap> labels(pseudo.begin(), pseudo.end());
  std::vector<SoftLabel> targets(soft_targets.begin(), soft_targets.end());
  auto t = Tensor::from_op(
      {}, {value}, {probs_pert},
      [probs_pert, g, count, soft, use = std::move(use), labels = std::move(labels), targets = std::move(targets)](
          std::span<const double> go, std::span<const double>) {
        if (count == 0) return;
        const auto p = probs_pert.data();
        auto gp = probs_pert.grad_buffer();
        const double scale = go[0] / static_cast<double>(count);
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t i = 0; i < g.hw(); ++i) {
            if (!use[n * g.hw() + i]) continue;
            if (soft) {
              for (std::size_t k = 0; k < g.c; ++k) {
                const auto idx = (n * g.c + k) * g.hw() + i;
                gp[idx] -= scale * targets[n].data[k * g.hw() + i] * safe_inv(p[idx]);
              }
            } else {
              const auto idx = (n * g.c + labels[n].data[i]) * g.hw() + i;
              gp[idx] -= scale * safe_inv(p[idx]);
            }
          }
        }
      },
      soft ? "consistency_soft" : "consistency_hard");
  return {std::move(t), count};
}

Tensor max_square_loss(const Tensor& probs) {
  const auto g = prob_geometry(probs, "max_square_loss");
  const auto p = probs.data();
  const double pixels = static_cast<double>(g.n * g.hw());
  double total = 0.0;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.hw(); ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < g.c; ++k) {
        const double v = p[(n * g.c + k) * g.hw() + i];
        sq += v * v;
      }
      total += -0.5 * sq;
    }
  }
  return Tensor::from_op(
      {}, {total / pixels}, {probs},
      [probs, pixels](std::span<const double> go, std::span<const double>) {
        const auto p = probs.data();
        auto gp = probs.grad_buffer();
        const double scale = go[0] / pixels;
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] -= scale * p[i];
      },
      "max_square");
}

Tensor entropy_loss(const Tensor& probs) {
  const auto g = prob_geometry(probs, "entropy_loss");
  const auto p = probs.data();
  const double pixels = static_cast<double>(g.n * g.hw());
  double total = 0.0;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.hw(); ++i) {
      double h = 0.0;
      for (std::size_t k = 0; k < g.c; ++k) {
        const double v = p[(n * g.c + k) * g.hw() + i];
        if (!(v <= 0.0)) h -= v * std::log(v);
      }
      total += h;
    }
  }
  return Tensor::from_op(
      {}, {total / pixels}, {probs},
      [probs, pixels](std::span<const double> go, std::span<const double>) {
        const auto p = probs.data();
        auto gp = probs.grad_buffer();
        const double scale = go[0] / pixels;
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] -= scale * (safe_log(p[i]) + 1.0);
      },
      "entropy");
}

Tensor total_loss(const Tensor& source, const Tensor& target, const Tensor& max_square, const Tensor& entropy,
                  const LossWeights& w) {
  if (!source.defined() || source.numel() != 1) throw ShapeError("total_loss: source loss must be a scalar");
  Tensor out = source;
  auto add_term = [&out](const Tensor& term, double weight) {
    if (weight == 0.0 || !term.defined()) return;
    if (term.numel() != 1) throw ShapeError("total_loss: loss terms must be scalars");
    out = add(out, scale(term, weight));
  };
  add_term(target, w.lambda_t);
  add_term(max_square, w.lambda_msl);
  add_term(entropy, w.lambda_ent);
  return out;
}

}  // namespace pixmatch
