#include "pixmatch/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "pixmatch/errors.hpp"
#include "pixmatch/losses.hpp"
#include "pixmatch/perturb.hpp"
#include "pixmatch/rng.hpp"

namespace pixmatch {

namespace fs = std::filesystem;

namespace {

// Seeded epoch-wise shuffle of sample indices.
class IndexCycler {
 public:
  IndexCycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {}

  std::size_t next() {
    if (pos_ == 0 || pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

Manifest read_checked(const fs::path& path, std::size_t num_classes, const char* role) {
  auto m = Manifest::read(path);
  if (m.size() == 0) throw ConfigError(std::string(role) + " manifest is empty: " + path.string());
  if (m.num_classes != num_classes) {
    throw ConfigError(std::string(role) + " manifest has " + std::to_string(m.num_classes) + " classes, model has " +
                      std::to_string(num_classes));
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

double value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::string RunRecord::to_jsonl() const {
  std::ostringstream os;
  for (const auto& l : logs) {
    nlohmann::ordered_json j;
    j["iter"] = l.iter;
    j["L_S"] = number(l.loss_s);
    j["L_T"] = number(l.loss_t);
    j["L_MSL"] = number(l.loss_msl);
    j["L_ENT"] = number(l.loss_ent);
    j["lr"] = l.lr;
    j["target_pixels"] = l.target_pixels;
    os << j.dump() << '\n';
  }
  for (const auto& e : evals) {
    nlohmann::ordered_json j;
    j["iter"] = e.iter;
    j["mIoU"] = e.report.miou;
    auto row = nlohmann::ordered_json::array();
    for (const auto& v : e.report.per_class) row.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json());
    j["iou"] = row;
    os << j.dump() << '\n';
  }
  nlohmann::ordered_json j;
  j["final_checkpoint"] = final_checkpoint;
  j["best_checkpoint"] = best_checkpoint;
  j["best_iter"] = best_iter;
  j["best_mIoU"] = best_miou;
  os << j.dump() << '\n';
  return os.str();
}

ConfusionMatrix confusion(const SegModel& model, const std::vector<Sample>& samples, std::size_t max_images) {
  ConfusionMatrix cm(model.num_classes());
  const auto n = max_images == 0 ? samples.size() : std::min(max_images, samples.size());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < n; ++i) {
    const auto pred = argmax_labels(model.forward(image_to_tensor(samples[i].image)));
    cm.accumulate(pred[0], samples[i].label);
  }
  return cm;
}

IoUReport evaluate(const SegModel& model, const std::vector<Sample>& samples, std::size_t max_images) {
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  return compute_iou(confusion(model, samples, max_images));
}

IoUReport evaluate_manifest(const SegModel& model, const fs::path& manifest_path, std::size_t max_images) {
  const auto m = read_checked(manifest_path, model.num_classes(), "evaluation");
  return evaluate(model, load_all(m), max_images);
}

RunRecord train(const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const auto classes = cfg.model.num_classes;
  const auto source = load_all(read_checked(cfg.source_manifest, classes, "source"));
  std::vector<Sample> target;
  if (cfg.uses_target()) target = load_all(read_checked(cfg.target_manifest, classes, "target"));
  const auto eval_set = load_all(read_checked(cfg.eval_path(), classes, "evaluation"));

  ModelConfig mc = cfg.model;
  mc.init_seed = cfg.seed;
  SegModel model(mc);
  SgdMomentum sgd(cfg.optim);
  const auto chain = cfg.perturbation_chain();

  IndexCycler source_order(source.size(), derive_seed(cfg.seed, 1));
  IndexCycler target_order(std::max<std::size_t>(target.size(), 1), derive_seed(cfg.seed, 2));
  Rng perturb_rng(derive_seed(cfg.seed, 3));

  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "config.toml", to_toml(cfg));

  RunRecord record;
  record.final_checkpoint = "final.ckpt";
  record.best_checkpoint = "best.ckpt";
  const auto& w = cfg.loss;
  const bool target_grad = w.lambda_msl > 0.0 || w.lambda_ent > 0.0;

  for (std::size_t it = 0; it < cfg.optim.max_iter; ++it) {
    const Sample& s = source[source_order.next()];
    const Tensor probs_s = softmax_channels(model.forward(image_to_tensor(s.image)));
    const auto loss_s = source_ce(probs_s, std::span(&s.label, 1));

    Tensor loss_t, loss_msl, loss_ent;
    std::size_t target_pixels = 0;
    const Sample* t = nullptr;
    std::optional<PerturbResult> pert;
    if (cfg.uses_target()) {
      t = &target[target_order.next()];
      Tensor probs_t;
      {
        std::optional<NoGradGuard> no_grad;
        if (!target_grad) no_grad.emplace();
        probs_t = softmax_channels(model.forward(image_to_tensor(t->image)));
      }
      if (w.lambda_t > 0.0) {
        auto pseudo = make_pseudolabel(probs_t, w.tau);
        PerturbResult in;
        in.image = t->image;
        in.label = std::move(pseudo.labels[0]);
        in.valid_mask = std::move(pseudo.valid[0]);
        if (w.soft) in.soft = std::move(pseudo.soft[0]);
        pert = compose_perturbations(chain, in, s.image, s.label, perturb_rng);
        const Tensor probs_p = softmax_channels(model.forward(image_to_tensor(pert->image)));
        std::vector<SoftLabel> soft;
        if (w.soft) soft.push_back(*pert->soft);
        const auto lc = consistency_loss(probs_p, std::span(&pert->label, 1), std::span(&pert->valid_mask, 1), soft);
        loss_t = lc.value;
        target_pixels = lc.count;
      }
      if (w.lambda_msl > 0.0) loss_msl = max_square_loss(probs_t);
      if (w.lambda_ent > 0.0) loss_ent = entropy_loss(probs_t);
    }

    const Tensor total = total_loss(loss_s.value, loss_t, loss_msl, loss_ent, w);
    if (!std::isfinite(total.item())) {
      const auto dump = cfg.out_dir / "nan_dump";
      fs::create_directories(dump);
      write_image_png(dump / "source.png", s.image);
      write_label_png(dump / "source_label.png", s.label);
      if (t) write_image_png(dump / "target.png", t->image);
      if (pert) {
        write_image_png(dump / "perturbed.png", pert->image);
        write_label_png(dump / "perturbed_label.png", pert->label);
      }
      throw Error("non-finite loss at iteration " + std::to_string(it + 1) + " (L_S=" +
                  format_value(value_or_zero(loss_s.value)) + ", L_T=" + format_value(value_or_zero(loss_t)) +
                  "); batch written to " + dump.string());
    }
    backward(total);
    const double lr = poly_lr(cfg.optim, it);
    sgd.step(model, it);

    const auto done = it + 1;
    if (done % cfg.log_every == 0 || done == cfg.optim.max_iter) {
      LogRecord l{done,
                  value_or_zero(loss_s.value),
                  value_or_zero(loss_t),
                  value_or_zero(loss_msl),
                  value_or_zero(loss_ent),
                  lr,
                  target_pixels};
      record.logs.push_back(l);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "iter %zu  L_S %.4f  L_T %.4f  L_MSL %.4f  lr %.3g\n", done, l.loss_s, l.loss_t,
                      l.loss_msl, l.lr);
        *progress << buf << std::flush;
      }
    }
    if (done % cfg.eval_every == 0 || done == cfg.optim.max_iter) {
      EvalRecord e{done, evaluate(model, eval_set, cfg.eval_max_images)};
      if (record.evals.empty() || e.report.miou > record.best_miou) {
        record.best_miou = e.report.miou;
        record.best_iter = done;
        model.save(cfg.out_dir / record.best_checkpoint);
      }
      if (progress) *progress << "eval iter " << done << "  mIoU " << format_value(e.report.miou) << '\n' << std::flush;
      record.evals.push_back(std::move(e));
    }
  }

  model.save(cfg.out_dir / record.final_checkpoint);
  write_text(cfg.out_dir / "run.jsonl", record.to_jsonl());
  return record;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "lambda_T" || name == "lambda_t") return SweepAxis::lambda_t;
  if (name == "tau") return SweepAxis::tau;
  if (name == "lambda_MSL" || name == "lambda_msl") return SweepAxis::lambda_msl;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected lambda_T, tau or lambda_MSL)");
}

std::string_view sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::lambda_t: return "lambda_T";
    case SweepAxis::tau: return "tau";
    case SweepAxis::lambda_msl: return "lambda_MSL";
  }
  return "?";
}

std::vector<double> parse_value_list(std::string_view csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    std::string item(csv.substr(start, end - start));
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    item = b == std::string::npos ? std::string() : item.substr(b, e - b + 1);
    if (item.empty()) {
      if (csv.find_first_not_of(" \t,") == std::string_view::npos) break;
      throw ConfigError("empty entry in value list '" + std::string(csv) + "'");
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !std::isfinite(v)) throw ConfigError("malformed value '" + item + "'");
    out.push_back(v);
    start = end + 1;
  }
  if (out.empty()) throw ConfigError("sweep needs at least one value");
  return out;
}

std::string SweepTable::to_csv() const {
  std::ostringstream os;
  os << sweep_axis_name(axis) << ",mIoU";
  for (std::size_t k = 0; k < num_classes; ++k) os << ",iou_" << k;
  os << '\n';
  char buf[64];
  for (const auto& row : rows) {
    os << format_value(row.value);
    std::snprintf(buf, sizeof(buf), ",%.6f", row.report.miou);
    os << buf;
    for (std::size_t k = 0; k < num_classes; ++k) {
      const auto& v = row.report.per_class[k];
      if (v) {
        std::snprintf(buf, sizeof(buf), ",%.6f", *v);
        os << buf;
      } else {
        os << ",absent";
      }
    }
    os << '\n';
  }
  return os.str();
}

SweepTable sweep(const TrainConfig& base, SweepAxis axis, const std::vector<double>& values, const fs::path& out_dir,
                 std::ostream* progress) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepTable table;
  table.axis = axis;
  table.num_classes = base.model.num_classes;
  const std::string name(sweep_axis_name(axis));
  for (double v : values) {
    TrainConfig cfg = base;
    switch (axis) {
      case SweepAxis::lambda_t: cfg.loss.lambda_t = v; break;
      case SweepAxis::tau: cfg.loss.tau = v; break;
      case SweepAxis::lambda_msl: cfg.loss.lambda_msl = v; break;
    }
    cfg.out_dir = out_dir / (name + "_" + format_value(v));
    if (progress) *progress << "sweep " << name << " = " << format_value(v) << '\n';
    const auto rec = train(cfg, progress);
    table.rows.push_back({v, rec.evals.back().report});
  }
  fs::create_directories(out_dir);
  write_text(out_dir / ("sweep_" + name + ".csv"), table.to_csv());
  return table;
}

namespace {

struct Palette {
  std::array<std::array<std::uint8_t, 3>, 256> colors{};
  std::map<std::uint32_t, std::uint8_t> inverse;

  static std::uint32_t pack(std::uint8_t r, std::uint8_t g, std::uint8_t b) { return (r << 16u) | (g << 8u) | b; }

  Palette() {
    const std::map<int, std::array<std::uint8_t, 3>> fixed = {
        {0, {128, 128, 128}}, {1, {220, 60, 60}}, {2, {60, 180, 75}},
        {3, {60, 90, 220}},   {4, {240, 200, 40}}, {kIgnoreLabel, {0, 0, 0}},
    };
    for (int v = 0; v < 256; ++v) {
      auto it = fixed.find(v);
      const auto u = static_cast<std::uint8_t>(v);
      colors[v] = it != fixed.end() ? it->second
                                    : std::array<std::uint8_t, 3>{u, static_cast<std::uint8_t>(u ^ 0x5A),
                                                                  static_cast<std::uint8_t>(255 - u)};
      if (!inverse.emplace(pack(colors[v][0], colors[v][1], colors[v][2]), u).second) {
        throw std::logic_error("label palette is not injective");
      }
    }
  }
};

const Palette& palette() {
  static const Palette p;
  return p;
}

}  // namespace

std::array<std::uint8_t, 3> palette_color(std::uint8_t label) { return palette().colors[label]; }

Png8 colorize_labels(const LabelMap& labels) {
  Png8 png{labels.height, labels.width, 3, std::vector<std::uint8_t>(labels.data.size() * 3)};
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const auto& c = palette().colors[labels.data[i]];
    png.pixels[3 * i] = c[0];
    png.pixels[3 * i + 1] = c[1];
    png.pixels[3 * i + 2] = c[2];
  }
  return png;
}

LabelMap decolorize_labels(const Png8& png) {
  if (png.channels != 3) throw ValidationError("decolorize_labels: expected an RGB image");
  LabelMap labels(png.height, png.width);
  const auto& inv = palette().inverse;
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    auto it = inv.find(Palette::pack(png.pixels[3 * i], png.pixels[3 * i + 1], png.pixels[3 * i + 2]));
    if (it == inv.end()) throw ValidationError("decolorize_labels: colour at pixel " + std::to_string(i) + " is not in the palette");
    labels.data[i] = it->second;
  }
  return labels;
}

std::vector<fs::path> visualize(const SegModel& model, const fs::path& manifest_path, std::size_t n,
                                const fs::path& out_dir, const TrainConfig& cfg) {
  if (n == 0) throw ConfigError("visualize: n must be at least 1");
  const auto m = read_checked(manifest_path, model.num_classes(), "visualization");
  if (n > m.size()) {
    throw ConfigError("visualize: n = " + std::to_string(n) + " exceeds manifest size " + std::to_string(m.size()));
  }
  const auto chain = cfg.perturbation_chain();
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit_png = [&](const std::string& name, const Png8& png) {
    written.push_back(out_dir / name);
    write_png(written.back(), png);
  };

  for (std::size_t i = 0; i < n; ++i) {
    const auto sample = load_sample(m, i);
    const auto partner = load_sample(m, (i + 1) % m.size());
    LabelMap pred;
    {
      NoGradGuard no_grad;
      pred = argmax_labels(model.forward(image_to_tensor(sample.image)))[0];
    }
    const auto prefix = std::to_string(i) + "_";
    emit_png(prefix + "input.png", image_to_png(sample.image));
    emit_png(prefix + "truth.png", colorize_labels(sample.label));
    emit_png(prefix + "pred.png", colorize_labels(pred));

    for (std::size_t j = 0; j < chain.size(); ++j) {
      if (!chain[j].enabled) continue;
      Rng rng(derive_seed(derive_seed(cfg.seed, 4), i * 64 + j));
      const auto in = PerturbResult::from_pair(sample.image, pred);
      const auto out = chain[j].apply(in, partner.image, partner.label, rng);
      const auto stem = prefix + std::to_string(j) + "_" + std::string(perturb_kind_name(chain[j].kind));
      emit_png(stem + "_before.png", image_to_png(in.image));
      emit_png(stem + "_after.png", image_to_png(out.image));
    }
  }
  return written;
}

}  // namespace pixmatch
