#pragma once

// Training loop, evaluation, ablation sweeps and visual dumps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pixmatch/config.hpp"
#include "pixmatch/data.hpp"
#include "pixmatch/metrics.hpp"
#include "pixmatch/png_io.hpp"
#include "pixmatch/segnet.hpp"

namespace pixmatch {

struct LogRecord {
  std::size_t iter = 0;
  double loss_s = 0.0;
  double loss_t = 0.0;
  double loss_msl = 0.0;
  double loss_ent = 0.0;
  double lr = 0.0;
  std::size_t target_pixels = 0;  // pixels that entered L_T
};

struct EvalRecord {
  std::size_t iter = 0;
  IoUReport report;
};

struct RunRecord {
  std::vector<LogRecord> logs;
  std::vector<EvalRecord> evals;
  std::string final_checkpoint;  // relative to the run directory
  std::string best_checkpoint;
  std::size_t best_iter = 0;
  double best_miou = 0.0;

  /// One JSON object per line: log rows, eval rows, then a summary row.
  std::string to_jsonl() const;
};

/// Runs the configured training and writes `config.toml`, `run.jsonl`, `final.ckpt` and
/// `best.ckpt` into cfg.out_dir. Progress lines go to `progress` when given.
RunRecord train(const TrainConfig& cfg, std::ostream* progress = nullptr);

/// Confusion matrix of argmax predictions over the first `max_images` samples (0 = all).
ConfusionMatrix confusion(const SegModel& model, const std::vector<Sample>& samples, std::size_t max_images = 0);
IoUReport evaluate(const SegModel& model, const std::vector<Sample>& samples, std::size_t max_images = 0);
/// Loads the manifest and checks its class count against the model.
IoUReport evaluate_manifest(const SegModel& model, const std::filesystem::path& manifest_path,
                            std::size_t max_images = 0);

enum class SweepAxis { lambda_t, tau, lambda_msl };

SweepAxis parse_sweep_axis(std::string_view name);
std::string_view sweep_axis_name(SweepAxis axis);
/// Comma-separated numbers; empty list or malformed entries are errors.
std::vector<double> parse_value_list(std::string_view csv);

struct SweepRow {
  double value = 0.0;
  IoUReport report;  // final model on the evaluation manifest
};

struct SweepTable {
  SweepAxis axis = SweepAxis::lambda_t;
  std::size_t num_classes = 0;
  std::vector<SweepRow> rows;

  /// Header "<axis>,mIoU,iou_0,...,iou_{C-1}", one row per value.
  std::string to_csv() const;
};

/// Trains once per value (each in `<out_dir>/<axis>_<value>`) with the base seed and writes
/// `<out_dir>/sweep_<axis>.csv`.
SweepTable sweep(const TrainConfig& base, SweepAxis axis, const std::vector<double>& values,
                 const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

/// Fixed colour of a label value; a bijection over all 256 values.
std::array<std::uint8_t, 3> palette_color(std::uint8_t label);
/// Renders a label map through the palette as an 8-bit RGB PNG buffer.
Png8 colorize_labels(const LabelMap& labels);
/// Inverse of colorize_labels; throws ValidationError on colours outside the palette.
LabelMap decolorize_labels(const Png8& png);

/// For each of the first n samples writes `<i>_input.png`, `<i>_truth.png`, `<i>_pred.png`, and for
/// every perturbation in `cfg` a `<i>_<j>_<kind>_before.png` / `<i>_<j>_<kind>_after.png` pair (j = position in the chain). The perturbation
/// acts on (input, prediction); CutMix and Fourier mix in the next sample of the manifest.
std::vector<std::filesystem::path> visualize(const SegModel& model, const std::filesystem::path& manifest_path,
                                             std::size_t n, const std::filesystem::path& out_dir,
                                             const TrainConfig& cfg);

}  // namespace pixmatch
