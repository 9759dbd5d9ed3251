#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pixmatch/image.hpp"

namespace pixmatch {

/// counts[t * C + p]: pixels of true class t predicted as p. IGNORE pixels are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  void accumulate(const LabelMap& pred, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  bool operator==(const ConfusionMatrix&) const = default;

  static ConfusionMatrix from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts);

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from both prediction and truth
  double miou = 0.0;
};

/// IoU_c = cm[c][c] / (row_c + col_c - cm[c][c]); absent classes are excluded from the mean.
IoUReport compute_iou(const ConfusionMatrix& cm);

/// "class,iou" rows followed by a "mIoU" row.
std::string format_iou_csv(const IoUReport& report, const std::vector<std::string>& class_names = {});

}  // namespace pixmatch
