#include "pixmatch/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "pixmatch/errors.hpp"

namespace pixmatch {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw ValidationError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts) {
  ConfusionMatrix cm(num_classes);
  if (counts.size() != num_classes * num_classes) throw ShapeError("confusion matrix counts must be C*C");
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("accumulate: prediction and truth extents differ");
  }
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const auto t = truth.data[i];
    if (t == kIgnoreLabel) continue;
    const auto p = pred.data[i];
    if (t >= classes_ || p >= classes_) {
      throw ValidationError("accumulate: label " + std::to_string(t >= classes_ ? t : p) + " out of range");
    }
    ++counts_[t * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

IoUReport compute_iou(const ConfusionMatrix& cm) {
  const auto c = cm.num_classes();
  IoUReport r;
  r.per_class.resize(c);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const auto tp = cm.at(k, k);
    const auto uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[k] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw ValidationError("compute_iou: every class is absent");
  r.miou = sum / static_cast<double>(present);
  return r;
}

std::string format_iou_csv(const IoUReport& report, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "class,iou\n";
  char buf[64];
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    os << (k < class_names.size() ? class_names[k] : std::to_string(k)) << ',';
    if (report.per_class[k]) {
      std::snprintf(buf, sizeof(buf), "%.6f", *report.per_class[k]);
      os << buf;
    } else {
      os << "absent";
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.6f", report.miou);
  os << "mIoU," << buf << '\n';
  return os.str();
}

}  // namespace pixmatch
