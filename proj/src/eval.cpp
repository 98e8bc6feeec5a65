#include "divseg/eval.hpp"

#include <numeric>

#include "divseg/error.hpp"

namespace divseg {

ConfusionMatrix::ConfusionMatrix(size_t num_labels)
    : n_(num_labels), counts_(num_labels * num_labels, 0) {
  if (num_labels == 0) throw ConfigError("confusion matrix needs at least one label");
}

uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), uint64_t{0});
}

void ConfusionMatrix::add(size_t truth, size_t pred, uint64_t count) {
  if (truth >= n_ || pred >= n_) {
    throw DataError("label out of range for a " + std::to_string(n_) + "-label matrix");
  }
  counts_[truth * n_ + pred] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("confusion matrices differ in size");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const Grid& predicted, const Grid& truth) {
  if (!predicted.same_shape(truth) || predicted.depth() != 1) {
    throw ShapeError("accumulate: prediction and truth must be same-shape label grids");
  }
  for (size_t i = 0; i < truth.locations(); ++i) {
    const float t = truth(i, 0);
    const float p = predicted(i, 0);
    if (t < 0 || p < 0) throw DataError("accumulate: negative label");
    cm.add(static_cast<size_t>(t), static_cast<size_t>(p));
  }
  return cm;
}

EvalReport miou(const ConfusionMatrix& cm) {
  const uint64_t total = cm.total();
  if (total == 0) throw DataError("miou: confusion matrix is empty");
  const size_t n = cm.size();
  EvalReport report;
  report.per_class_iou.resize(n);
  double sum = 0.0;
  size_t counted = 0;
  uint64_t diag = 0;
  for (size_t c = 0; c < n; ++c) {
    uint64_t row = 0, col = 0;
    for (size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const uint64_t tp = cm.at(c, c);
    diag += tp;
    const uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    report.per_class_iou[c] = iou;
    sum += iou;
    ++counted;
  }
  report.miou = sum / static_cast<double>(counted);
  report.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(total);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : per_class_iou) {
    per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  }
  return {{"per_class_iou", per_class},
          {"miou", miou},
          {"pixel_accuracy", pixel_accuracy},
          {"config", config}};
}

}  // namespace divseg
