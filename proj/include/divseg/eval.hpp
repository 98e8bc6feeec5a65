#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "divseg/tensor.hpp"

namespace divseg {

/// Square count matrix, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(size_t num_labels);

  size_t size() const { return n_; }
  uint64_t at(size_t truth, size_t pred) const { return counts_[truth * n_ + pred]; }
  uint64_t total() const;
  void add(size_t truth, size_t pred, uint64_t count = 1);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  size_t n_;
  std::vector<uint64_t> counts_;
};

/// Adds one image's label grids (same shape, labels in [0, cm.size())).
ConfusionMatrix accumulate(ConfusionMatrix cm, const Grid& predicted, const Grid& truth);

struct EvalReport {
  // IoU per label; empty for labels absent from both truth and prediction.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// IoU_c = TP / (TP + FP + FN); mIoU averages over labels that occur in
/// truth or prediction.
EvalReport miou(const ConfusionMatrix& cm);

}  // namespace divseg
