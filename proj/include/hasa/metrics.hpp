#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hasa/error.hpp"
#include "hasa/mask.hpp"

namespace hasa {

struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<int64_t> counts;  // rows = ground truth, cols = prediction

  explicit ConfusionMatrix(int n = 0)
      : n_classes(n), counts(static_cast<size_t>(n) * n, 0) {}

  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * n_classes + pred]; }
  int64_t at(int gt, int pred) const {
    return counts[static_cast<size_t>(gt) * n_classes + pred];
  }
  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
  }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int n_classes);

struct ClassificationMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

// Support-weighted by default; macro averaging behind the flag. Classes with
// zero support are excluded from the weighting.
ClassificationMetrics classification_metrics(const ConfusionMatrix& cm, bool weighted = true);

// Binary region for one class of a label map. `organ` selects mask >= class_id
// (the ovary organ includes its follicles).
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  BinaryMask() = default;
  BinaryMask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int64_t count() const {
    int64_t c = 0;
    for (uint8_t b : v) c += b;
    return c;
  }
};

BinaryMask select_class(const Mask& m, int class_id, bool organ = false);

// dsc = 2|P&G| / (|P|+|G|), jc = |P&G| / |P|G|union; both-empty -> (1, 1).
std::pair<double, double> region_overlap(const BinaryMask& pred, const BinaryMask& gt);

struct BoundaryStats {
  double hd = 0, asd = 0;
  bool degenerate = false;  // one side had no surface
};

// Surfaces are 4-connected boundary pixels; distances are exact Euclidean
// nearest-neighbor. Empty-vs-nonempty: hd = asd = image diagonal, flagged.
BoundaryStats boundary_distance(const BinaryMask& pred, const BinaryMask& gt);

struct TTestResult {
  double t = 0, p = 1;
  bool degenerate = false;  // zero-variance differences
};

// Two-sided paired t-test with n-1 degrees of freedom.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta, exposed for the t distribution evaluation.
double incomplete_beta(double a, double b, double x);

}  // namespace hasa
