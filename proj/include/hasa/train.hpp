#pragma once

#include "hasa/metrics.hpp"
#include "hasa/model.hpp"

namespace hasa {

struct TrainOpts {
  int epochs = 12;
  int batch_size = 16;
  float lr_start = 0.01f;
  float lr_end = 0.001f;  // cosine schedule between the two
  uint64_t seed = 1;
  bool augment = false;
  AugmentConfig aug;
};

// Returns the per-epoch mean training loss.
std::vector<float> train_classifier(ClassifierModel& model, const ClassDataset& train,
                                    const TrainOpts& opts);
std::vector<float> train_segmenter(SegModel& model, const SegDataset& train,
                                   const TrainOpts& opts);

struct ClsEval {
  ConfusionMatrix cm;
  ClassificationMetrics metrics;
  std::vector<int> preds;
  std::vector<double> gt_probs;  // probability assigned to the true class
};

ClsEval eval_classifier(ClassifierModel& model, const ClassDataset& test);

struct SegEval {
  struct ClassStats {
    double dsc = 0, jc = 0, hd = 0, asd = 0;
  };
  ClassStats ovary, follicle;  // means over samples
  std::vector<double> ovary_dsc, follicle_dsc;  // per sample
};

SegEval eval_segmenter(SegModel& model, const SegDataset& test);

}  // namespace hasa
