#pragma once

#include <cstdint>
#include <vector>

#include "hasa/mask.hpp"
#include "hasa/rng.hpp"
#include "hasa/tensor.hpp"

namespace hasa {

inline constexpr int kNumLesionClasses = 9;
inline constexpr int kNumSegClasses = 3;  // background, ovary, follicle

struct ClassSample {
  Tensor image;  // (1, 1, H, W), raw intensities in [0, 1]
  int label = 0;
  int subject_id = 0;
};

struct ClassDataset {
  std::vector<ClassSample> samples;
  int n_classes = kNumLesionClasses;
  int image_size = 0;
  float mean = 0.0f, stdev = 1.0f;  // dataset statistics over raw intensities
};

struct SegSample {
  Tensor image;  // (1, 1, H, W)
  Mask mask;     // values {0, 1, 2}; follicle pixels always inside the ovary
  int subject_id = 0;
};

struct SegDataset {
  std::vector<SegSample> samples;
  int image_size = 0;
  float mean = 0.0f, stdev = 1.0f;
};

// Nine procedurally distinct lesion texture classes with intra-class jitter
// and speckle noise. Two images per subject; class-stratified and
// seed-deterministic.
ClassDataset gen_classification_set(int n_per_class, int size, uint64_t seed);

// One ovary ellipse with 1-8 interior follicles, speckle and an intensity
// gradient. Four images per subject pose.
SegDataset gen_segmentation_set(int n, int size, uint64_t seed);

struct AugmentConfig {
  float rotation_degrees = 20.0f;
  float hflip_prob = 0.5f;
  bool normalize = true;
};

// Rotation by a uniformly sampled angle in [-deg, +deg] (bilinear for the
// image, nearest-neighbor for the mask, applied jointly) and a joint
// horizontal flip. Normalization happens last, in the batch assembly.
ClassSample augment(const ClassSample& s, const AugmentConfig& cfg, Rng& rng);
SegSample augment(const SegSample& s, const AugmentConfig& cfg, Rng& rng);

Tensor normalize_image(const Tensor& img, float mean, float stdev);

// Exact 90-degree rotation (k quarter turns), used by the pretext task.
Tensor rotate90(const Tensor& img, int k);

// Deterministic subject-grouped split: all samples of one subject land on the
// same side. `fraction` is the share of the first returned set; for labeled
// data the split is stratified by class.
struct SplitIndices {
  std::vector<int> first, second;
};
SplitIndices split_by_subject(const std::vector<int>& subject_ids,
                              const std::vector<int>& labels, double fraction, uint64_t seed);

}  // namespace hasa
