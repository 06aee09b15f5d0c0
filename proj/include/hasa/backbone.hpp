#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hasa/layers.hpp"

namespace hasa {

struct BackboneStageSpec {
  int out_channels = 0;
  int downsample = 2;  // 1 or 2
  int blocks = 1;      // residual blocks after the transition conv
};

struct BackboneSpec {
  std::vector<BackboneStageSpec> stages;
  int in_channels = 1;
  int frozen_through = 2;  // stages 0..frozen_through freeze after pretext
  uint64_t pretext_seed = 1;

  // Five stages; the last two take up the bulk of the parameters and are the
  // ones the hybrid model replaces with cells.
  static BackboneSpec desk_default();
};

// Small residual feature extractor. Stage i = stride-`downsample` transition
// conv + `blocks` residual blocks.
class Backbone {
 public:
  Backbone(const BackboneSpec& spec, Rng& rng);

  // Outputs of stages 0..upto (inclusive).
  std::vector<Tensor> forward_stages(const Tensor& x, int upto, Tape* tape);
  Tensor forward_to(const Tensor& x, int stage, Tape* tape);

  void collect(std::vector<Parameter*>& out);
  void collect_through(int stage, std::vector<Parameter*>& out);
  void freeze_through(int stage);

  int n_stages() const { return static_cast<int>(stages_.size()); }
  int stage_channels(int i) const { return spec.stages[i].out_channels; }
  int downsample_through(int stage) const;  // cumulative factor
  int64_t param_count_through(int stage);

  BackboneSpec spec;

 private:
  struct ResBlock {
    ResBlock(const std::string& name, int ch, Rng& rng);
    Tensor forward(const Tensor& x, Tape* tape);
    void collect(std::vector<Parameter*>& out);
    Conv2dLayer conv1, conv2;
    NormLayer norm1, norm2;
  };
  struct Stage {
    std::unique_ptr<Conv2dLayer> down;
    std::unique_ptr<NormLayer> down_norm;
    std::vector<ResBlock> blocks;
  };
  std::vector<Stage> stages_;
};

// Trains the backbone on 4-way rotation prediction over a small synthetic
// corpus, then freezes stages 0..spec.frozen_through. Deterministic in
// spec.pretext_seed.
void pretext_train(Backbone& backbone, int n_base_images, int image_size, int epochs,
                   int batch_size, float lr);

}  // namespace hasa
