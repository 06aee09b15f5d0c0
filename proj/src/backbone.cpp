#include "hasa/backbone.hpp"

#include <algorithm>

#include "hasa/adam.hpp"
#include "hasa/data.hpp"

namespace hasa {

BackboneSpec BackboneSpec::desk_default() {
  BackboneSpec s;
  s.stages = {
      {16, 2, 1},   // 64 -> 32
      {32, 2, 1},   // -> 16, segmentation tap (4x)
      {48, 2, 1},   // -> 8, segmentation tap (8x); last kept stage for cells
      {96, 2, 2},   // -> 4, replaced by cells in the hybrid
      {192, 2, 2},  // -> 2, replaced by cells in the hybrid
  };
  s.in_channels = 1;
  s.frozen_through = 2;
  return s;
}

Backbone::ResBlock::ResBlock(const std::string& name, int ch, Rng& rng)
    : conv1(name + ".conv1", ch, ch, 3, ConvOpts{1, 1, 1, 1}, false, rng),
      conv2(name + ".conv2", ch, ch, 3, ConvOpts{1, 1, 1, 1}, false, rng),
      norm1(name + ".norm1", ch),
      norm2(name + ".norm2", ch) {}

Tensor Backbone::ResBlock::forward(const Tensor& x, Tape* tape) {
  Tensor h = relu(norm1.forward(conv1.forward(x, tape), tape));
  h = norm2.forward(conv2.forward(h, tape), tape);
  return relu(add(h, x));
}

void Backbone::ResBlock::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  norm1.collect(out);
  conv2.collect(out);
  norm2.collect(out);
}

Backbone::Backbone(const BackboneSpec& s, Rng& rng) : spec(s) {
  if (s.stages.empty()) throw ConfigError("backbone: no stages");
  int in_ch = s.in_channels;
  for (size_t i = 0; i < s.stages.size(); ++i) {
    const auto& st = s.stages[i];
    if (st.downsample != 1 && st.downsample != 2)
      throw ConfigError("backbone: per-stage downsample must be 1 or 2");
    Stage stage;
    const std::string name = "backbone.s" + std::to_string(i);
    stage.down = std::make_unique<Conv2dLayer>(name + ".down", in_ch, st.out_channels, 3,
                                               ConvOpts{st.downsample, 1, 1, 1}, false, rng);
    stage.down_norm = std::make_unique<NormLayer>(name + ".down_norm", st.out_channels);
    for (int b = 0; b < st.blocks; ++b)
      stage.blocks.emplace_back(name + ".b" + std::to_string(b), st.out_channels, rng);
    stages_.push_back(std::move(stage));
    in_ch = st.out_channels;
  }
}

std::vector<Tensor> Backbone::forward_stages(const Tensor& x, int upto, Tape* tape) {
  if (upto < 0 || upto >= n_stages()) throw UsageError("backbone: stage index out of range");
  std::vector<Tensor> outs;
  Tensor h = x;
  for (int i = 0; i <= upto; ++i) {
    h = relu(stages_[i].down_norm->forward(stages_[i].down->forward(h, tape), tape));
    for (auto& b : stages_[i].blocks) h = b.forward(h, tape);
    outs.push_back(h);
  }
  return outs;
}

Tensor Backbone::forward_to(const Tensor& x, int stage, Tape* tape) {
  return forward_stages(x, stage, tape).back();
}

void Backbone::collect(std::vector<Parameter*>& out) {
  collect_through(n_stages() - 1, out);
}

void Backbone::collect_through(int stage, std::vector<Parameter*>& out) {
  for (int i = 0; i <= stage && i < n_stages(); ++i) {
    stages_[i].down->collect(out);
    stages_[i].down_norm->collect(out);
    for (auto& b : stages_[i].blocks) b.collect(out);
  }
}

void Backbone::freeze_through(int stage) {
  std::vector<Parameter*> ps;
  collect_through(stage, ps);
  for (auto* p : ps) p->frozen = true;
}

int Backbone::downsample_through(int stage) const {
  int f = 1;
  for (int i = 0; i <= stage; ++i) f *= spec.stages[i].downsample;
  return f;
}

int64_t Backbone::param_count_through(int stage) {
  std::vector<Parameter*> ps;
  collect_through(stage, ps);
  return count_params(ps);
}

void pretext_train(Backbone& backbone, int n_base_images, int image_size, int epochs,
                   int batch_size, float lr) {
  const uint64_t seed = backbone.spec.pretext_seed;
  ClassDataset corpus = gen_classification_set(
      std::max(1, n_base_images / kNumLesionClasses), image_size, splitmix64(seed ^ 0xabcdef));

  Rng rng(seed);
  Rng head_rng = rng.derive("pretext-head");
  const int last = backbone.n_stages() - 1;
  DenseLayer head("pretext.head", backbone.stage_channels(last), 4, head_rng);

  std::vector<Parameter*> params;
  backbone.collect(params);
  head.collect(params);
  Adam opt(params, lr);

  // each base image contributes all four rotations
  std::vector<std::pair<int, int>> items;  // (sample, k)
  for (size_t i = 0; i < corpus.samples.size(); ++i)
    for (int k = 0; k < 4; ++k) items.emplace_back(static_cast<int>(i), k);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng order = rng.derive(static_cast<uint64_t>(epoch) + 101);
    order.shuffle(items);
    for (size_t start = 0; start < items.size(); start += batch_size) {
      const size_t end = std::min(items.size(), start + batch_size);
      const int bs = static_cast<int>(end - start);
      Tensor batch(Shape4{bs, 1, image_size, image_size});
      std::vector<int> labels(bs);
      for (int b = 0; b < bs; ++b) {
        const auto [idx, k] = items[start + b];
        Tensor rot = rotate90(normalize_image(corpus.samples[idx].image, corpus.mean,
                                              corpus.stdev),
                              k);
        std::copy(rot.data.begin(), rot.data.end(),
                  batch.data.begin() + static_cast<size_t>(b) * image_size * image_size);
        labels[b] = k;
      }
      Tape tape;
      Tensor feats = backbone.forward_to(batch, last, &tape);
      Tensor pooled = pool2d(feats, PoolKind::global_avg, 0, 0, 0);
      Tensor logits = head.forward(pooled, &tape);
      Tensor loss = cross_entropy_loss(logits, labels);
      tape.backward(loss);
      opt.step();
    }
  }
  backbone.freeze_through(backbone.spec.frozen_through);
}

}  // namespace hasa
