#include "hasa/train.hpp"

#include <algorithm>
#include <cmath>

#include "hasa/adam.hpp"
#include "hasa/losses.hpp"

namespace hasa {

namespace {

constexpr double kPi = 3.14159265358979323846;

float cosine_lr(const TrainOpts& o, int epoch) {
  if (o.epochs <= 1) return o.lr_start;
  const double t = static_cast<double>(epoch) / (o.epochs - 1);
  return o.lr_end + 0.5f * (o.lr_start - o.lr_end) * static_cast<float>(1.0 + std::cos(kPi * t));
}

std::vector<std::vector<int>> shuffled_batches(size_t n, int batch_size, uint64_t seed,
                                               int epoch) {
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(splitmix64(seed ^ 0x70d0 ^ static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  return batches;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  const Shape4 s0 = images[0].shape;
  Tensor batch(Shape4{static_cast<int>(images.size()), s0.c, s0.h, s0.w});
  const size_t stride = static_cast<size_t>(s0.c) * s0.h * s0.w;
  for (size_t b = 0; b < images.size(); ++b)
    std::copy(images[b].data.begin(), images[b].data.end(), batch.data.begin() + b * stride);
  return batch;
}

}  // namespace

std::vector<float> train_classifier(ClassifierModel& model, const ClassDataset& train,
                                    const TrainOpts& opts) {
  Adam opt(model.trainable_params(), opts.lr_start);
  Rng aug_rng(splitmix64(opts.seed ^ 0xa06));

  // frozen backbone + no augmentation: reuse the backbone features
  std::vector<Tensor> tap_cache;
  if (!opts.augment) {
    tap_cache.reserve(train.samples.size());
    for (const auto& s : train.samples)
      tap_cache.push_back(
          model.backbone_tap(normalize_image(s.image, train.mean, train.stdev)));
  }

  std::vector<float> curve;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    opt.set_lr(cosine_lr(opts, epoch));
    double epoch_loss = 0.0;
    int steps = 0;
    for (const auto& batch : shuffled_batches(train.samples.size(), opts.batch_size, opts.seed,
                                              epoch)) {
      std::vector<int> labels;
      Tensor loss;
      Tape tape;
      if (opts.augment) {
        std::vector<Tensor> imgs;
        for (int i : batch) {
          ClassSample s = augment(train.samples[i], opts.aug, aug_rng);
          imgs.push_back(normalize_image(s.image, train.mean, train.stdev));
          labels.push_back(s.label);
        }
        loss = cross_entropy_loss(model.forward(stack_images(imgs), &tape), labels);
      } else {
        std::vector<Tensor> taps;
        for (int i : batch) {
          taps.push_back(tap_cache[i]);
          labels.push_back(train.samples[i].label);
        }
        loss = cross_entropy_loss(model.forward_from_tap(stack_images(taps), &tape), labels);
      }
      tape.backward(loss);
      opt.step();
      epoch_loss += loss.item();
      ++steps;
    }
    curve.push_back(static_cast<float>(epoch_loss / std::max(1, steps)));
  }
  return curve;
}

std::vector<float> train_segmenter(SegModel& model, const SegDataset& train,
                                   const TrainOpts& opts) {
  Adam opt(model.trainable_params(), opts.lr_start);
  Rng aug_rng(splitmix64(opts.seed ^ 0xa06));

  std::vector<std::pair<Tensor, Tensor>> tap_cache;
  if (!opts.augment) {
    tap_cache.reserve(train.samples.size());
    for (const auto& s : train.samples)
      tap_cache.push_back(
          model.backbone_taps(normalize_image(s.image, train.mean, train.stdev)));
  }

  std::vector<float> curve;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    opt.set_lr(cosine_lr(opts, epoch));
    double epoch_loss = 0.0;
    int steps = 0;
    for (const auto& batch : shuffled_batches(train.samples.size(), opts.batch_size, opts.seed,
                                              epoch)) {
      std::vector<Mask> masks;
      Tensor loss;
      Tape tape;
      if (opts.augment) {
        std::vector<Tensor> imgs;
        for (int i : batch) {
          SegSample s = augment(train.samples[i], opts.aug, aug_rng);
          imgs.push_back(normalize_image(s.image, train.mean, train.stdev));
          masks.push_back(std::move(s.mask));
        }
        Tensor logits = model.forward(stack_images(imgs), &tape);
        loss = dice_loss(softmax_channel(logits), masks);
      } else {
        std::vector<Tensor> hi, lo;
        for (int i : batch) {
          hi.push_back(tap_cache[i].first);
          lo.push_back(tap_cache[i].second);
          masks.push_back(train.samples[i].mask);
        }
        Tensor logits = model.forward_from_taps(stack_images(hi), stack_images(lo), &tape);
        loss = dice_loss(softmax_channel(logits), masks);
      }
      tape.backward(loss);
      opt.step();
      epoch_loss += loss.item();
      ++steps;
    }
    curve.push_back(static_cast<float>(epoch_loss / std::max(1, steps)));
  }
  return curve;
}

ClsEval eval_classifier(ClassifierModel& model, const ClassDataset& test) {
  std::vector<int> preds, labels;
  std::vector<double> gt_probs;
  constexpr int kBatch = 32;
  for (size_t start = 0; start < test.samples.size(); start += kBatch) {
    const size_t end = std::min(test.samples.size(), start + kBatch);
    std::vector<Tensor> imgs;
    for (size_t i = start; i < end; ++i)
      imgs.push_back(normalize_image(test.samples[i].image, test.mean, test.stdev));
    Tensor probs = softmax_channel(model.forward(stack_images(imgs), nullptr));
    for (size_t i = start; i < end; ++i) {
      const int b = static_cast<int>(i - start);
      int arg = 0;
      for (int k = 1; k < probs.shape.c; ++k)
        if (probs.at(b, k, 0, 0) > probs.at(b, arg, 0, 0)) arg = k;
      preds.push_back(arg);
      labels.push_back(test.samples[i].label);
      gt_probs.push_back(probs.at(b, test.samples[i].label, 0, 0));
    }
  }
  ClsEval out{confusion_matrix(preds, labels, model.build.n_classes), {}, std::move(preds),
              std::move(gt_probs)};
  out.metrics = classification_metrics(out.cm);
  return out;
}

SegEval eval_segmenter(SegModel& model, const SegDataset& test) {
  SegEval out;
  double o_dsc = 0, o_jc = 0, o_hd = 0, o_asd = 0;
  double f_dsc = 0, f_jc = 0, f_hd = 0, f_asd = 0;
  for (const auto& sample : test.samples) {
    Tensor logits =
        model.forward(normalize_image(sample.image, test.mean, test.stdev), nullptr);
    Mask pred(logits.shape.h, logits.shape.w, 0);
    for (int y = 0; y < logits.shape.h; ++y)
      for (int x = 0; x < logits.shape.w; ++x) {
        int arg = 0;
        for (int k = 1; k < logits.shape.c; ++k)
          if (logits.at(0, k, y, x) > logits.at(0, arg, y, x)) arg = k;
        pred.at(y, x) = static_cast<uint8_t>(arg);
      }

    const BinaryMask po = select_class(pred, 1, /*organ=*/true);
    const BinaryMask go = select_class(sample.mask, 1, /*organ=*/true);
    const BinaryMask pf = select_class(pred, 2);
    const BinaryMask gf = select_class(sample.mask, 2);

    const auto [od, oj] = region_overlap(po, go);
    const auto [fd, fj] = region_overlap(pf, gf);
    const BoundaryStats ob = boundary_distance(po, go);
    const BoundaryStats fb = boundary_distance(pf, gf);

    out.ovary_dsc.push_back(od);
    out.follicle_dsc.push_back(fd);
    o_dsc += od;
    o_jc += oj;
    o_hd += ob.hd;
    o_asd += ob.asd;
    f_dsc += fd;
    f_jc += fj;
    f_hd += fb.hd;
    f_asd += fb.asd;
  }
  const double n = static_cast<double>(test.samples.size());
  out.ovary = {o_dsc / n, o_jc / n, o_hd / n, o_asd / n};
  out.follicle = {f_dsc / n, f_jc / n, f_hd / n, f_asd / n};
  return out;
}

}  // namespace hasa
