#include "hasa/losses.hpp"

namespace hasa {

Tensor dice_loss(const Tensor& probs, const std::vector<Mask>& targets, float eps) {
  const int N = probs.shape.n, C = probs.shape.c, H = probs.shape.h, W = probs.shape.w;
  if (eps <= 0.0f) throw UsageError("dice_loss: smoothing constant must be positive");
  if (static_cast<int>(targets.size()) != N)
    throw DimensionError("dice_loss: target count does not match batch");
  for (const Mask& m : targets)
    if (m.h != H || m.w != W)
      throw DimensionError("dice_loss: mask size does not match prediction");
  if (C < 2) throw DimensionError("dice_loss: need at least one foreground class");

  Tensor acc;
  bool first = true;
  for (int c = 1; c < C; ++c) {
    Tensor indicator(Shape4{N, 1, H, W});
    double tsum = 0.0;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (targets[n].at(y, x) == c) {
            indicator.at(n, 0, y, x) = 1.0f;
            tsum += 1.0;
          }
    Tensor pc = slice_channels(probs, c, c + 1);
    Tensor num = add_const(scale(sum_all(mul(pc, indicator)), 2.0f), eps);
    Tensor den = add_const(sum_all(pc), static_cast<float>(tsum) + eps);
    Tensor term = div(num, den);
    acc = first ? std::move(term) : add(acc, term);
    first = false;
  }
  return add_const(scale(acc, -1.0f / static_cast<float>(C - 1)), 1.0f);
}

}  // namespace hasa
