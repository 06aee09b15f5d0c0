#pragma once

#include <vector>

#include "hasa/mask.hpp"
#include "hasa/ops.hpp"

namespace hasa {

// 1 - mean over foreground classes (every class except 0) of
// (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), with sums taken over the
// whole batch. probs are per-class channel probabilities (N, C, H, W).
Tensor dice_loss(const Tensor& probs, const std::vector<Mask>& targets, float eps = 1.0f);

}  // namespace hasa
