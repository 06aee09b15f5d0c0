#pragma once

// Test-only oracles: independent reference implementations used to validate
// the library. These stay deliberately naive (nested loops, no autodiff
// machinery) so they cannot share bugs with the code under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hasa/ops.hpp"
#include "hasa/rng.hpp"
#include "hasa/tape.hpp"
#include "hasa/tensor.hpp"

namespace oracle {

// Direct correlation with stride/padding/dilation/groups, all nested loops.
inline hasa::Tensor conv2d_bruteforce(const hasa::Tensor& x, const hasa::Tensor& w,
                                      const hasa::Tensor* bias, int stride, int padding,
                                      int dilation, int groups) {
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int OC = w.shape.n, KH = w.shape.h, KW = w.shape.w;
  const int ICG = C / groups, OCG = OC / groups;
  const int OH = (H + 2 * padding - dilation * (KH - 1) - 1) / stride + 1;
  const int OW = (W + 2 * padding - dilation * (KW - 1) - 1) / stride + 1;
  hasa::Tensor y(hasa::Shape4{N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias ? bias->data[oc] : 0.0;
          const int g = oc / OCG;
          for (int ic = 0; ic < ICG; ++ic)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride - padding + ky * dilation;
                const int ix = ox * stride - padding + kx * dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.at(n, g * ICG + ic, iy, ix)) *
                       w.at(oc, ic, ky, kx);
              }
          y.at(n, oc, oy, ox) = static_cast<float>(acc);
        }
  return y;
}

// Half-pixel-center bilinear interpolation evaluated from the formula at
// every output coordinate.
inline hasa::Tensor bilinear_bruteforce(const hasa::Tensor& x, int factor) {
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int OH = H * factor, OW = W * factor;
  hasa::Tensor y(hasa::Shape4{N, C, OH, OW});
  auto sample = [&](int n, int c, float sy, float sx) {
    const auto cl = [](float v, int hi) { return std::min(std::max(v, 0.0f), float(hi)); };
    sy = cl(sy, H - 1);
    sx = cl(sx, W - 1);
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, H - 1);
    const int x1 = std::min(x0 + 1, W - 1);
    const float ty = sy - y0, tx = sx - x0;
    return (1 - ty) * ((1 - tx) * x.at(n, c, y0, x0) + tx * x.at(n, c, y0, x1)) +
           ty * ((1 - tx) * x.at(n, c, y1, x0) + tx * x.at(n, c, y1, x1));
  };
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          y.at(n, c, oy, ox) =
              sample(n, c, (oy + 0.5f) / factor - 0.5f, (ox + 0.5f) / factor - 0.5f);
  return y;
}

inline double max_abs_diff(const hasa::Tensor& a, const hasa::Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Central finite differences against the tape gradients.
//
// loss_fn(tape) must rebuild the forward pass from the parameters' current
// values; it is called once with a tape for the analytic gradients and twice
// per sampled entry (tape-less) for the numeric ones. Relative error uses an
// absolute floor tied to the gradient scale so float32 evaluation noise on
// near-zero entries is not misread as disagreement.
// ---------------------------------------------------------------------------

struct FdStats {
  double max_rel = 0.0;
  double median_rel = 0.0;
  int checked = 0;
};

inline FdStats fd_check(const std::function<hasa::Tensor(hasa::Tape*)>& loss_fn,
                        const std::vector<hasa::Parameter*>& params, int max_entries,
                        double h, hasa::Rng& rng) {
  hasa::Tape tape;
  hasa::Tensor loss = loss_fn(&tape);
  tape.backward(loss);

  std::vector<std::pair<hasa::Parameter*, size_t>> entries;
  for (hasa::Parameter* p : params)
    for (size_t i = 0; i < p->value.data.size(); ++i) entries.emplace_back(p, i);
  rng.shuffle(entries);
  if (static_cast<int>(entries.size()) > max_entries) entries.resize(max_entries);

  std::vector<double> gad(entries.size()), gfd(entries.size());
  for (size_t k = 0; k < entries.size(); ++k) {
    auto [p, i] = entries[k];
    gad[k] = p->grad ? (*p->grad).data[i] : 0.0;
    const float saved = p->value.data[i];
    p->value.data[i] = saved + static_cast<float>(h);
    const double lp = loss_fn(nullptr).item();
    p->value.data[i] = saved - static_cast<float>(h);
    const double lm = loss_fn(nullptr).item();
    p->value.data[i] = saved;
    gfd[k] = (lp - lm) / (2.0 * h);
  }

  double gmax = 0.0;
  for (double g : gfd) gmax = std::max(gmax, std::abs(g));
  for (double g : gad) gmax = std::max(gmax, std::abs(g));
  // Scale-relative floor: float32 forward evaluation carries ~ulp(loss)/2h of
  // noise per finite difference, so near-zero entries are judged against the
  // gradient's overall scale. A sign or factor error on any entry carrying
  // >1% of the peak gradient still reads as rel >= 0.1.
  const double floor = 0.1 * gmax + 1e-12;

  std::vector<double> rels(entries.size());
  FdStats st;
  st.checked = static_cast<int>(entries.size());
  for (size_t k = 0; k < entries.size(); ++k) {
    const double denom = std::max({std::abs(gad[k]), std::abs(gfd[k]), floor});
    rels[k] = std::abs(gad[k] - gfd[k]) / denom;
    st.max_rel = std::max(st.max_rel, rels[k]);
  }
  if (!rels.empty()) {
    std::sort(rels.begin(), rels.end());
    st.median_rel = rels[rels.size() / 2];
  }
  return st;
}

inline hasa::Tensor random_tensor(hasa::Shape4 s, hasa::Rng& rng, float lo = -1.0f,
                                  float hi = 1.0f) {
  hasa::Tensor t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace oracle
