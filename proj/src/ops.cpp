#include "hasa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace hasa {

namespace {

Tape* joint_tape(std::initializer_list<const Tensor*> ins) {
  Tape* t = nullptr;
  for (const Tensor* x : ins) {
    if (!x || x->node < 0) continue;
    if (t && x->tape != t) throw UsageError("operands live on different tapes");
    t = x->tape;
  }
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!(a.shape == b.shape))
    throw DimensionError(std::string(where) + ": shape mismatch " + to_string(a.shape) +
                         " vs " + to_string(b.shape));
}

void attach(Tensor& y, Tape* tape, Tape::BackwardFn fn) {
  if (!tape) return;
  y.tape = tape;
  y.node = tape->emit(std::move(fn));
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding, int dilation, const char* where) {
  const int span = dilation * (kernel - 1) + 1;
  const int out = (in + 2 * padding - span) / stride + 1;
  if (in + 2 * padding < span || out <= 0)
    throw ConfigError(std::string(where) + ": zero-size output (input " + std::to_string(in) +
                      ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding) + ", dilation " +
                      std::to_string(dilation) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
  check_finite(y, "add");
  Tape* t = joint_tape({&a, &b});
  const int an = a.node, bn = b.node;
  attach(y, t, [an, bn](const Tensor& g, Tape& tp) {
    if (an >= 0) tp.accumulate(an, g.detached());
    if (bn >= 0) tp.accumulate(bn, g.detached());
  });
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] - b.data[i];
  check_finite(y, "sub");
  Tape* t = joint_tape({&a, &b});
  const int an = a.node, bn = b.node;
  attach(y, t, [an, bn](const Tensor& g, Tape& tp) {
    if (an >= 0) tp.accumulate(an, g.detached());
    if (bn >= 0) {
      Tensor gb(g.shape);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] = -g.data[i];
      tp.accumulate(bn, std::move(gb));
    }
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] * b.data[i];
  check_finite(y, "mul");
  Tape* t = joint_tape({&a, &b});
  if (t) {
    const int an = a.node, bn = b.node;
    Tensor av = a.detached(), bv = b.detached();
    attach(y, t, [an, bn, av, bv](const Tensor& g, Tape& tp) {
      if (an >= 0) {
        Tensor ga(g.shape);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = g.data[i] * bv.data[i];
        tp.accumulate(an, std::move(ga));
      }
      if (bn >= 0) {
        Tensor gb(g.shape);
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] = g.data[i] * av.data[i];
        tp.accumulate(bn, std::move(gb));
      }
    });
  }
  return y;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] / b.data[i];
  check_finite(y, "div");
  Tape* t = joint_tape({&a, &b});
  if (t) {
    const int an = a.node, bn = b.node;
    Tensor av = a.detached(), bv = b.detached();
    attach(y, t, [an, bn, av, bv](const Tensor& g, Tape& tp) {
      if (an >= 0) {
        Tensor ga(g.shape);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = g.data[i] / bv.data[i];
        tp.accumulate(an, std::move(ga));
      }
      if (bn >= 0) {
        Tensor gb(g.shape);
        for (size_t i = 0; i < gb.data.size(); ++i)
          gb.data[i] = -g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
        tp.accumulate(bn, std::move(gb));
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, float k) {
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] * k;
  check_finite(y, "scale");
  Tape* t = joint_tape({&a});
  const int an = a.node;
  attach(y, t, [an, k](const Tensor& g, Tape& tp) {
    Tensor ga(g.shape);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = g.data[i] * k;
    tp.accumulate(an, std::move(ga));
  });
  return y;
}

Tensor add_const(const Tensor& a, float k) {
  Tensor y(a.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] + k;
  check_finite(y, "add_const");
  Tape* t = joint_tape({&a});
  const int an = a.node;
  attach(y, t, [an](const Tensor& g, Tape& tp) { tp.accumulate(an, g.detached()); });
  return y;
}

Tensor scale_by(const Tensor& s, const Tensor& x) {
  if (!s.is_scalar()) throw DimensionError("scale_by: scale must be a 1-element tensor");
  const float sv = s.data[0];
  Tensor y(x.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = sv * x.data[i];
  check_finite(y, "scale_by");
  Tape* t = joint_tape({&s, &x});
  if (t) {
    const int sn = s.node, xn = x.node;
    Tensor xv = x.detached();
    attach(y, t, [sn, xn, sv, xv](const Tensor& g, Tape& tp) {
      if (sn >= 0) {
        double acc = 0.0;
        for (size_t i = 0; i < g.data.size(); ++i)
          acc += static_cast<double>(g.data[i]) * xv.data[i];
        Tensor gs(Shape4{1, 1, 1, 1});
        gs.data[0] = static_cast<float>(acc);
        tp.accumulate(sn, std::move(gs));
      }
      if (xn >= 0) {
        Tensor gx(g.shape);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] = sv * g.data[i];
        tp.accumulate(xn, std::move(gx));
      }
    });
  }
  return y;
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  if (gate.shape.n != x.shape.n || gate.shape.c != x.shape.c || gate.shape.h != 1 ||
      gate.shape.w != 1)
    throw DimensionError("scale_channels: gate must be (n,c,1,1) matching input, got " +
                         to_string(gate.shape) + " for " + to_string(x.shape));
  const int N = x.shape.n, C = x.shape.c, HW = x.shape.h * x.shape.w;
  Tensor y(x.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float gv = gate.data[n * C + c];
      const size_t base = (static_cast<size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) y.data[base + i] = x.data[base + i] * gv;
    }
  check_finite(y, "scale_channels");
  Tape* t = joint_tape({&x, &gate});
  if (t) {
    const int xn = x.node, gn = gate.node;
    Tensor xv = x.detached(), gv = gate.detached();
    attach(y, t, [xn, gn, xv, gv, N, C, HW](const Tensor& g, Tape& tp) {
      if (xn >= 0) {
        Tensor gx(xv.shape);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const float s = gv.data[n * C + c];
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) gx.data[base + i] = g.data[base + i] * s;
          }
        tp.accumulate(xn, std::move(gx));
      }
      if (gn >= 0) {
        Tensor gg(gv.shape);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            double acc = 0.0;
            for (int i = 0; i < HW; ++i)
              acc += static_cast<double>(g.data[base + i]) * xv.data[base + i];
            gg.data[n * C + c] = static_cast<float>(acc);
          }
        tp.accumulate(gn, std::move(gg));
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_channels: no inputs");
  const Shape4 s0 = parts[0].shape;
  int ctotal = 0;
  for (const Tensor& p : parts) {
    if (p.shape.n != s0.n || p.shape.h != s0.h || p.shape.w != s0.w)
      throw DimensionError("concat_channels: incompatible shapes");
    ctotal += p.shape.c;
  }
  Tensor y(Shape4{s0.n, ctotal, s0.h, s0.w});
  const int HW = s0.h * s0.w;
  int coff = 0;
  for (const Tensor& p : parts) {
    for (int n = 0; n < s0.n; ++n)
      std::memcpy(&y.data[(static_cast<size_t>(n) * ctotal + coff) * HW],
                  &p.data[static_cast<size_t>(n) * p.shape.c * HW],
                  sizeof(float) * p.shape.c * HW);
    coff += p.shape.c;
  }
  Tape* t = nullptr;
  for (const Tensor& p : parts) {
    if (p.node < 0) continue;
    if (t && p.tape != t) throw UsageError("operands live on different tapes");
    t = p.tape;
  }
  if (t) {
    std::vector<int> nodes;
    std::vector<int> chans;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) {
      nodes.push_back(p.node);
      chans.push_back(p.shape.c);
    }
    const int N = s0.n;
    attach(y, t, [nodes, chans, N, HW, ctotal](const Tensor& g, Tape& tp) {
      int off = 0;
      for (size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] >= 0) {
          Tensor gp(Shape4{N, chans[k], g.shape.h, g.shape.w});
          for (int n = 0; n < N; ++n)
            std::memcpy(&gp.data[static_cast<size_t>(n) * chans[k] * HW],
                        &g.data[(static_cast<size_t>(n) * ctotal + off) * HW],
                        sizeof(float) * chans[k] * HW);
          tp.accumulate(nodes[k], std::move(gp));
        }
        off += chans[k];
      }
    });
  }
  return y;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.shape.c || c0 >= c1)
    throw DimensionError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + to_string(x.shape));
  const int N = x.shape.n, C = x.shape.c, HW = x.shape.h * x.shape.w, CS = c1 - c0;
  Tensor y(Shape4{N, CS, x.shape.h, x.shape.w});
  for (int n = 0; n < N; ++n)
    std::memcpy(&y.data[static_cast<size_t>(n) * CS * HW],
                &x.data[(static_cast<size_t>(n) * C + c0) * HW], sizeof(float) * CS * HW);
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    const Shape4 xs = x.shape;
    attach(y, t, [xn, xs, c0, CS, HW](const Tensor& g, Tape& tp) {
      Tensor gx(xs, 0.0f);
      for (int n = 0; n < xs.n; ++n)
        std::memcpy(&gx.data[(static_cast<size_t>(n) * xs.c + c0) * HW],
                    &g.data[static_cast<size_t>(n) * CS * HW], sizeof(float) * CS * HW);
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

Tensor crop_shift(const Tensor& x, int dy, int dx) {
  if (dy < 0 || dx < 0 || dy >= x.shape.h || dx >= x.shape.w)
    throw DimensionError("crop_shift: offset out of range for " + to_string(x.shape));
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int OH = H - dy, OW = W - dx;
  Tensor y(Shape4{N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) y.at(n, c, oy, ox) = x.at(n, c, oy + dy, ox + dx);
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    const Shape4 xs = x.shape;
    attach(y, t, [xn, xs, dy, dx, OH, OW](const Tensor& g, Tape& tp) {
      Tensor gx(xs, 0.0f);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox)
              gx.at(n, c, oy + dy, ox + dx) = g.at(n, c, oy, ox);
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor y(x.shape);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    Tensor xv = x.detached();
    attach(y, t, [xn, xv](const Tensor& g, Tape& tp) {
      Tensor gx(g.shape);
      for (size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] = xv.data[i] > 0.0f ? g.data[i] : 0.0f;
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape);
  for (size_t i = 0; i < y.data.size(); ++i) {
    const float v = x.data[i];
    y.data[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                          : std::exp(v) / (1.0f + std::exp(v));
  }
  check_finite(y, "sigmoid");
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    Tensor yv = y.detached();
    attach(y, t, [xn, yv](const Tensor& g, Tape& tp) {
      Tensor gx(g.shape);
      for (size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] = g.data[i] * yv.data[i] * (1.0f - yv.data[i]);
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

Tensor softmax_channel(const Tensor& x) {
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  Tensor y(x.shape);
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < C; ++c) mx = std::max(mx, x.at(n, c, h, w));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(x.at(n, c, h, w)) - mx);
        for (int c = 0; c < C; ++c)
          y.at(n, c, h, w) =
              static_cast<float>(std::exp(static_cast<double>(x.at(n, c, h, w)) - mx) / sum);
      }
  check_finite(y, "softmax_channel");
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    Tensor yv = y.detached();
    attach(y, t, [xn, yv, N, C, H, W](const Tensor& g, Tape& tp) {
      Tensor gx(yv.shape);
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c)
              dot += static_cast<double>(g.at(n, c, h, w)) * yv.at(n, c, h, w);
            for (int c = 0; c < C; ++c)
              gx.at(n, c, h, w) = static_cast<float>(
                  yv.at(n, c, h, w) * (static_cast<double>(g.at(n, c, h, w)) - dot));
          }
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv / pool / upsample / dense / norm
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvOpts& o) {
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int OC = w.shape.n, KH = w.shape.h, KW = w.shape.w;
  if (o.groups < 1 || C % o.groups != 0 || OC % o.groups != 0)
    throw DimensionError("conv2d: channels not divisible by groups");
  const int ICG = C / o.groups, OCG = OC / o.groups;
  if (w.shape.c != ICG)
    throw DimensionError("conv2d: weight shape " + to_string(w.shape) +
                         " incompatible with input " + to_string(x.shape) + " and groups " +
                         std::to_string(o.groups));
  if (bias && !(bias->shape == Shape4{1, OC, 1, 1}))
    throw DimensionError("conv2d: bias must be (1," + std::to_string(OC) + ",1,1)");
  const int OH = conv_out_extent(H, KH, o.stride, o.padding, o.dilation, "conv2d");
  const int OW = conv_out_extent(W, KW, o.stride, o.padding, o.dilation, "conv2d");

  Tensor y(Shape4{N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < o.groups; ++g)
      for (int ocl = 0; ocl < OCG; ++ocl) {
        const int oc = g * OCG + ocl;
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            double acc = bias ? bias->data[oc] : 0.0;
            for (int ic = 0; ic < ICG; ++ic) {
              const int sc = g * ICG + ic;
              for (int ky = 0; ky < KH; ++ky) {
                const int iy = oy * o.stride - o.padding + ky * o.dilation;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < KW; ++kx) {
                  const int ix = ox * o.stride - o.padding + kx * o.dilation;
                  if (ix < 0 || ix >= W) continue;
                  acc += static_cast<double>(x.at(n, sc, iy, ix)) * w.at(oc, ic, ky, kx);
                }
              }
            }
            y.at(n, oc, oy, ox) = static_cast<float>(acc);
          }
      }
  check_finite(y, "conv2d");

  Tape* t = joint_tape({&x, &w, bias});
  if (t) {
    const int xn = x.node, wn = w.node, bn = bias ? bias->node : -1;
    Tensor xv = x.detached(), wv = w.detached();
    const ConvOpts opts = o;
    attach(y, t, [xn, wn, bn, xv, wv, opts, N, C, H, W, OC, KH, KW, ICG, OCG, OH,
                  OW](const Tensor& g, Tape& tp) {
      std::vector<double> gx(xn >= 0 ? xv.data.size() : 0, 0.0);
      std::vector<double> gw(wn >= 0 ? wv.data.size() : 0, 0.0);
      std::vector<double> gb(bn >= 0 ? static_cast<size_t>(OC) : 0, 0.0);
      for (int n = 0; n < N; ++n)
        for (int grp = 0; grp < opts.groups; ++grp)
          for (int ocl = 0; ocl < OCG; ++ocl) {
            const int oc = grp * OCG + ocl;
            for (int oy = 0; oy < OH; ++oy)
              for (int ox = 0; ox < OW; ++ox) {
                const double go = g.at(n, oc, oy, ox);
                if (bn >= 0) gb[oc] += go;
                for (int ic = 0; ic < ICG; ++ic) {
                  const int sc = grp * ICG + ic;
                  for (int ky = 0; ky < KH; ++ky) {
                    const int iy = oy * opts.stride - opts.padding + ky * opts.dilation;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                      const int ix = ox * opts.stride - opts.padding + kx * opts.dilation;
                      if (ix < 0 || ix >= W) continue;
                      const size_t xi =
                          ((static_cast<size_t>(n) * C + sc) * H + iy) * W + ix;
                      const size_t wi =
                          ((static_cast<size_t>(oc) * ICG + ic) * KH + ky) * KW + kx;
                      if (xn >= 0) gx[xi] += go * wv.data[wi];
                      if (wn >= 0) gw[wi] += go * xv.data[xi];
                    }
                  }
                }
              }
          }
      if (xn >= 0) {
        Tensor gxt(xv.shape);
        for (size_t i = 0; i < gx.size(); ++i) gxt.data[i] = static_cast<float>(gx[i]);
        tp.accumulate(xn, std::move(gxt));
      }
      if (wn >= 0) {
        Tensor gwt(wv.shape);
        for (size_t i = 0; i < gw.size(); ++i) gwt.data[i] = static_cast<float>(gw[i]);
        tp.accumulate(wn, std::move(gwt));
      }
      if (bn >= 0) {
        Tensor gbt(Shape4{1, OC, 1, 1});
        for (int i = 0; i < OC; ++i) gbt.data[i] = static_cast<float>(gb[i]);
        tp.accumulate(bn, std::move(gbt));
      }
    });
  }
  return y;
}

Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding) {
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  if (kind == PoolKind::global_avg) {
    Tensor y(Shape4{N, C, 1, 1});
    const int HW = H * W;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const size_t base = (static_cast<size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) acc += x.data[base + i];
        y.data[n * C + c] = static_cast<float>(acc / HW);
      }
    check_finite(y, "pool2d");
    Tape* t = joint_tape({&x});
    if (t) {
      const int xn = x.node;
      const Shape4 xs = x.shape;
      attach(y, t, [xn, xs, HW](const Tensor& g, Tape& tp) {
        Tensor gx(xs);
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c) {
            const float gv = g.data[n * xs.c + c] / HW;
            const size_t base = (static_cast<size_t>(n) * xs.c + c) * HW;
            for (int i = 0; i < HW; ++i) gx.data[base + i] = gv;
          }
        tp.accumulate(xn, std::move(gx));
      });
    }
    return y;
  }

  if (kernel < 1) throw ConfigError("pool2d: kernel must be >= 1");
  if (kernel > H + 2 * padding || kernel > W + 2 * padding)
    throw ConfigError("pool2d: kernel larger than padded input");
  const int OH = (H + 2 * padding - kernel) / stride + 1;
  const int OW = (W + 2 * padding - kernel) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ConfigError("pool2d: zero-size output");

  Tensor y(Shape4{N, C, OH, OW});
  // Saved per-output argmax (max) — used by backward.
  std::vector<int> argmax;
  if (kind == PoolKind::max) argmax.resize(y.data.size(), -1);

  size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox, ++oi) {
          double acc = 0.0;
          int count = 0;
          float best = -std::numeric_limits<float>::infinity();
          int besti = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= W) continue;
              const float v = x.at(n, c, iy, ix);
              if (kind == PoolKind::max) {
                if (v > best) {
                  best = v;
                  besti = iy * W + ix;
                }
              } else {
                acc += v;
                ++count;
              }
            }
          }
          if (kind == PoolKind::max) {
            if (besti < 0) throw ConfigError("pool2d: window has no valid input cell");
            y.data[oi] = best;
            argmax[oi] = besti;
          } else {
            if (count == 0) throw ConfigError("pool2d: window has no valid input cell");
            y.data[oi] = static_cast<float>(acc / count);
          }
        }
  check_finite(y, "pool2d");

  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    const Shape4 xs = x.shape;
    if (kind == PoolKind::max) {
      attach(y, t, [xn, xs, argmax, OH, OW](const Tensor& g, Tape& tp) {
        Tensor gx(xs, 0.0f);
        size_t oi = 0;
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c) {
            const size_t base = (static_cast<size_t>(n) * xs.c + c) * xs.h * xs.w;
            for (int k = 0; k < OH * OW; ++k, ++oi) gx.data[base + argmax[oi]] += g.data[oi];
          }
        tp.accumulate(xn, std::move(gx));
      });
    } else {
      const int K = kernel, S = stride, P = padding;
      attach(y, t, [xn, xs, K, S, P, OH, OW](const Tensor& g, Tape& tp) {
        Tensor gx(xs, 0.0f);
        size_t oi = 0;
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < OH; ++oy)
              for (int ox = 0; ox < OW; ++ox, ++oi) {
                int count = 0;
                for (int ky = 0; ky < K; ++ky) {
                  const int iy = oy * S - P + ky;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int kx = 0; kx < K; ++kx) {
                    const int ix = ox * S - P + kx;
                    if (ix < 0 || ix >= xs.w) continue;
                    ++count;
                  }
                }
                const float gv = g.data[oi] / count;
                for (int ky = 0; ky < K; ++ky) {
                  const int iy = oy * S - P + ky;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int kx = 0; kx < K; ++kx) {
                    const int ix = ox * S - P + kx;
                    if (ix < 0 || ix >= xs.w) continue;
                    gx.at(n, c, iy, ix) += gv;
                  }
                }
              }
        tp.accumulate(xn, std::move(gx));
      });
    }
  }
  return y;
}

namespace {

// Half-pixel-center source coordinate and interpolation weights, clamped at
// the border (constant extension).
struct LerpCoord {
  int i0, i1;
  float t;
};

LerpCoord lerp_coord(int out_idx, int factor, int in_extent) {
  const float src = (out_idx + 0.5f) / factor - 0.5f;
  float f = std::floor(src);
  int i0 = static_cast<int>(f);
  float t = src - f;
  int i1 = i0 + 1;
  if (i0 < 0) {
    i0 = 0;
    i1 = 0;
    t = 0.0f;
  } else if (i1 > in_extent - 1) {
    i1 = in_extent - 1;
    if (i0 > in_extent - 1) {
      i0 = in_extent - 1;
      t = 0.0f;
    }
  }
  return {i0, i1, t};
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (factor != 2 && factor != 4)
    throw ConfigError("bilinear_upsample: factor must be 2 or 4, got " + std::to_string(factor));
  const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int OH = H * factor, OW = W * factor;
  std::vector<LerpCoord> ys(OH), xs(OW);
  for (int i = 0; i < OH; ++i) ys[i] = lerp_coord(i, factor, H);
  for (int i = 0; i < OW; ++i) xs[i] = lerp_coord(i, factor, W);

  Tensor y(Shape4{N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy) {
        const auto& cy = ys[oy];
        for (int ox = 0; ox < OW; ++ox) {
          const auto& cx = xs[ox];
          const float v00 = x.at(n, c, cy.i0, cx.i0);
          const float v01 = x.at(n, c, cy.i0, cx.i1);
          const float v10 = x.at(n, c, cy.i1, cx.i0);
          const float v11 = x.at(n, c, cy.i1, cx.i1);
          y.at(n, c, oy, ox) = (1.0f - cy.t) * ((1.0f - cx.t) * v00 + cx.t * v01) +
                               cy.t * ((1.0f - cx.t) * v10 + cx.t * v11);
        }
      }
  check_finite(y, "bilinear_upsample");

  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    const Shape4 xshape = x.shape;
    attach(y, t, [xn, xshape, ys, xs, OH, OW](const Tensor& g, Tape& tp) {
      Tensor gx(xshape, 0.0f);
      for (int n = 0; n < xshape.n; ++n)
        for (int c = 0; c < xshape.c; ++c)
          for (int oy = 0; oy < OH; ++oy) {
            const auto& cy = ys[oy];
            for (int ox = 0; ox < OW; ++ox) {
              const auto& cx = xs[ox];
              const float gv = g.at(n, c, oy, ox);
              gx.at(n, c, cy.i0, cx.i0) += (1.0f - cy.t) * (1.0f - cx.t) * gv;
              gx.at(n, c, cy.i0, cx.i1) += (1.0f - cy.t) * cx.t * gv;
              gx.at(n, c, cy.i1, cx.i0) += cy.t * (1.0f - cx.t) * gv;
              gx.at(n, c, cy.i1, cx.i1) += cy.t * cx.t * gv;
            }
          }
      tp.accumulate(xn, std::move(gx));
    });
  }
  return y;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const int N = x.shape.n;
  const int F = x.shape.c * x.shape.h * x.shape.w;
  const int OUT = w.shape.n;
  if (w.shape.c != F || w.shape.h != 1 || w.shape.w != 1)
    throw DimensionError("dense: weight " + to_string(w.shape) + " incompatible with input " +
                         to_string(x.shape));
  if (bias && !(bias->shape == Shape4{1, OUT, 1, 1}))
    throw DimensionError("dense: bias must be (1," + std::to_string(OUT) + ",1,1)");

  Tensor y(Shape4{N, OUT, 1, 1});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < OUT; ++o) {
      double acc = bias ? bias->data[o] : 0.0;
      const size_t xb = static_cast<size_t>(n) * F;
      const size_t wb = static_cast<size_t>(o) * F;
      for (int f = 0; f < F; ++f)
        acc += static_cast<double>(x.data[xb + f]) * w.data[wb + f];
      y.data[static_cast<size_t>(n) * OUT + o] = static_cast<float>(acc);
    }
  check_finite(y, "dense");

  Tape* t = joint_tape({&x, &w, bias});
  if (t) {
    const int xn = x.node, wn = w.node, bn = bias ? bias->node : -1;
    Tensor xv = x.detached(), wv = w.detached();
    attach(y, t, [xn, wn, bn, xv, wv, N, F, OUT](const Tensor& g, Tape& tp) {
      if (xn >= 0) {
        Tensor gx(xv.shape);
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            for (int o = 0; o < OUT; ++o)
              acc += static_cast<double>(g.data[static_cast<size_t>(n) * OUT + o]) *
                     wv.data[static_cast<size_t>(o) * F + f];
            gx.data[static_cast<size_t>(n) * F + f] = static_cast<float>(acc);
          }
        tp.accumulate(xn, std::move(gx));
      }
      if (wn >= 0) {
        Tensor gw(wv.shape);
        for (int o = 0; o < OUT; ++o)
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n)
              acc += static_cast<double>(g.data[static_cast<size_t>(n) * OUT + o]) *
                     xv.data[static_cast<size_t>(n) * F + f];
            gw.data[static_cast<size_t>(o) * F + f] = static_cast<float>(acc);
          }
        tp.accumulate(wn, std::move(gw));
      }
      if (bn >= 0) {
        Tensor gb(Shape4{1, OUT, 1, 1});
        for (int o = 0; o < OUT; ++o) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += g.data[static_cast<size_t>(n) * OUT + o];
          gb.data[o] = static_cast<float>(acc);
        }
        tp.accumulate(bn, std::move(gb));
      }
    });
  }
  return y;
}

Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int N = x.shape.n, C = x.shape.c, HW = x.shape.h * x.shape.w;
  if (!(gamma.shape == Shape4{1, C, 1, 1}) || !(beta.shape == Shape4{1, C, 1, 1}))
    throw DimensionError("channel_norm: affine params must be (1,C,1,1)");

  Tensor y(x.shape);
  std::vector<float> mean(static_cast<size_t>(N) * C), invstd(static_cast<size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const size_t base = (static_cast<size_t>(n) * C + c) * HW;
      double m = 0.0;
      for (int i = 0; i < HW; ++i) m += x.data[base + i];
      m /= HW;
      double var = 0.0;
      for (int i = 0; i < HW; ++i) {
        const double d = x.data[base + i] - m;
        var += d * d;
      }
      var /= HW;
      const double is = 1.0 / std::sqrt(var + eps);
      mean[n * C + c] = static_cast<float>(m);
      invstd[n * C + c] = static_cast<float>(is);
      const float gmv = gamma.data[c], btv = beta.data[c];
      for (int i = 0; i < HW; ++i)
        y.data[base + i] =
            gmv * static_cast<float>((x.data[base + i] - m) * is) + btv;
    }
  check_finite(y, "channel_norm");

  Tape* t = joint_tape({&x, &gamma, &beta});
  if (t) {
    const int xn = x.node, gn = gamma.node, bn = beta.node;
    Tensor xv = x.detached(), gv = gamma.detached();
    attach(y, t, [xn, gn, bn, xv, gv, mean, invstd, N, C, HW](const Tensor& g, Tape& tp) {
      Tensor gx(xv.shape);
      std::vector<double> ggamma(C, 0.0), gbeta(C, 0.0);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const size_t base = (static_cast<size_t>(n) * C + c) * HW;
          const double m = mean[n * C + c], is = invstd[n * C + c];
          double sg = 0.0, sgx = 0.0;
          for (int i = 0; i < HW; ++i) {
            const double xh = (xv.data[base + i] - m) * is;
            const double gi = g.data[base + i];
            sg += gi;
            sgx += gi * xh;
            ggamma[c] += gi * xh;
            gbeta[c] += gi;
          }
          const double gs = gv.data[c] * is;
          for (int i = 0; i < HW; ++i) {
            const double xh = (xv.data[base + i] - m) * is;
            gx.data[base + i] =
                static_cast<float>(gs * (g.data[base + i] - sg / HW - xh * sgx / HW));
          }
        }
      if (xn >= 0) tp.accumulate(xn, std::move(gx));
      if (gn >= 0) {
        Tensor gg(Shape4{1, C, 1, 1});
        for (int c = 0; c < C; ++c) gg.data[c] = static_cast<float>(ggamma[c]);
        tp.accumulate(gn, std::move(gg));
      }
      if (bn >= 0) {
        Tensor gb(Shape4{1, C, 1, 1});
        for (int c = 0; c < C; ++c) gb.data[c] = static_cast<float>(gbeta[c]);
        tp.accumulate(bn, std::move(gb));
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data) acc += v;
  Tensor y(Shape4{1, 1, 1, 1});
  y.data[0] = static_cast<float>(acc);
  check_finite(y, "sum_all");
  Tape* t = joint_tape({&x});
  if (t) {
    const int xn = x.node;
    const Shape4 xs = x.shape;
    attach(y, t, [xn, xs](const Tensor& g, Tape& tp) {
      tp.accumulate(xn, Tensor(xs, g.data[0]));
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0f / static_cast<float>(x.shape.numel()));
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  const int N = logits.shape.n, K = logits.shape.c;
  if (logits.shape.h != 1 || logits.shape.w != 1)
    throw DimensionError("cross_entropy_loss: logits must be (batch, classes, 1, 1)");
  if (static_cast<int>(labels.size()) != N)
    throw UsageError("cross_entropy_loss: label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= K)
      throw UsageError("cross_entropy_loss: label " + std::to_string(y) + " out of range [0," +
                       std::to_string(K) + ")");

  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const size_t base = static_cast<size_t>(n) * K;
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.data[base + k]));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(logits.data[base + k] - mx);
    total += (mx + std::log(sum)) - logits.data[base + labels[n]];
  }
  Tensor y(Shape4{1, 1, 1, 1});
  y.data[0] = static_cast<float>(total / N);
  check_finite(y, "cross_entropy_loss");

  Tape* t = joint_tape({&logits});
  if (t) {
    const int ln = logits.node;
    Tensor lv = logits.detached();
    attach(y, t, [ln, lv, labels, N, K](const Tensor& g, Tape& tp) {
      Tensor gl(lv.shape);
      const float gs = g.data[0] / N;
      for (int n = 0; n < N; ++n) {
        const size_t base = static_cast<size_t>(n) * K;
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(lv.data[base + k]));
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(lv.data[base + k] - mx);
        for (int k = 0; k < K; ++k) {
          const double p = std::exp(lv.data[base + k] - mx) / sum;
          gl.data[base + k] =
              static_cast<float>(gs * (p - (k == labels[n] ? 1.0 : 0.0)));
        }
      }
      tp.accumulate(ln, std::move(gl));
    });
  }
  return y;
}

}  // namespace hasa
