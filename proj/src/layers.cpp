#include "hasa/layers.hpp"

#include <cmath>

namespace hasa {

namespace {

Tensor he_init(Shape4 s, int fan_in, Rng& rng) {
  Tensor t(s);
  const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
  for (auto& v : t.data) v = rng.normal(0.0f, sd);
  return t;
}

}  // namespace

int64_t count_params(const std::vector<Parameter*>& params) {
  int64_t total = 0;
  for (const Parameter* p : params) total += p->value.shape.numel();
  return total;
}

// ---- Conv2dLayer ----

Conv2dLayer::Conv2dLayer(const std::string& name, int in_ch, int out_ch, int kernel,
                         ConvOpts o, bool with_bias, Rng& rng)
    : weight(name + ".weight",
             he_init(Shape4{out_ch, in_ch / o.groups, kernel, kernel},
                     (in_ch / o.groups) * kernel * kernel, rng)),
      opts(o) {
  if (with_bias) bias = Parameter(name + ".bias", Tensor(Shape4{1, out_ch, 1, 1}, 0.0f));
}

Tensor Conv2dLayer::forward(const Tensor& x, Tape* tape) {
  Tensor w = use_param(weight, tape);
  if (bias) {
    Tensor b = use_param(*bias, tape);
    return conv2d(x, w, &b, opts);
  }
  return conv2d(x, w, nullptr, opts);
}

void Conv2dLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

// ---- NormLayer ----

NormLayer::NormLayer(const std::string& name, int channels)
    : gamma(name + ".gamma", Tensor(Shape4{1, channels, 1, 1}, 1.0f)),
      beta(name + ".beta", Tensor(Shape4{1, channels, 1, 1}, 0.0f)) {}

Tensor NormLayer::forward(const Tensor& x, Tape* tape) {
  return channel_norm(x, use_param(gamma, tape), use_param(beta, tape), eps);
}

void NormLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---- DenseLayer ----

DenseLayer::DenseLayer(const std::string& name, int in_features, int out_features, Rng& rng)
    : weight(name + ".weight", he_init(Shape4{out_features, in_features, 1, 1}, in_features, rng)),
      bias(name + ".bias", Tensor(Shape4{1, out_features, 1, 1}, 0.0f)) {}

Tensor DenseLayer::forward(const Tensor& x, Tape* tape) {
  Tensor w = use_param(weight, tape);
  Tensor b = use_param(bias, tape);
  return dense(x, w, &b);
}

void DenseLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---- ReluConvNorm ----

ReluConvNorm::ReluConvNorm(const std::string& name, int in_ch, int out_ch, Rng& rng, int kernel,
                           int stride)
    : conv(name + ".conv", in_ch, out_ch, kernel, ConvOpts{stride, (kernel - 1) / 2, 1, 1},
           false, rng),
      norm(name + ".norm", out_ch) {}

Tensor ReluConvNorm::forward(const Tensor& x, Tape* tape) {
  return norm.forward(conv.forward(relu(x), tape), tape);
}

void ReluConvNorm::collect(std::vector<Parameter*>& out) {
  conv.collect(out);
  norm.collect(out);
}

// ---- FactorizedReduce ----

FactorizedReduce::FactorizedReduce(const std::string& name, int in_ch, int out_ch, Rng& rng)
    : conv1(name + ".conv1", in_ch, out_ch / 2, 1, ConvOpts{2, 0, 1, 1}, false, rng),
      conv2(name + ".conv2", in_ch, out_ch - out_ch / 2, 1, ConvOpts{2, 0, 1, 1}, false, rng),
      norm(name + ".norm", out_ch) {
  if (out_ch < 2) throw ConfigError("FactorizedReduce needs at least 2 output channels");
}

Tensor FactorizedReduce::forward(const Tensor& x, Tape* tape) {
  if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0)
    throw DimensionError("FactorizedReduce requires even spatial size, got " +
                         to_string(x.shape));
  Tensor a = relu(x);
  Tensor y1 = conv1.forward(a, tape);
  // with even input both branches land on the same grid: the shifted one
  // reads the odd-indexed pixels
  Tensor y2 = conv2.forward(crop_shift(a, 1, 1), tape);
  if (y1.shape.h != y2.shape.h || y1.shape.w != y2.shape.w)
    throw DimensionError("FactorizedReduce branch mismatch " + to_string(y1.shape) + " vs " +
                         to_string(y2.shape));
  return norm.forward(concat_channels({y1, y2}), tape);
}

void FactorizedReduce::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  conv2.collect(out);
  norm.collect(out);
}

// ---- SepConvBlock ----

SepConvBlock::SepConvBlock(const std::string& name, int in_ch, int out_ch, int kernel,
                           int stride, Rng& rng)
    : dw1(name + ".dw1", in_ch, in_ch, kernel, ConvOpts{stride, (kernel - 1) / 2, 1, in_ch},
          false, rng),
      pw1(name + ".pw1", in_ch, in_ch, 1, ConvOpts{1, 0, 1, 1}, false, rng),
      dw2(name + ".dw2", in_ch, in_ch, kernel, ConvOpts{1, (kernel - 1) / 2, 1, in_ch}, false,
          rng),
      pw2(name + ".pw2", in_ch, out_ch, 1, ConvOpts{1, 0, 1, 1}, false, rng),
      norm1(name + ".norm1", in_ch),
      norm2(name + ".norm2", out_ch) {}

Tensor SepConvBlock::forward(const Tensor& x, Tape* tape) {
  Tensor y = relu(norm1.forward(pw1.forward(dw1.forward(x, tape), tape), tape));
  return relu(norm2.forward(pw2.forward(dw2.forward(y, tape), tape), tape));
}

void SepConvBlock::collect(std::vector<Parameter*>& out) {
  dw1.collect(out);
  pw1.collect(out);
  norm1.collect(out);
  dw2.collect(out);
  pw2.collect(out);
  norm2.collect(out);
}

// ---- DilConvBlock ----

DilConvBlock::DilConvBlock(const std::string& name, int in_ch, int out_ch, int kernel,
                           int stride, Rng& rng)
    : dw(name + ".dw", in_ch, in_ch, kernel, ConvOpts{stride, kernel - 1, 2, in_ch}, false, rng),
      pw(name + ".pw", in_ch, out_ch, 1, ConvOpts{1, 0, 1, 1}, false, rng),
      norm(name + ".norm", out_ch) {}

Tensor DilConvBlock::forward(const Tensor& x, Tape* tape) {
  return relu(norm.forward(pw.forward(dw.forward(x, tape), tape), tape));
}

void DilConvBlock::collect(std::vector<Parameter*>& out) {
  dw.collect(out);
  pw.collect(out);
  norm.collect(out);
}

}  // namespace hasa
