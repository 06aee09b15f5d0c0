#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hasa/ops.hpp"
#include "hasa/rng.hpp"
#include "hasa/tape.hpp"

namespace hasa {

// Small trainable building blocks. Each layer owns its parameters and
// registers them through collect(); names are hierarchical ("block.conv.weight")
// so checkpoints and rewrite verification can address them.

struct Conv2dLayer {
  Conv2dLayer(const std::string& name, int in_ch, int out_ch, int kernel, ConvOpts opts,
              bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  std::optional<Parameter> bias;
  ConvOpts opts;
};

struct NormLayer {
  NormLayer(const std::string& name, int channels);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Parameter gamma, beta;
  float eps = 1e-5f;
};

struct DenseLayer {
  DenseLayer(const std::string& name, int in_features, int out_features, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Parameter weight, bias;
};

// relu -> 1x1 conv -> norm; the standard cell input adapter.
struct ReluConvNorm {
  ReluConvNorm(const std::string& name, int in_ch, int out_ch, Rng& rng, int kernel = 1,
               int stride = 1);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Conv2dLayer conv;
  NormLayer norm;
};

// relu -> two parallel stride-2 1x1 convs (second reads pixels offset by one)
// -> channel concat -> norm. Halves spatial size, requires even H and W.
struct FactorizedReduce {
  FactorizedReduce(const std::string& name, int in_ch, int out_ch, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Conv2dLayer conv1, conv2;
  NormLayer norm;
};

// (depthwise kxk + pointwise 1x1 + norm + relu) x 2; stride applies to the
// first repetition only.
struct SepConvBlock {
  SepConvBlock(const std::string& name, int in_ch, int out_ch, int kernel, int stride, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Conv2dLayer dw1, pw1, dw2, pw2;
  NormLayer norm1, norm2;
};

// depthwise kxk with dilation 2 + pointwise 1x1 + norm + relu.
struct DilConvBlock {
  DilConvBlock(const std::string& name, int in_ch, int out_ch, int kernel, int stride, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  Conv2dLayer dw, pw;
  NormLayer norm;
};

int64_t count_params(const std::vector<Parameter*>& params);

}  // namespace hasa
