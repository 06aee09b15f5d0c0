#include "hasa/op_catalog.hpp"

namespace hasa {

std::string_view op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::none: return "none";
    case OpKind::skip_connect: return "skip_connect";
    case OpKind::max_pool_3x3: return "max_pool_3x3";
    case OpKind::sep_conv_3x3: return "sep_conv_3x3";
    case OpKind::sep_conv_5x5: return "sep_conv_5x5";
    case OpKind::dil_conv_3x3: return "dil_conv_3x3";
    case OpKind::dil_conv_5x5: return "dil_conv_5x5";
    case OpKind::mixconv_35: return "mixconv_35";
    case OpKind::se_block: return "se_block";
  }
  throw ConfigError("unknown OpKind value");
}

std::optional<OpKind> op_kind_from_name(std::string_view name) {
  for (OpKind k : kFullCatalog)
    if (op_kind_name(k) == name) return k;
  return std::nullopt;
}

void OpInstance::copy_params_from(OpInstance& other) {
  if (kind != other.kind || in_ch != other.in_ch || out_ch != other.out_ch ||
      stride != other.stride)
    throw UsageError("copy_params_from: incompatible op instances");
  std::vector<Parameter*> dst, src;
  collect(dst);
  other.collect(src);
  if (dst.size() != src.size()) throw UsageError("copy_params_from: parameter list mismatch");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (!(dst[i]->value.shape == src[i]->value.shape))
      throw UsageError("copy_params_from: shape mismatch at " + dst[i]->name);
    dst[i]->value.data = src[i]->value.data;
  }
}

namespace {

struct NoneOp final : OpInstance {
  NoneOp(int in_ch, int out_ch, int stride) : OpInstance(OpKind::none, in_ch, out_ch, stride) {}
  Tensor forward(const Tensor& x, Tape*) override {
    if (x.shape.c != in_ch) throw DimensionError("none: channel mismatch");
    return Tensor(out_shape(x.shape), 0.0f);  // constant, no gradient path
  }
};

struct SkipOp final : OpInstance {
  SkipOp(int in_ch, int out_ch, int stride, const std::string& name, Rng& rng)
      : OpInstance(OpKind::skip_connect, in_ch, out_ch, stride) {
    if (stride == 1) {
      if (in_ch != out_ch)
        throw ConfigError("skip_connect with stride 1 requires matching channels");
    } else {
      reduce.emplace(name + ".fr", in_ch, out_ch, rng);
    }
  }
  Tensor forward(const Tensor& x, Tape* tape) override {
    if (x.shape.c != in_ch) throw DimensionError("skip_connect: channel mismatch");
    if (!reduce) return x;
    return reduce->forward(x, tape);
  }
  void collect(std::vector<Parameter*>& out) override {
    if (reduce) reduce->collect(out);
  }
  std::optional<FactorizedReduce> reduce;
};

struct MaxPoolOp final : OpInstance {
  MaxPoolOp(int in_ch, int out_ch, int stride)
      : OpInstance(OpKind::max_pool_3x3, in_ch, out_ch, stride) {
    if (in_ch != out_ch) throw ConfigError("max_pool_3x3 cannot change channel count");
  }
  Tensor forward(const Tensor& x, Tape*) override {
    if (x.shape.c != in_ch) throw DimensionError("max_pool_3x3: channel mismatch");
    return pool2d(x, PoolKind::max, 3, stride, 1);
  }
};

struct SepConvOp final : OpInstance {
  SepConvOp(OpKind k, int kernel, int in_ch, int out_ch, int stride, const std::string& name,
            Rng& rng)
      : OpInstance(k, in_ch, out_ch, stride), block(name, in_ch, out_ch, kernel, stride, rng) {}
  Tensor forward(const Tensor& x, Tape* tape) override {
    if (x.shape.c != in_ch) throw DimensionError("sep_conv: channel mismatch");
    return block.forward(x, tape);
  }
  void collect(std::vector<Parameter*>& out) override { block.collect(out); }
  SepConvBlock block;
};

struct DilConvOp final : OpInstance {
  DilConvOp(OpKind k, int kernel, int in_ch, int out_ch, int stride, const std::string& name,
            Rng& rng)
      : OpInstance(k, in_ch, out_ch, stride), block(name, in_ch, out_ch, kernel, stride, rng) {}
  Tensor forward(const Tensor& x, Tape* tape) override {
    if (x.shape.c != in_ch) throw DimensionError("dil_conv: channel mismatch");
    return block.forward(x, tape);
  }
  void collect(std::vector<Parameter*>& out) override { block.collect(out); }
  DilConvBlock block;
};

// Depthwise 3x3 on the low channel half and 5x5 on the high half (floor/ceil
// split for odd counts), concatenated and mixed by a pointwise conv.
struct MixConvOp final : OpInstance {
  MixConvOp(int in_ch, int out_ch, int stride, const std::string& name, Rng& rng)
      : OpInstance(OpKind::mixconv_35, in_ch, out_ch, stride),
        half_lo(in_ch / 2),
        half_hi(in_ch - in_ch / 2),
        dw3(name + ".dw3", half_lo, half_lo, 3, ConvOpts{stride, 1, 1, half_lo}, false, rng),
        dw5(name + ".dw5", half_hi, half_hi, 5, ConvOpts{stride, 2, 1, half_hi}, false, rng),
        pw(name + ".pw", in_ch, out_ch, 1, ConvOpts{1, 0, 1, 1}, false, rng),
        norm(name + ".norm", out_ch) {
    if (in_ch < 2) throw ConfigError("mixconv_35 needs at least 2 input channels");
  }
  Tensor forward(const Tensor& x, Tape* tape) override {
    if (x.shape.c != in_ch) throw DimensionError("mixconv_35: channel mismatch");
    Tensor lo = dw3.forward(slice_channels(x, 0, half_lo), tape);
    Tensor hi = dw5.forward(slice_channels(x, half_lo, in_ch), tape);
    return relu(norm.forward(pw.forward(concat_channels({lo, hi}), tape), tape));
  }
  void collect(std::vector<Parameter*>& out) override {
    dw3.collect(out);
    dw5.collect(out);
    pw.collect(out);
    norm.collect(out);
  }
  int half_lo, half_hi;
  Conv2dLayer dw3, dw5, pw;
  NormLayer norm;
};

// Squeeze-and-excitation gate applied to the (stride-adapted) edge input:
// global pool -> reduce -> relu -> expand -> sigmoid -> channel rescale.
struct SeBlockOp final : OpInstance {
  SeBlockOp(int in_ch, int out_ch, int stride, const std::string& name, Rng& rng)
      : OpInstance(OpKind::se_block, in_ch, out_ch, stride),
        squeeze(name + ".squeeze", out_ch, std::max(1, out_ch / kSeReduction), rng),
        expand(name + ".expand", std::max(1, out_ch / kSeReduction), out_ch, rng) {
    if (stride != 1 || in_ch != out_ch) {
      adapt_conv.emplace(name + ".adapt", in_ch, out_ch, 1, ConvOpts{stride, 0, 1, 1}, false,
                         rng);
      adapt_norm.emplace(name + ".adapt_norm", out_ch);
    }
  }
  Tensor forward(const Tensor& x, Tape* tape) override {
    if (x.shape.c != in_ch) throw DimensionError("se_block: channel mismatch");
    Tensor h = x;
    if (adapt_conv) h = adapt_norm->forward(adapt_conv->forward(x, tape), tape);
    Tensor pooled = pool2d(h, PoolKind::global_avg, 0, 0, 0);
    Tensor gate = sigmoid(expand.forward(relu(squeeze.forward(pooled, tape)), tape));
    return scale_channels(h, gate);
  }
  void collect(std::vector<Parameter*>& out) override {
    if (adapt_conv) {
      adapt_conv->collect(out);
      adapt_norm->collect(out);
    }
    squeeze.collect(out);
    expand.collect(out);
  }
  std::optional<Conv2dLayer> adapt_conv;
  std::optional<NormLayer> adapt_norm;
  DenseLayer squeeze, expand;
};

}  // namespace

std::unique_ptr<OpInstance> instantiate_op(OpKind kind, int in_ch, int out_ch, int stride,
                                           const std::string& name, Rng& rng) {
  if (in_ch <= 0 || out_ch <= 0) throw ConfigError("instantiate_op: channels must be positive");
  if (stride != 1 && stride != 2) throw ConfigError("instantiate_op: stride must be 1 or 2");
  switch (kind) {
    case OpKind::none:
      return std::make_unique<NoneOp>(in_ch, out_ch, stride);
    case OpKind::skip_connect:
      return std::make_unique<SkipOp>(in_ch, out_ch, stride, name, rng);
    case OpKind::max_pool_3x3:
      return std::make_unique<MaxPoolOp>(in_ch, out_ch, stride);
    case OpKind::sep_conv_3x3:
      return std::make_unique<SepConvOp>(OpKind::sep_conv_3x3, 3, in_ch, out_ch, stride, name,
                                         rng);
    case OpKind::sep_conv_5x5:
      return std::make_unique<SepConvOp>(OpKind::sep_conv_5x5, 5, in_ch, out_ch, stride, name,
                                         rng);
    case OpKind::dil_conv_3x3:
      return std::make_unique<DilConvOp>(OpKind::dil_conv_3x3, 3, in_ch, out_ch, stride, name,
                                         rng);
    case OpKind::dil_conv_5x5:
      return std::make_unique<DilConvOp>(OpKind::dil_conv_5x5, 5, in_ch, out_ch, stride, name,
                                         rng);
    case OpKind::mixconv_35:
      return std::make_unique<MixConvOp>(in_ch, out_ch, stride, name, rng);
    case OpKind::se_block:
      return std::make_unique<SeBlockOp>(in_ch, out_ch, stride, name, rng);
  }
  throw ConfigError("instantiate_op: unknown operation kind");
}

}  // namespace hasa
