#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hasa/layers.hpp"

namespace hasa {

// Candidate operations searched on every cell edge. Order here is the
// canonical catalog order used for tie-breaking and serialization.
enum class OpKind : int {
  none = 0,
  skip_connect,
  max_pool_3x3,
  sep_conv_3x3,
  sep_conv_5x5,
  dil_conv_3x3,
  dil_conv_5x5,
  mixconv_35,
  se_block,
};

inline constexpr std::array<OpKind, 9> kFullCatalog = {
    OpKind::none,         OpKind::skip_connect, OpKind::max_pool_3x3,
    OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3,
    OpKind::dil_conv_5x5, OpKind::mixconv_35,   OpKind::se_block,
};

inline constexpr int kSeReduction = 4;

std::string_view op_kind_name(OpKind k);
std::optional<OpKind> op_kind_from_name(std::string_view name);

// A parameterized candidate operation. All kinds share the shape contract
// (in_ch, H, W) -> (out_ch, H/stride, W/stride), so any two are
// interchangeable on an edge.
class OpInstance {
 public:
  OpInstance(OpKind k, int in_ch, int out_ch, int stride)
      : kind(k), in_ch(in_ch), out_ch(out_ch), stride(stride) {}
  virtual ~OpInstance() = default;

  virtual Tensor forward(const Tensor& x, Tape* tape) = 0;
  virtual void collect(std::vector<Parameter*>& out) { (void)out; }

  int64_t param_count() {
    std::vector<Parameter*> ps;
    collect(ps);
    return count_params(ps);
  }

  // Copies parameter values positionally; both instances must share kind
  // and channel configuration.
  void copy_params_from(OpInstance& other);

  Shape4 out_shape(const Shape4& in) const {
    return Shape4{in.n, out_ch, (in.h - 1) / stride + 1, (in.w - 1) / stride + 1};
  }

  const OpKind kind;
  const int in_ch, out_ch, stride;
};

std::unique_ptr<OpInstance> instantiate_op(OpKind kind, int in_ch, int out_ch, int stride,
                                           const std::string& name, Rng& rng);

}  // namespace hasa
