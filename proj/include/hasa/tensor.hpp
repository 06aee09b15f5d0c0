#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hasa/error.hpp"

namespace hasa {

class Tape;

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  int64_t numel() const { return int64_t(n) * c * h * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

// Dense NCHW float32 tensor, row-major. When a tensor participates in a
// recorded computation, `node` is its handle on `tape`; tensors with
// node < 0 are constants.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 s, float fill = 0.0f)
      : shape(s), data(static_cast<size_t>(s.numel()), fill) {}

  static Tensor from(Shape4 s, std::vector<float> values) {
    if (static_cast<int64_t>(values.size()) != s.numel())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + to_string(s));
    Tensor t;
    t.shape = s;
    t.data = std::move(values);
    return t;
  }

  Shape4 shape;
  std::vector<float> data;
  Tape* tape = nullptr;
  int node = -1;

  bool requires_grad() const { return node >= 0; }
  bool is_scalar() const { return shape.numel() == 1; }

  float item() const {
    if (!is_scalar()) throw UsageError("item() on non-scalar tensor " + to_string(shape));
    return data[0];
  }

  float& at(int n_, int c_, int y, int x) {
    return data[((static_cast<size_t>(n_) * shape.c + c_) * shape.h + y) * shape.w + x];
  }
  float at(int n_, int c_, int y, int x) const {
    return data[((static_cast<size_t>(n_) * shape.c + c_) * shape.h + y) * shape.w + x];
  }

  // Value copy without tape linkage.
  Tensor detached() const {
    Tensor t;
    t.shape = shape;
    t.data = data;
    return t;
  }
};

void check_finite(const Tensor& t, const char* where);

}  // namespace hasa
