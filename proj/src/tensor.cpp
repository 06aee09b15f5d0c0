#include "hasa/tensor.hpp"

#include <cmath>

namespace hasa {

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

void check_finite(const Tensor& t, const char* where) {
  for (float v : t.data) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

}  // namespace hasa
