#pragma once

#include <cstdint>
#include <vector>

namespace hasa {

// Integer label map for segmentation targets and predictions.
// Values: 0 background, 1 ovary tissue, 2 follicle. The ovary ORGAN region
// is mask >= 1 (follicles lie inside the organ).
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

}  // namespace hasa
