#pragma once

#include <algorithm>

#include "ufc/numerics/array.hpp"

namespace ufc {

struct Rect {
  std::size_t x0, y0, w, h;
};

/// Copies a rectangle out of an [H x W x C] image. Not recorded on any tape.
template <typename T>
Array<T> crop(const Array<T>& image, const Rect& r) {
  if (image.rank() != 3 || r.x0 + r.w > image.dim(1) || r.y0 + r.h > image.dim(0)) {
    throw DimensionError("crop: rectangle outside " + to_string(image.shape()));
  }
  const auto w = image.dim(1), c = image.dim(2);
  std::vector<T> out(r.h * r.w * c);
  for (std::size_t y = 0; y < r.h; ++y) {
    const T* src = image.ptr() + ((r.y0 + y) * w + r.x0) * c;
    std::copy(src, src + r.w * c, out.begin() + static_cast<std::ptrdiff_t>(y * r.w * c));
  }
  return Array<T>({r.h, r.w, c}, std::move(out));
}

}  // namespace ufc
