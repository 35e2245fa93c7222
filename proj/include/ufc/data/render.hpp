#pragma once

#include "ufc/data/warp.hpp"
#include "ufc/image.hpp"

namespace ufc {

template <typename T>
struct RenderedPair {
  Array<T> source, target;
  FlowField<T> flow;  // target -> source, backward convention
};

namespace data {

/// Renders a pair from a square canvas: the source is the centered `extent`
/// crop, the target samples the canvas bilinearly at w^-1(j). Because the
/// canvas is larger than the crop, the target has no empty border.
template <typename T>
RenderedPair<T> render_pair(const Array<T>& canvas, const WarpSpec& w) {
  const auto e = w.extent;
  if (canvas.rank() != 3 || canvas.dim(0) != canvas.dim(1) || canvas.dim(0) < e) {
    throw DimensionError("render_pair: canvas " + to_string(canvas.shape()) + " cannot hold a " + std::to_string(e) +
                         " crop");
  }
  const auto off = (canvas.dim(0) - e) / 2;
  std::vector<T> coords(e * e * 2);
  for (std::size_t y = 0; y < e; ++y)
    for (std::size_t x = 0; x < e; ++x) {
      const auto p = w.apply_inverse({double(x), double(y)});
      coords[2 * (y * e + x)] = static_cast<T>(p[0] + double(off));
      coords[2 * (y * e + x) + 1] = static_cast<T>(p[1] + double(off));
    }
  const auto sampled = bilinear_sample(canvas, Array<T>({e * e, 2}, std::move(coords)));
  return {crop(canvas, Rect{off, off, e, e}), reshape(sampled.values, {e, e, canvas.dim(2)}),
          warp_to_flow<T>(w, e, e)};
}

}  // namespace data
}  // namespace ufc
