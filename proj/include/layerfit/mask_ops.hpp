#pragma once

#include <vector>

#include "layerfit/tensor.hpp"

namespace layerfit {

// Binary masks are HxW tensors with values {0,1}.

// Morphological dilation with a Chebyshev ball (square structuring element
// of half-width `radius`). Separable: horizontal max filter then vertical.
inline Tensor dilate_chebyshev(const Tensor& mask, int radius) {
  if (mask.shape().size() != 2)
    throw UsageError("dilate_chebyshev: expected HxW mask, got " +
                     shape_str(mask.shape()));
  if (radius < 0) throw UsageError("dilate_chebyshev: negative radius");
  const int H = mask.shape()[0], W = mask.shape()[1];
  if (radius == 0) return mask.detached();

  std::vector<double> tmp(static_cast<size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double m = 0.0;
      for (int dx = -radius; dx <= radius; ++dx) {
        int xx = x + dx;
        if (xx >= 0 && xx < W) m = std::max(m, mask.at(static_cast<int64_t>(y) * W + xx));
      }
      tmp[static_cast<size_t>(y) * W + x] = m;
    }
  Tensor out = Tensor::zeros({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double m = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        int yy = y + dy;
        if (yy >= 0 && yy < H) m = std::max(m, tmp[static_cast<size_t>(yy) * W + x]);
      }
      out.at(static_cast<int64_t>(y) * W + x) = m;
    }
  return out;
}

inline Tensor mask_and(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mask_and");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.at(i) = (a.at(i) > 0.0 && b.at(i) > 0.0) ? 1.0 : 0.0;
  return out;
}

inline Tensor mask_or(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mask_or");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.at(i) = (a.at(i) > 0.0 || b.at(i) > 0.0) ? 1.0 : 0.0;
  return out;
}

// a AND NOT b.
inline Tensor mask_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mask_diff");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.at(i) = (a.at(i) > 0.0 && b.at(i) <= 0.0) ? 1.0 : 0.0;
  return out;
}

inline int64_t mask_count(const Tensor& m) {
  int64_t n = 0;
  for (int64_t i = 0; i < m.numel(); ++i)
    if (m.at(i) > 0.0) ++n;
  return n;
}

}  // namespace layerfit
