#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "layerfit/mask_ops.hpp"
#include "layerfit/tensor.hpp"

namespace layerfit {

// ---------------------------------------------------------------------------
// Layered appearance coherence difference
// ---------------------------------------------------------------------------

// Per-layer region triple: the layer mask A_i, its connecting band B_i with
// the next layer, and the interior C_i = A_i minus B_i. Layers are ordered
// inner to outer; the last layer has an empty band.
struct LayerRegions {
  std::vector<Tensor> region;    // A_i
  std::vector<Tensor> band;      // B_i, subset of A_i
  std::vector<Tensor> interior;  // C_i

  int n_layers() const { return static_cast<int>(region.size()); }
};

// B_i = A_i intersected with the Chebyshev dilation of A_{i+1}; the band is
// the part of layer i within `band_radius` of the next layer.
inline LayerRegions derive_regions(const std::vector<Tensor>& layer_masks,
                                   int band_radius = 3) {
  if (layer_masks.empty()) throw InputError("derive_regions: no layers");
  if (band_radius < 1) throw UsageError("derive_regions: band_radius must be >= 1");
  const Shape dims = layer_masks[0].shape();
  for (const Tensor& m : layer_masks)
    if (m.shape() != dims)
      throw InputError("derive_regions: mask dims differ: " + shape_str(m.shape()) +
                       " vs " + shape_str(dims));
  LayerRegions out;
  const int n = static_cast<int>(layer_masks.size());
  for (int i = 0; i < n; ++i) {
    Tensor a = layer_masks[i].detached();
    Tensor b = (i + 1 < n)
                   ? mask_and(a, dilate_chebyshev(layer_masks[i + 1], band_radius))
                   : Tensor::zeros(dims);
    out.region.push_back(a);
    out.interior.push_back(mask_diff(a, b));
    out.band.push_back(std::move(b));
  }
  return out;
}

enum class LacdNorm { kRawSum, kPerPixel };

struct LacdReport {
  std::vector<double> per_layer;  // lacd_i
  double value = 0.0;             // mean over layers
  double lambda1 = 3.0;
  LacdNorm norm = LacdNorm::kPerPixel;
};

namespace detail {

inline double pixel_l2(const Tensor& a, const Tensor& b, int64_t hw, int64_t p) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    double d = a.at(c * hw + p) - b.at(c * hw + p);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

// lacd_i: lambda1-weighted band sum of per-pixel color L2 differences plus
// the interior sum. Per-pixel mode divides each sum by its region size
// (empty regions contribute 0).
inline double lacd_layer(const Tensor& x_gt, const Tensor& x_gen,
                         const LayerRegions& regions, int layer, double lambda1,
                         LacdNorm norm = LacdNorm::kPerPixel) {
  if (layer < 0 || layer >= regions.n_layers())
    throw UsageError("lacd_layer: layer " + std::to_string(layer) +
                     " out of range 0.." + std::to_string(regions.n_layers() - 1));
  check_same_shape(x_gt, x_gen, "lacd_layer");
  const Tensor& band = regions.band[layer];
  const Tensor& interior = regions.interior[layer];
  if (x_gt.shape().size() != 3 || x_gt.shape()[0] != 3 ||
      x_gt.shape()[1] != band.shape()[0] || x_gt.shape()[2] != band.shape()[1])
    throw InputError("lacd_layer: image " + shape_str(x_gt.shape()) +
                     " inconsistent with masks " + shape_str(band.shape()));
  const int64_t hw = static_cast<int64_t>(band.shape()[0]) * band.shape()[1];
  double band_sum = 0.0, interior_sum = 0.0;
  int64_t band_n = 0, interior_n = 0;
  for (int64_t p = 0; p < hw; ++p) {
    if (band.at(p) > 0.0) {
      band_sum += detail::pixel_l2(x_gt, x_gen, hw, p);
      ++band_n;
    } else if (interior.at(p) > 0.0) {
      interior_sum += detail::pixel_l2(x_gt, x_gen, hw, p);
      ++interior_n;
    }
  }
  if (norm == LacdNorm::kPerPixel) {
    double b = band_n > 0 ? band_sum / static_cast<double>(band_n) : 0.0;
    double c = interior_n > 0 ? interior_sum / static_cast<double>(interior_n) : 0.0;
    return lambda1 * b + c;
  }
  return lambda1 * band_sum + interior_sum;
}

inline LacdReport lacd(const Tensor& x_gt, const Tensor& x_gen,
                       const LayerRegions& regions, double lambda1 = 3.0,
                       LacdNorm norm = LacdNorm::kPerPixel) {
  if (regions.n_layers() == 0) throw InputError("lacd: zero layers");
  LacdReport report;
  report.lambda1 = lambda1;
  report.norm = norm;
  double total = 0.0;
  for (int i = 0; i < regions.n_layers(); ++i) {
    double v = lacd_layer(x_gt, x_gen, regions, i, lambda1, norm);
    report.per_layer.push_back(v);
    total += v;
  }
  report.value = total / regions.n_layers();
  return report;
}

// ---------------------------------------------------------------------------
// SSIM (Wang et al. constants: 11x11 Gaussian window, sigma 1.5,
// C1=(0.01)^2, C2=(0.03)^2 on unit range), per channel, valid windows.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> gaussian_kernel11() {
  std::vector<double> k(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5.0;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode Gaussian filter of an HxW plane; output (H-10)x(W-10).
inline std::vector<double> gauss_filter_valid(const double* img, int H, int W) {
  static const std::vector<double> k = gaussian_kernel11();
  const int Wo = W - 10, Ho = H - 10;
  std::vector<double> tmp(static_cast<size_t>(H) * Wo);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < 11; ++i) s += k[i] * img[static_cast<size_t>(y) * W + x + i];
      tmp[static_cast<size_t>(y) * Wo + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(Ho) * Wo);
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < 11; ++i) s += k[i] * tmp[static_cast<size_t>(y + i) * Wo + x];
      out[static_cast<size_t>(y) * Wo + x] = s;
    }
  return out;
}

}  // namespace detail

inline double ssim(const Tensor& x, const Tensor& y) {
  check_same_shape(x, y, "ssim");
  if (x.shape().size() != 3 || x.shape()[0] != 3)
    throw InputError("ssim: expected 3xHxW images, got " + shape_str(x.shape()));
  const int H = x.shape()[1], W = x.shape()[2];
  if (H < 11 || W < 11)
    throw InputError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                     " smaller than the 11x11 window");
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  const int64_t hw = static_cast<int64_t>(H) * W;

  double total = 0.0;
  std::vector<double> xx(hw), yy(hw), xy(hw);
  for (int c = 0; c < 3; ++c) {
    const double* xc = x.data().data() + c * hw;
    const double* yc = y.data().data() + c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      xx[p] = xc[p] * xc[p];
      yy[p] = yc[p] * yc[p];
      xy[p] = xc[p] * yc[p];
    }
    auto mu_x = detail::gauss_filter_valid(xc, H, W);
    auto mu_y = detail::gauss_filter_valid(yc, H, W);
    auto m_xx = detail::gauss_filter_valid(xx.data(), H, W);
    auto m_yy = detail::gauss_filter_valid(yy.data(), H, W);
    auto m_xy = detail::gauss_filter_valid(xy.data(), H, W);
    double s = 0.0;
    for (size_t p = 0; p < mu_x.size(); ++p) {
      double mx = mu_x[p], my = mu_y[p];
      double vx = m_xx[p] - mx * mx;
      double vy = m_yy[p] - my * my;
      double cxy = m_xy[p] - mx * my;
      s += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) /
           ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
    total += s / static_cast<double>(mu_x.size());
  }
  return total / 3.0;
}

}  // namespace layerfit
