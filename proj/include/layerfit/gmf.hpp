#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "layerfit/codec.hpp"
#include "layerfit/nn.hpp"

namespace layerfit {

// DDPM noise schedule. The canonical linear 1e-4..0.02 range is defined on a
// 1000-step grid; shorter grids compress it in time (betas scale by 1000/T)
// so the chain still ends near pure noise.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;      // 1-indexed via at(t), t in [1, T]
  std::vector<double> alphas;
  std::vector<double> alpha_bar;  // cumulative products

  static NoiseSchedule linear(int T = 200, double beta_start_ref = 1e-4,
                              double beta_end_ref = 0.02) {
    if (T < 2) throw ConfigError("schedule: T must be >= 2");
    double scale = 1000.0 / T;
    std::vector<double> betas(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
      betas[t] = scale * (beta_start_ref +
                          (beta_end_ref - beta_start_ref) * t / (T - 1));
    NoiseSchedule s = from_betas(std::move(betas));
    if (s.alpha_bar_at(T) >= 0.05)
      throw ConfigError("schedule: final alpha_bar " +
                        std::to_string(s.alpha_bar_at(T)) +
                        " >= 0.05; chain does not end near pure noise");
    return s;
  }

  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    if (s.T < 1) throw ConfigError("schedule: empty beta array");
    for (int t = 0; t < s.T; ++t) {
      if (!(betas[t] > 0.0 && betas[t] < 1.0))
        throw ConfigError("schedule: beta out of (0,1) at step " + std::to_string(t + 1));
      if (t > 0 && betas[t] <= betas[t - 1])
        throw ConfigError("schedule: betas must be strictly increasing");
    }
    s.betas = std::move(betas);
    s.alphas.resize(s.betas.size());
    s.alpha_bar.resize(s.betas.size());
    double prod = 1.0;
    for (size_t i = 0; i < s.betas.size(); ++i) {
      s.alphas[i] = 1.0 - s.betas[i];
      prod *= s.alphas[i];
      s.alpha_bar[i] = prod;
    }
    return s;
  }

  void check_t(int t) const {
    if (t < 1 || t > T)
      throw UsageError("schedule: t=" + std::to_string(t) + " outside [1, " +
                       std::to_string(T) + "]");
  }

  double beta_at(int t) const { check_t(t); return betas[t - 1]; }
  double alpha_at(int t) const { check_t(t); return alphas[t - 1]; }
  double alpha_bar_at(int t) const { check_t(t); return alpha_bar[t - 1]; }
  // alpha_bar at t-1 with the t=0 convention of 1.
  double alpha_bar_prev(int t) const { check_t(t); return t == 1 ? 1.0 : alpha_bar[t - 2]; }
};

// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps, eps ~ N(0,1) elementwise.
// Returns (y_t, eps). y0 may be on tape; the draw itself is data.
inline std::pair<Tensor, Tensor> forward_noise(const Tensor& y0, int t,
                                               const NoiseSchedule& schedule,
                                               Rng& rng) {
  schedule.check_t(t);
  Tensor eps = Tensor::zeros(y0.shape());
  for (double& v : eps.data()) v = rng.normal();
  double ab = schedule.alpha_bar_at(t);
  Tensor y_t = add(scale(y0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
  return {y_t, eps};
}

// ---------------------------------------------------------------------------
// Spatial assembly: width-wise concatenation in fixed slot order
// (person, outer, inner), with the mask only in the person slot.
// ---------------------------------------------------------------------------

struct Assembly {
  Tensor z_in;  // [4, h, 3w]
  Tensor m_in;  // [1, h, 3w]
};

inline constexpr int kSlotPerson = 0;
inline constexpr int kSlotOuter = 1;
inline constexpr int kSlotInner = 2;

inline Assembly assemble(const Tensor& z_a, const Tensor& z_o, const Tensor& z_iv,
                         const Tensor& m_a) {
  if (z_a.shape() != z_o.shape() || z_a.shape() != z_iv.shape())
    throw InputError("assemble: latent dims differ: " + shape_str(z_a.shape()) +
                     ", " + shape_str(z_o.shape()) + ", " + shape_str(z_iv.shape()));
  if (z_a.shape().size() != 3 || z_a.shape()[0] != 4)
    throw InputError("assemble: expected 4xhxw latents, got " + shape_str(z_a.shape()));
  if (m_a.shape().size() != 3 || m_a.shape()[0] != 1 ||
      m_a.shape()[1] != z_a.shape()[1] || m_a.shape()[2] != z_a.shape()[2])
    throw InputError("assemble: mask " + shape_str(m_a.shape()) +
                     " does not match latents " + shape_str(z_a.shape()));
  Tensor m0 = Tensor::zeros(m_a.shape());
  return {concat_width({z_a, z_o, z_iv}), concat_width({m_a, m0, m0})};
}

// Extracts one spatial third (slot) of an assembled tensor.
inline Tensor extract_slot(const Tensor& assembled, int slot) {
  if (slot < 0 || slot > 2) throw UsageError("extract_slot: slot must be 0..2");
  int w = assembled.shape()[2] / 3;
  if (assembled.shape()[2] % 3 != 0)
    throw UsageError("extract_slot: width " + std::to_string(assembled.shape()[2]) +
                     " is not a triple");
  return slice_width(assembled, slot * w, w);
}

// With probability p both garment conditionings are replaced by zeros
// (one draw per call); the unconditional branch of classifier-free guidance.
inline std::pair<Tensor, Tensor> conditional_dropout(const Tensor& z_o,
                                                     const Tensor& z_iv, Rng& rng,
                                                     double p = 0.1) {
  if (p < 0.0 || p > 1.0)
    throw UsageError("conditional_dropout: p=" + std::to_string(p) +
                     " outside [0,1]");
  if (p > 0.0 && rng.uniform() < p)
    return {Tensor::zeros(z_o.shape()), Tensor::zeros(z_iv.shape())};
  return {z_o, z_iv};  // unchanged handles; any tape links stay intact
}

// eps_uncond + s * (eps_cond - eps_uncond). The endpoints return their
// branch exactly rather than through the arithmetic.
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond,
                          double s) {
  check_same_shape(eps_uncond, eps_cond, "cfg_combine");
  if (s == 0.0) return eps_uncond.detached();
  if (s == 1.0) return eps_cond.detached();
  return add(eps_uncond, scale(sub(eps_cond, eps_uncond), s));
}

}  // namespace layerfit
