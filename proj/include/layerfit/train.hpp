#pragma once

#include <functional>
#include <vector>

#include "layerfit/optim.hpp"
#include "layerfit/pipeline.hpp"

namespace layerfit {

struct StepRecord {
  int step = 0;
  double total = 0.0;
  double gmf = 0.0;
  double occ = 0.0;
};

using ProgressFn = std::function<void(const StepRecord&)>;

// Trains the GOL module alone on the occlusion loss.
inline std::vector<StepRecord> train_gol(
    GolModel& gol, ParamStore& store, const LatentCodec& codec,
    const std::vector<Quadruplet>& samples, int steps, int batch_size,
    const AdamWConfig& opt_cfg, uint64_t seed, const ProgressFn& progress = {}) {
  if (samples.empty()) throw DataError("train_gol: empty training set");
  AdamW opt(opt_cfg);
  Rng rng(seed);
  std::vector<StepRecord> curve;
  curve.reserve(static_cast<size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    store.zero_grads();
    std::vector<Tensor> losses;
    for (int b = 0; b < batch_size; ++b) {
      const Quadruplet& q = samples[rng.uniform_index(samples.size())];
      Tensor z_i;
      {
        NoGradGuard ng;
        z_i = codec.encode(q.inner).data;
      }
      Tensor a = gol.attention_map(q.inner, q.outer);
      losses.push_back(occlusion_loss(broadcast_mul(a, z_i), q.inner_crop, codec,
                                      gol.cfg.squared_occlusion_loss));
    }
    Tensor total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    total = scale(total, 1.0 / batch_size);
    StepRecord rec{step, total.item(), 0.0, total.item()};
    backward(total);
    opt.step(store);
    curve.push_back(rec);
    if (progress) progress(rec);
  }
  return curve;
}

// Trains the full pipeline (denoising loss plus weighted occlusion loss).
inline std::vector<StepRecord> train_pipeline(
    const Pipeline& pipe, ParamStore& store,
    const std::vector<Quadruplet>& samples, int steps, int batch_size,
    const AdamWConfig& opt_cfg, uint64_t seed, const ProgressFn& progress = {}) {
  if (samples.empty()) throw DataError("train_pipeline: empty training set");
  AdamW opt(opt_cfg);
  Rng rng(seed);
  std::vector<StepRecord> curve;
  curve.reserve(static_cast<size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    store.zero_grads();
    StepRecord rec{step, 0.0, 0.0, 0.0};
    std::vector<Tensor> losses;
    for (int b = 0; b < batch_size; ++b) {
      const Quadruplet& q = samples[rng.uniform_index(samples.size())];
      LossBreakdown parts = pipe.denoise_loss(q, rng);
      rec.gmf += parts.gmf / batch_size;
      rec.occ += parts.occ / batch_size;
      losses.push_back(parts.total);
    }
    Tensor total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    total = scale(total, 1.0 / batch_size);
    rec.total = total.item();
    backward(total);
    opt.step(store);
    curve.push_back(rec);
    if (progress) progress(rec);
  }
  return curve;
}

// Attention-map quality against the synthetic visibility oracle.
struct AttentionEval {
  double mae = 0.0;            // |A - inner_visibility| on the pixel grid
  double visible_mean = 0.0;   // mean A over clearly visible latent cells
  double occluded_mean = 0.0;  // mean A over clearly occluded latent cells
};

inline AttentionEval eval_attention(const GolModel& gol,
                                    const std::vector<Quadruplet>& samples) {
  if (samples.empty()) throw DataError("eval_attention: no samples");
  NoGradGuard ng;
  double mae_sum = 0.0;
  int64_t mae_n = 0;
  double vis_sum = 0.0, occ_sum = 0.0;
  int64_t vis_n = 0, occ_n = 0;
  for (const Quadruplet& q : samples) {
    Tensor a = gol.attention_map(q.inner, q.outer);
    const int h = a.shape()[1], w = a.shape()[2];
    const int H = q.height(), W = q.width();
    // pixel-grid MAE: nearest upsample of A vs the binary visibility mask
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double av = a.at(static_cast<int64_t>(y / 8) * w + x / 8);
        mae_sum += std::abs(av - q.inner_visibility.at(static_cast<int64_t>(y) * W + x));
        ++mae_n;
      }
    // cell-level separation: visible vs occluded inner cells
    Tensor vis_frac = downsample_mask_avg8(q.inner_visibility);
    Tensor occ_frac = downsample_mask_avg8(mask_and(q.layer_inner, q.layer_outer));
    for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
      if (vis_frac.at(p) > 0.5) {
        vis_sum += a.at(p);
        ++vis_n;
      }
      if (occ_frac.at(p) > 0.5) {
        occ_sum += a.at(p);
        ++occ_n;
      }
    }
  }
  AttentionEval out;
  out.mae = mae_sum / static_cast<double>(mae_n);
  out.visible_mean = vis_n > 0 ? vis_sum / vis_n : 0.0;
  out.occluded_mean = occ_n > 0 ? occ_sum / occ_n : 0.0;
  return out;
}

}  // namespace layerfit
