#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "layerfit/nn.hpp"

namespace layerfit {

struct UNetConfig {
  int in_channels = 9;   // 4 noisy target + 4 condition latent + 1 mask
  int out_channels = 4;  // noise prediction
  int base_channels = 16;
  int temb_dim = 32;

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || base_channels < 1)
      throw ConfigError("unet: channel counts must be positive");
    if (temb_dim < 2 || temb_dim % 2 != 0)
      throw ConfigError("unet: temb_dim must be a positive even number");
  }
};

// Sinusoidal timestep embedding, shape [1, dim].
inline Tensor timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> v(static_cast<size_t>(dim));
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    v[i] = std::sin(t * freq);
    v[half + i] = std::cos(t * freq);
  }
  return Tensor::from({1, dim}, std::move(v));
}

// Residual block with a learned per-channel timestep bias after the first
// conv; the closing conv starts at zero so the block opens as identity.
struct TimestepResBlock {
  Tensor w1, b1, temb_w, temb_b, w2, b2;

  static TimestepResBlock create(ParamStore& store, const std::string& prefix,
                                 int channels, int temb_dim, Rng& rng) {
    TimestepResBlock blk;
    blk.w1 = store.create(prefix + ".conv1.w",
                          init_conv_weight({channels, channels, 3, 3}, rng));
    blk.b1 = store.create(prefix + ".conv1.b", Tensor::zeros({channels}));
    blk.temb_w = store.create(prefix + ".temb.w",
                              init_linear_weight({channels, temb_dim}, rng));
    blk.temb_b = store.create(prefix + ".temb.b", Tensor::zeros({channels}));
    blk.w2 = store.create(prefix + ".conv2.w",
                          Tensor::zeros({channels, channels, 3, 3}));
    blk.b2 = store.create(prefix + ".conv2.b", Tensor::zeros({channels}));
    return blk;
  }

  static TimestepResBlock load(const ParamStore& store, const std::string& prefix) {
    return {store.get(prefix + ".conv1.w"), store.get(prefix + ".conv1.b"),
            store.get(prefix + ".temb.w"),  store.get(prefix + ".temb.b"),
            store.get(prefix + ".conv2.w"), store.get(prefix + ".conv2.b")};
  }

  Tensor forward(const Tensor& x, const Tensor& temb) const {
    Tensor h = conv2d(x, w1, b1, 1, 1);
    Tensor bias = linear(temb, temb_w, temb_b);  // [1, C]
    h = add_channel_bias(h, reshape(bias, {x.shape()[0]}));
    h = silu(h);
    return add(x, conv2d(h, w2, b2, 1, 1));
  }
};

// Single-head spatial self-attention over all positions; the output
// projection starts at zero so the block opens as identity.
struct SelfAttentionBlock {
  Tensor q_w, q_b, k_w, k_b, v_w, v_b, proj_w, proj_b;

  static SelfAttentionBlock create(ParamStore& store, const std::string& prefix,
                                   int channels, Rng& rng) {
    SelfAttentionBlock blk;
    auto head = [&](const std::string& name) {
      return store.create(prefix + "." + name + ".w",
                          init_conv_weight({channels, channels, 1, 1}, rng));
    };
    blk.q_w = head("q");
    blk.q_b = store.create(prefix + ".q.b", Tensor::zeros({channels}));
    blk.k_w = head("k");
    blk.k_b = store.create(prefix + ".k.b", Tensor::zeros({channels}));
    blk.v_w = head("v");
    blk.v_b = store.create(prefix + ".v.b", Tensor::zeros({channels}));
    blk.proj_w = store.create(prefix + ".proj.w",
                              Tensor::zeros({channels, channels, 1, 1}));
    blk.proj_b = store.create(prefix + ".proj.b", Tensor::zeros({channels}));
    return blk;
  }

  static SelfAttentionBlock load(const ParamStore& store, const std::string& prefix) {
    return {store.get(prefix + ".q.w"),    store.get(prefix + ".q.b"),
            store.get(prefix + ".k.w"),    store.get(prefix + ".k.b"),
            store.get(prefix + ".v.w"),    store.get(prefix + ".v.b"),
            store.get(prefix + ".proj.w"), store.get(prefix + ".proj.b")};
  }

  Tensor forward(const Tensor& x) const {
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int n = H * W;
    Tensor q = reshape(conv2d(x, q_w, q_b, 1, 0), {C, n});
    Tensor k = reshape(conv2d(x, k_w, k_b, 1, 0), {C, n});
    Tensor v = reshape(conv2d(x, v_w, v_b, 1, 0), {C, n});
    Tensor scores = scale(matmul(transpose2d(q), k), 1.0 / std::sqrt(double(C)));
    Tensor attn = softmax_rows(scores);                    // [n, n]
    Tensor out = reshape(matmul(v, transpose2d(attn)), {C, H, W});
    return add(x, conv2d(out, proj_w, proj_b, 1, 0));
  }
};

// Three-resolution UNet noise predictor with self-attention at the lowest
// level and timestep bias at every residual block.
struct DenoiserUNet {
  UNetConfig cfg;
  Tensor stem_w, stem_b, stem_g;
  TimestepResBlock res1;
  Tensor down1_w, down1_b, down1_g;
  TimestepResBlock res2;
  Tensor down2_w, down2_b, down2_g;
  TimestepResBlock mid1;
  SelfAttentionBlock attn;
  TimestepResBlock mid2;
  Tensor up1_w, up1_b, up1_g, fuse1_w, fuse1_b, fuse1_g;
  TimestepResBlock res3;
  Tensor up2_w, up2_b, up2_g, fuse2_w, fuse2_b, fuse2_g;
  TimestepResBlock res4;
  Tensor out_w, out_b, out_g;

  static DenoiserUNet create(ParamStore& store, const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::string p = "gmf.unet";
    const int c1 = cfg.base_channels, c2 = 2 * cfg.base_channels;
    const int c3 = c2;
    DenoiserUNet u;
    u.cfg = cfg;
    u.stem_w = store.create(p + ".stem.w",
                            init_conv_weight({c1, cfg.in_channels, 3, 3}, rng));
    u.stem_b = store.create(p + ".stem.b", Tensor::zeros({c1}));
    u.stem_g = store.create(p + ".stem.norm.g", Tensor::filled({c1}, 1.0));
    u.res1 = TimestepResBlock::create(store, p + ".res1", c1, cfg.temb_dim, rng);
    u.down1_w = store.create(p + ".down1.w", init_conv_weight({c2, c1, 3, 3}, rng));
    u.down1_b = store.create(p + ".down1.b", Tensor::zeros({c2}));
    u.down1_g = store.create(p + ".down1.norm.g", Tensor::filled({c2}, 1.0));
    u.res2 = TimestepResBlock::create(store, p + ".res2", c2, cfg.temb_dim, rng);
    u.down2_w = store.create(p + ".down2.w", init_conv_weight({c3, c2, 3, 3}, rng));
    u.down2_b = store.create(p + ".down2.b", Tensor::zeros({c3}));
    u.down2_g = store.create(p + ".down2.norm.g", Tensor::filled({c3}, 1.0));
    u.mid1 = TimestepResBlock::create(store, p + ".mid1", c3, cfg.temb_dim, rng);
    u.attn = SelfAttentionBlock::create(store, p + ".attn", c3, rng);
    u.mid2 = TimestepResBlock::create(store, p + ".mid2", c3, cfg.temb_dim, rng);
    u.up1_w = store.create(p + ".up1.w", init_conv_weight({c2, c3, 3, 3}, rng));
    u.up1_b = store.create(p + ".up1.b", Tensor::zeros({c2}));
    u.up1_g = store.create(p + ".up1.norm.g", Tensor::filled({c2}, 1.0));
    u.fuse1_w = store.create(p + ".fuse1.w", init_conv_weight({c2, 2 * c2, 1, 1}, rng));
    u.fuse1_b = store.create(p + ".fuse1.b", Tensor::zeros({c2}));
    u.fuse1_g = store.create(p + ".fuse1.norm.g", Tensor::filled({c2}, 1.0));
    u.res3 = TimestepResBlock::create(store, p + ".res3", c2, cfg.temb_dim, rng);
    u.up2_w = store.create(p + ".up2.w", init_conv_weight({c1, c2, 3, 3}, rng));
    u.up2_b = store.create(p + ".up2.b", Tensor::zeros({c1}));
    u.up2_g = store.create(p + ".up2.norm.g", Tensor::filled({c1}, 1.0));
    u.fuse2_w = store.create(p + ".fuse2.w", init_conv_weight({c1, 2 * c1, 1, 1}, rng));
    u.fuse2_b = store.create(p + ".fuse2.b", Tensor::zeros({c1}));
    u.fuse2_g = store.create(p + ".fuse2.norm.g", Tensor::filled({c1}, 1.0));
    u.res4 = TimestepResBlock::create(store, p + ".res4", c1, cfg.temb_dim, rng);
    u.out_g = store.create(p + ".out.norm.g", Tensor::filled({c1}, 1.0));
    u.out_w = store.create(p + ".out.w",
                           Tensor::zeros({cfg.out_channels, c1, 3, 3}));
    u.out_b = store.create(p + ".out.b", Tensor::zeros({cfg.out_channels}));
    return u;
  }

  static DenoiserUNet load(const ParamStore& store, const UNetConfig& cfg) {
    const std::string p = "gmf.unet";
    DenoiserUNet u;
    u.cfg = cfg;
    u.stem_w = store.get(p + ".stem.w");
    u.stem_b = store.get(p + ".stem.b");
    u.stem_g = store.get(p + ".stem.norm.g");
    u.res1 = TimestepResBlock::load(store, p + ".res1");
    u.down1_w = store.get(p + ".down1.w");
    u.down1_b = store.get(p + ".down1.b");
    u.down1_g = store.get(p + ".down1.norm.g");
    u.res2 = TimestepResBlock::load(store, p + ".res2");
    u.down2_w = store.get(p + ".down2.w");
    u.down2_b = store.get(p + ".down2.b");
    u.down2_g = store.get(p + ".down2.norm.g");
    u.mid1 = TimestepResBlock::load(store, p + ".mid1");
    u.attn = SelfAttentionBlock::load(store, p + ".attn");
    u.mid2 = TimestepResBlock::load(store, p + ".mid2");
    u.up1_w = store.get(p + ".up1.w");
    u.up1_b = store.get(p + ".up1.b");
    u.up1_g = store.get(p + ".up1.norm.g");
    u.fuse1_w = store.get(p + ".fuse1.w");
    u.fuse1_b = store.get(p + ".fuse1.b");
    u.fuse1_g = store.get(p + ".fuse1.norm.g");
    u.res3 = TimestepResBlock::load(store, p + ".res3");
    u.up2_w = store.get(p + ".up2.w");
    u.up2_b = store.get(p + ".up2.b");
    u.up2_g = store.get(p + ".up2.norm.g");
    u.fuse2_w = store.get(p + ".fuse2.w");
    u.fuse2_b = store.get(p + ".fuse2.b");
    u.fuse2_g = store.get(p + ".fuse2.norm.g");
    u.res4 = TimestepResBlock::load(store, p + ".res4");
    u.out_g = store.get(p + ".out.norm.g");
    u.out_w = store.get(p + ".out.w");
    u.out_b = store.get(p + ".out.b");
    return u;
  }

  // x: [in_channels, h, w] with h, w divisible by 4; returns [out_channels, h, w].
  Tensor forward(const Tensor& x, int t) const {
    if (x.shape().size() != 3 || x.shape()[0] != cfg.in_channels)
      throw InputError("unet: expected " + std::to_string(cfg.in_channels) +
                       " input channels, got " + shape_str(x.shape()));
    if (x.shape()[1] % 4 != 0 || x.shape()[2] % 4 != 0)
      throw InputError("unet: spatial dims must be divisible by 4, got " +
                       shape_str(x.shape()));
    Tensor temb = timestep_embedding(t, cfg.temb_dim);

    Tensor h1 = silu(rms_norm_channels(conv2d(x, stem_w, stem_b, 1, 1), stem_g));
    h1 = res1.forward(h1, temb);
    Tensor h2 = silu(rms_norm_channels(conv2d(h1, down1_w, down1_b, 2, 1), down1_g));
    h2 = res2.forward(h2, temb);
    Tensor h3 = silu(rms_norm_channels(conv2d(h2, down2_w, down2_b, 2, 1), down2_g));
    h3 = mid1.forward(h3, temb);
    h3 = attn.forward(h3);
    h3 = mid2.forward(h3, temb);

    Tensor u2 = silu(rms_norm_channels(
        conv2d(upsample_nearest2(h3), up1_w, up1_b, 1, 1), up1_g));
    u2 = silu(rms_norm_channels(
        conv2d(concat_channel({u2, h2}), fuse1_w, fuse1_b, 1, 0), fuse1_g));
    u2 = res3.forward(u2, temb);
    Tensor u1 = silu(rms_norm_channels(
        conv2d(upsample_nearest2(u2), up2_w, up2_b, 1, 1), up2_g));
    u1 = silu(rms_norm_channels(
        conv2d(concat_channel({u1, h1}), fuse2_w, fuse2_b, 1, 0), fuse2_g));
    u1 = res4.forward(u1, temb);
    return conv2d(rms_norm_channels(u1, out_g), out_w, out_b, 1, 1);
  }
};

}  // namespace layerfit
