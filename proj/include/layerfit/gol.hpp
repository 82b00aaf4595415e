#pragma once

#include <string>
#include <vector>

#include "layerfit/codec.hpp"
#include "layerfit/nn.hpp"

namespace layerfit {

struct GolConfig {
  // Channel plan of the 5 encoder stages (stride-2 conv + two residual
  // blocks each); spatial reduction is fixed at 2^5 = 32.
  std::vector<int> channels = {8, 16, 32, 32, 32};
  // Occlusion loss uses the plain Euclidean norm; the squared variant is
  // available for training-stability comparisons.
  bool squared_occlusion_loss = false;

  void validate() const {
    if (channels.size() != 5)
      throw ConfigError("gol: channel plan must have 5 stages, got " +
                        std::to_string(channels.size()));
    for (int c : channels)
      if (c < 1) throw ConfigError("gol: channel counts must be positive");
  }
};

// Five-stage downsampling encoder: each stage is a stride-2 conv followed by
// two residual blocks, with an RMS channel norm pinning the scale at every
// stage boundary. Maps 3xHxW to C x H/32 x W/32.
struct GarmentEncoder {
  struct Stage {
    Tensor down_w, down_b, norm_g;
    ResidualBlock rb1, rb2;
  };
  std::vector<Stage> stages;

  static GarmentEncoder create(ParamStore& store, const std::string& prefix,
                               const GolConfig& cfg, Rng& rng) {
    GarmentEncoder enc;
    int in_ch = 3;
    for (int s = 0; s < 5; ++s) {
      std::string sp = prefix + ".s" + std::to_string(s);
      Stage stage;
      stage.down_w = store.create(sp + ".down.w",
                                  init_conv_weight({cfg.channels[s], in_ch, 3, 3}, rng));
      stage.down_b = store.create(sp + ".down.b", Tensor::zeros({cfg.channels[s]}));
      stage.norm_g = store.create(sp + ".norm.g", Tensor::filled({cfg.channels[s]}, 1.0));
      stage.rb1 = ResidualBlock::create(store, sp + ".rb1", cfg.channels[s], rng);
      stage.rb2 = ResidualBlock::create(store, sp + ".rb2", cfg.channels[s], rng);
      enc.stages.push_back(std::move(stage));
      in_ch = cfg.channels[s];
    }
    return enc;
  }

  static GarmentEncoder load(const ParamStore& store, const std::string& prefix) {
    GarmentEncoder enc;
    for (int s = 0; s < 5; ++s) {
      std::string sp = prefix + ".s" + std::to_string(s);
      Stage stage;
      stage.down_w = store.get(sp + ".down.w");
      stage.down_b = store.get(sp + ".down.b");
      stage.norm_g = store.get(sp + ".norm.g");
      stage.rb1 = ResidualBlock::load(store, sp + ".rb1");
      stage.rb2 = ResidualBlock::load(store, sp + ".rb2");
      enc.stages.push_back(std::move(stage));
    }
    return enc;
  }

  Tensor forward(const Tensor& g) const {
    if (g.shape().size() != 3 || g.shape()[0] != 3)
      throw InputError("garment encoder: expected 3xHxW, got " + shape_str(g.shape()));
    if (g.shape()[1] % 32 != 0 || g.shape()[2] % 32 != 0)
      throw InputError("garment encoder: dims " + std::to_string(g.shape()[1]) +
                       "x" + std::to_string(g.shape()[2]) +
                       " must be multiples of 32");
    Tensor h = g;
    for (const Stage& stage : stages) {
      h = silu(rms_norm_channels(conv2d(h, stage.down_w, stage.down_b, 2, 1),
                                 stage.norm_g));
      h = stage.rb1.forward(h);
      h = stage.rb2.forward(h);
    }
    return h;
  }
};

// Garment occlusion learning: role-specific encoders for the outer and inner
// garments, a mapping network U (two upsample+conv stages, H/32 -> H/8), and
// a per-position linear head squashed by a sigmoid into the attention map.
struct GolModel {
  GolConfig cfg;
  GarmentEncoder enc_outer, enc_inner;
  Tensor u1_w, u1_b, u1_g, u2_w, u2_b, u2_g;
  Tensor head_w, head_b;

  static GolModel create(ParamStore& store, const GolConfig& cfg, Rng& rng) {
    cfg.validate();
    GolModel m;
    m.cfg = cfg;
    m.enc_outer = GarmentEncoder::create(store, "gol.enc_o", cfg, rng);
    m.enc_inner = GarmentEncoder::create(store, "gol.enc_i", cfg, rng);
    const int c = cfg.channels[4];
    const int cu1 = c, cu2 = std::max(1, c / 2);
    m.u1_w = store.create("gol.u1.w", init_conv_weight({cu1, 2 * c, 3, 3}, rng));
    m.u1_b = store.create("gol.u1.b", Tensor::zeros({cu1}));
    m.u1_g = store.create("gol.u1.norm.g", Tensor::filled({cu1}, 1.0));
    m.u2_w = store.create("gol.u2.w", init_conv_weight({cu2, cu1, 3, 3}, rng));
    m.u2_b = store.create("gol.u2.b", Tensor::zeros({cu2}));
    m.u2_g = store.create("gol.u2.norm.g", Tensor::filled({cu2}, 1.0));
    // Small head init keeps the starting logits near zero, so A opens at
    // ~0.5 with the sigmoid far from saturation.
    Tensor head = init_conv_weight({1, cu2, 1, 1}, rng);
    for (double& v : head.data()) v *= 0.05;
    m.head_w = store.create("gol.head.w", head);
    m.head_b = store.create("gol.head.b", Tensor::zeros({1}));
    return m;
  }

  static GolModel load(const ParamStore& store, const GolConfig& cfg) {
    GolModel m;
    m.cfg = cfg;
    m.enc_outer = GarmentEncoder::load(store, "gol.enc_o");
    m.enc_inner = GarmentEncoder::load(store, "gol.enc_i");
    m.u1_w = store.get("gol.u1.w");
    m.u1_b = store.get("gol.u1.b");
    m.u1_g = store.get("gol.u1.norm.g");
    m.u2_w = store.get("gol.u2.w");
    m.u2_b = store.get("gol.u2.b");
    m.u2_g = store.get("gol.u2.norm.g");
    m.head_w = store.get("gol.head.w");
    m.head_b = store.get("gol.head.b");
    return m;
  }

  // A = sigmoid(Linear(U(E_o(g_o) (+) E_i(g_i)))), shape 1 x H/8 x W/8.
  Tensor attention_map(const Tensor& g_i, const Tensor& g_o) const {
    if (g_i.shape() != g_o.shape())
      throw InputError("attention_map: garment dims differ: " +
                       shape_str(g_i.shape()) + " vs " + shape_str(g_o.shape()));
    Tensor f_o = enc_outer.forward(g_o);
    Tensor f_i = enc_inner.forward(g_i);
    Tensor h = concat_channel({f_o, f_i});
    h = silu(rms_norm_channels(conv2d(upsample_nearest2(h), u1_w, u1_b, 1, 1), u1_g));
    h = silu(rms_norm_channels(conv2d(upsample_nearest2(h), u2_w, u2_b, 1, 1), u2_g));
    return sigmoid(conv2d(h, head_w, head_b, 1, 0));
  }
};

// z_iv = A (element-wise) z_i, broadcast over the 4 latent channels.
inline LatentImage refine_inner(const Tensor& attention, const LatentImage& z_i) {
  if (attention.shape().size() != 3 || attention.shape()[0] != 1 ||
      attention.shape()[1] != z_i.data.shape()[1] ||
      attention.shape()[2] != z_i.data.shape()[2])
    throw InputError("refine_inner: attention " + shape_str(attention.shape()) +
                     " does not match latent " + shape_str(z_i.data.shape()));
  return LatentImage{broadcast_mul(attention, z_i.data), z_i.source_h, z_i.source_w};
}

// L_OCC = || encode(x_pi) - z_iv ||_2 (norm, not squared, by default).
inline Tensor occlusion_loss(const Tensor& z_iv, const Tensor& x_pi,
                             const LatentCodec& codec, bool squared = false) {
  Tensor target;
  {
    NoGradGuard ng;  // the codec target is data, not a gradient path
    target = codec.encode(x_pi).data;
  }
  check_same_shape(z_iv, target, "occlusion_loss");
  Tensor diff = sub(target, z_iv);
  if (squared) return sum(mul(diff, diff));
  return l2_norm(diff);
}

}  // namespace layerfit
