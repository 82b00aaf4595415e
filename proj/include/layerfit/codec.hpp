#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "layerfit/nn.hpp"

namespace layerfit {

// 4-channel latent image at 1/8 spatial resolution, remembering the pixel
// dimensions it came from.
struct LatentImage {
  Tensor data;  // [4, H/8, W/8]
  int source_h = 0;
  int source_w = 0;

  int lat_h() const { return data.shape()[1]; }
  int lat_w() const { return data.shape()[2]; }
};

enum class CodecMode { kFixedOrthogonal, kLearned };

struct CodecConfig {
  CodecMode mode = CodecMode::kFixedOrthogonal;
  // 0 selects the structured perceptual basis (block DC, luminance ramps,
  // R-B chroma); any other value seeds a random orthonormal basis.
  uint64_t projection_seed = 0;
  // Latents are divided by this on encode (and multiplied back on decode)
  // so image latents sit near unit scale for the diffusion model.
  double latent_scale = 4.0;
};

// Image <-> latent codec: 3xHxW in [0,1] to 4 x H/8 x W/8 and back.
//
// The fixed-orthogonal mode is a linear codec: space-to-depth by 8 turns
// each 8x8x3 pixel block into a 192-vector, which is projected onto a fixed
// orthonormal 4-column basis. Decoding applies the transpose and inverts the
// block packing; the rank-4 per-block projection loss is accepted. A learned
// mode (tiny conv autoencoder) sits behind the same interface.
class LatentCodec {
 public:
  static constexpr int kBlock = 8;
  static constexpr int kLatentChannels = 4;
  static constexpr int kBlockDim = 3 * kBlock * kBlock;  // 192

  explicit LatentCodec(CodecConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.mode == CodecMode::kFixedOrthogonal)
      projection_ = make_orthogonal_projection(cfg_.projection_seed);
  }

  // Learned-mode codec; creates its parameters under "codec." in the store.
  static LatentCodec learned(ParamStore& store, Rng& rng) {
    LatentCodec codec(CodecConfig{CodecMode::kLearned, 0});
    codec.enc_w1_ = store.create("codec.enc1.w", init_conv_weight({8, 3, 3, 3}, rng));
    codec.enc_b1_ = store.create("codec.enc1.b", Tensor::zeros({8}));
    codec.enc_w2_ = store.create("codec.enc2.w", init_conv_weight({16, 8, 3, 3}, rng));
    codec.enc_b2_ = store.create("codec.enc2.b", Tensor::zeros({16}));
    codec.enc_w3_ = store.create("codec.enc3.w", init_conv_weight({4, 16, 3, 3}, rng));
    codec.enc_b3_ = store.create("codec.enc3.b", Tensor::zeros({4}));
    codec.dec_w1_ = store.create("codec.dec1.w", init_conv_weight({16, 4, 3, 3}, rng));
    codec.dec_b1_ = store.create("codec.dec1.b", Tensor::zeros({16}));
    codec.dec_w2_ = store.create("codec.dec2.w", init_conv_weight({8, 16, 3, 3}, rng));
    codec.dec_b2_ = store.create("codec.dec2.b", Tensor::zeros({8}));
    codec.dec_w3_ = store.create("codec.dec3.w", init_conv_weight({3, 8, 3, 3}, rng));
    codec.dec_b3_ = store.create("codec.dec3.b", Tensor::zeros({3}));
    return codec;
  }

  CodecMode mode() const { return cfg_.mode; }

  // Fixed orthonormal basis, 192x4 row-major.
  const Tensor& projection() const { return projection_; }

  LatentImage encode(const Tensor& image) const {
    if (image.shape().size() != 3 || image.shape()[0] != 3)
      throw InputError("encode: expected 3xHxW image, got " + shape_str(image.shape()));
    const int H = image.shape()[1], W = image.shape()[2];
    if (H % kBlock != 0 || W % kBlock != 0)
      throw InputError("encode: image dims " + std::to_string(H) + "x" +
                       std::to_string(W) + " must be multiples of " +
                       std::to_string(kBlock));
    if (cfg_.mode == CodecMode::kLearned) {
      Tensor h = silu(conv2d(image, enc_w1_, enc_b1_, 2, 1));
      h = silu(conv2d(h, enc_w2_, enc_b2_, 2, 1));
      Tensor z = conv2d(h, enc_w3_, enc_b3_, 2, 1);
      return LatentImage{z, H, W};
    }

    const int h = H / kBlock, w = W / kBlock;
    Tensor z = Tensor::zeros({kLatentChannels, h, w});
    const double* img = image.data().data();
    const double* P = projection_.data().data();
    std::vector<double> block(kBlockDim);
    for (int by = 0; by < h; ++by)
      for (int bx = 0; bx < w; ++bx) {
        gather_block(img, H, W, by, bx, block.data());
        for (int l = 0; l < kLatentChannels; ++l) {
          double s = 0.0;
          for (int k = 0; k < kBlockDim; ++k)
            s += P[k * kLatentChannels + l] * block[k];
          z.at((static_cast<int64_t>(l) * h + by) * w + bx) = s;
        }
      }
    return LatentImage{z, H, W};
  }

  // Inverse map back to pixel space. `clamp` snaps the output into [0,1]
  // for image writing; the linear path (clamp=false) is what the latent
  // round-trip identity holds on.
  Tensor decode(const LatentImage& latent, bool clamp = true) const {
    const Tensor& z = latent.data;
    if (z.shape().size() != 3 || z.shape()[0] != kLatentChannels)
      throw InputError("decode: expected 4xhxw latent, got " + shape_str(z.shape()));
    const int H = latent.source_h, W = latent.source_w;
    if (H != z.shape()[1] * kBlock || W != z.shape()[2] * kBlock)
      throw InputError("decode: latent " + shape_str(z.shape()) +
                       " inconsistent with source dims " + std::to_string(H) +
                       "x" + std::to_string(W));
    if (cfg_.mode == CodecMode::kLearned) {
      Tensor x = silu(conv2d(upsample_nearest2(z), dec_w1_, dec_b1_, 1, 1));
      x = silu(conv2d(upsample_nearest2(x), dec_w2_, dec_b2_, 1, 1));
      x = conv2d(upsample_nearest2(x), dec_w3_, dec_b3_, 1, 1);
      if (clamp) x = clamp01(x);
      return x;
    }

    const int h = z.shape()[1], w = z.shape()[2];
    Tensor out = Tensor::zeros({3, H, W});
    const double* P = projection_.data().data();
    std::vector<double> block(kBlockDim);
    for (int by = 0; by < h; ++by)
      for (int bx = 0; bx < w; ++bx) {
        for (int k = 0; k < kBlockDim; ++k) {
          double s = 0.0;
          for (int l = 0; l < kLatentChannels; ++l)
            s += P[k * kLatentChannels + l] *
                 z.at((static_cast<int64_t>(l) * h + by) * w + bx);
          block[k] = s;
        }
        scatter_block(block.data(), H, W, by, bx, out.data().data());
      }
    if (clamp)
      for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    return out;
  }

  // Explicit 192x192 projector P*P^T; the reference oracle for round trips.
  std::vector<double> projector_matrix() const {
    std::vector<double> M(static_cast<size_t>(kBlockDim) * kBlockDim, 0.0);
    const double* P = projection_.data().data();
    for (int i = 0; i < kBlockDim; ++i)
      for (int j = 0; j < kBlockDim; ++j) {
        double s = 0.0;
        for (int l = 0; l < kLatentChannels; ++l)
          s += P[i * kLatentChannels + l] * P[j * kLatentChannels + l];
        M[static_cast<size_t>(i) * kBlockDim + j] = s;
      }
    return M;
  }

  static Tensor clamp01(const Tensor& x) {
    Tensor out = x.detached();
    for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    return out;
  }

  // Block packing order: index = (c*8 + dy)*8 + dx.
  static void gather_block(const double* img, int H, int W, int by, int bx,
                           double* block) {
    for (int c = 0; c < 3; ++c)
      for (int dy = 0; dy < kBlock; ++dy)
        for (int dx = 0; dx < kBlock; ++dx)
          block[(c * kBlock + dy) * kBlock + dx] =
              img[(static_cast<size_t>(c) * H + by * kBlock + dy) * W +
                  bx * kBlock + dx];
  }

  static void scatter_block(const double* block, int H, int W, int by, int bx,
                            double* img) {
    for (int c = 0; c < 3; ++c)
      for (int dy = 0; dy < kBlock; ++dy)
        for (int dx = 0; dx < kBlock; ++dx)
          img[(static_cast<size_t>(c) * H + by * kBlock + dy) * W + bx * kBlock +
              dx] = block[(c * kBlock + dy) * kBlock + dx];
  }

 private:
  static Tensor make_orthogonal_projection(uint64_t seed) {
    Rng rng(seed);
    // Columns of a random Gaussian matrix, orthonormalized (modified
    // Gram-Schmidt, second pass for numerical tightness).
    std::vector<std::vector<double>> cols(kLatentChannels,
                                          std::vector<double>(kBlockDim));
    for (auto& col : cols)
      for (double& v : col) v = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (int l = 0; l < kLatentChannels; ++l) {
        for (int m = 0; m < l; ++m) {
          double dot = 0.0;
          for (int k = 0; k < kBlockDim; ++k) dot += cols[l][k] * cols[m][k];
          for (int k = 0; k < kBlockDim; ++k) cols[l][k] -= dot * cols[m][k];
        }
        double norm = 0.0;
        for (double v : cols[l]) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : cols[l]) v /= norm;
      }
    Tensor p = Tensor::zeros({kBlockDim, kLatentChannels});
    for (int k = 0; k < kBlockDim; ++k)
      for (int l = 0; l < kLatentChannels; ++l)
        p.at(k * kLatentChannels + l) = cols[l][k];
    return p;
  }

  CodecConfig cfg_;
  Tensor projection_;
  Tensor enc_w1_, enc_b1_, enc_w2_, enc_b2_, enc_w3_, enc_b3_;
  Tensor dec_w1_, dec_b1_, dec_w2_, dec_b2_, dec_w3_, dec_b3_;
};

// Latent-resolution mask helpers (masks never pass through the codec).

// 8x8 max-pool: any covered pixel marks the latent cell.
inline Tensor downsample_mask_max8(const Tensor& mask) {
  const int H = mask.shape()[mask.shape().size() - 2];
  const int W = mask.shape()[mask.shape().size() - 1];
  if (H % 8 != 0 || W % 8 != 0)
    throw InputError("mask dims must be multiples of 8, got " + shape_str(mask.shape()));
  const int h = H / 8, w = W / 8;
  Tensor out = Tensor::zeros({1, h, w});
  for (int by = 0; by < h; ++by)
    for (int bx = 0; bx < w; ++bx) {
      double m = 0.0;
      for (int dy = 0; dy < 8; ++dy)
        for (int dx = 0; dx < 8; ++dx)
          m = std::max(m, mask.at(static_cast<int64_t>(by * 8 + dy) * W + bx * 8 + dx));
      out.at(static_cast<int64_t>(by) * w + bx) = m;
    }
  return out;
}

// 8x8 average-pool: fraction of covered pixels per latent cell.
inline Tensor downsample_mask_avg8(const Tensor& mask) {
  const int H = mask.shape()[mask.shape().size() - 2];
  const int W = mask.shape()[mask.shape().size() - 1];
  if (H % 8 != 0 || W % 8 != 0)
    throw InputError("mask dims must be multiples of 8, got " + shape_str(mask.shape()));
  const int h = H / 8, w = W / 8;
  Tensor out = Tensor::zeros({1, h, w});
  for (int by = 0; by < h; ++by)
    for (int bx = 0; bx < w; ++bx) {
      double s = 0.0;
      for (int dy = 0; dy < 8; ++dy)
        for (int dx = 0; dx < 8; ++dx)
          s += mask.at(static_cast<int64_t>(by * 8 + dy) * W + bx * 8 + dx);
      out.at(static_cast<int64_t>(by) * w + bx) = s / 64.0;
    }
  return out;
}

}  // namespace layerfit
