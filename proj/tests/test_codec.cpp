#include <gtest/gtest.h>

#include "layerfit/codec.hpp"
#include "layerfit/optim.hpp"
#include "testutil.hpp"

using namespace layerfit;

TEST(Codec, ProjectionColumnsOrthonormal) {
  LatentCodec codec;
  const Tensor& p = codec.projection();
  ASSERT_EQ(p.shape(), (Shape{192, 4}));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int k = 0; k < 192; ++k) dot += p.at(k * 4 + a) * p.at(k * 4 + b);
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-10) << a << "," << b;
    }
}

TEST(Codec, ZeroImageZeroLatentAndBack) {
  LatentCodec codec;
  Tensor img = Tensor::zeros({3, 16, 16});
  LatentImage z = codec.encode(img);
  for (int64_t i = 0; i < z.data.numel(); ++i) EXPECT_DOUBLE_EQ(z.data.at(i), 0.0);
  Tensor back = codec.decode(z);
  ASSERT_EQ(back.shape(), (Shape{3, 16, 16}));
  for (int64_t i = 0; i < back.numel(); ++i) EXPECT_DOUBLE_EQ(back.at(i), 0.0);
}

TEST(Codec, ShapeContract) {
  LatentCodec codec;
  Rng rng(1);
  Tensor img = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
  LatentImage z = codec.encode(img);
  EXPECT_EQ(z.data.shape(), (Shape{4, 1, 1}));
  Tensor img2 = Tensor::uniform({3, 64, 48}, rng, 0.0, 1.0);
  LatentImage z2 = codec.encode(img2);
  EXPECT_EQ(z2.data.shape(), (Shape{4, 8, 6}));
  Tensor back = codec.decode(z2);
  EXPECT_EQ(back.shape(), (Shape{3, 64, 48}));
}

TEST(Codec, NonDivisibleDimsRejected) {
  LatentCodec codec;
  try {
    codec.encode(Tensor::zeros({3, 12, 16}));
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("8"), std::string::npos);
  }
}

TEST(Codec, EncodeIsLinear) {
  LatentCodec codec;
  Rng rng(2);
  Tensor a = Tensor::uniform({3, 16, 24}, rng, 0.0, 0.5);
  Tensor b = Tensor::uniform({3, 16, 24}, rng, 0.0, 0.5);
  Tensor ab = add(a, b);
  LatentImage za = codec.encode(a);
  LatentImage zb = codec.encode(b);
  LatentImage zab = codec.encode(ab);
  for (int64_t i = 0; i < zab.data.numel(); ++i)
    EXPECT_NEAR(zab.data.at(i), za.data.at(i) + zb.data.at(i), 1e-10);
}

TEST(Codec, RoundTripMatchesProjectorOracle) {
  LatentCodec codec;
  Rng rng(3);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor back = codec.decode(codec.encode(img), /*clamp=*/false);

  // Independent oracle: apply the explicit 192x192 projector blockwise.
  std::vector<double> M = codec.projector_matrix();
  Tensor expect = Tensor::zeros({3, 16, 16});
  std::vector<double> block(192), proj(192);
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      LatentCodec::gather_block(img.data().data(), 16, 16, by, bx, block.data());
      for (int i = 0; i < 192; ++i) {
        double s = 0.0;
        for (int j = 0; j < 192; ++j) s += M[static_cast<size_t>(i) * 192 + j] * block[j];
        proj[i] = s;
      }
      LatentCodec::scatter_block(proj.data(), 16, 16, by, bx, expect.data().data());
    }
  EXPECT_LT(testutil::max_abs_diff(back.data(), expect.data()), 1e-10);

  // Clamped variant equals clamp(oracle).
  Tensor clamped = codec.decode(codec.encode(img));
  for (int64_t i = 0; i < clamped.numel(); ++i) {
    double e = std::min(1.0, std::max(0.0, expect.at(i)));
    EXPECT_NEAR(clamped.at(i), e, 1e-10);
  }
}

TEST(Codec, LatentSideIdempotence) {
  // encode(decode(z)) == z on the linear path.
  LatentCodec codec;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    LatentImage z{Tensor::randn({4, 3, 2}, rng), 24, 16};
    Tensor img = codec.decode(z, /*clamp=*/false);
    LatentImage z2 = codec.encode(img);
    EXPECT_LT(testutil::max_abs_diff(z.data.data(), z2.data.data()), 1e-9);
  }
}

TEST(Codec, DecodeRestoresSourceDims) {
  LatentCodec codec;
  Rng rng(5);
  Tensor img = Tensor::uniform({3, 32, 64}, rng, 0.0, 1.0);
  LatentImage z = codec.encode(img);
  EXPECT_EQ(z.source_h, 32);
  EXPECT_EQ(z.source_w, 64);
  EXPECT_EQ(codec.decode(z).shape(), (Shape{3, 32, 64}));
}

TEST(Codec, LearnedModeShapesAndTraining) {
  ParamStore store;
  Rng rng(7);
  LatentCodec codec = LatentCodec::learned(store, rng);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  {
    NoGradGuard ng;
    LatentImage z = codec.encode(img);
    EXPECT_EQ(z.data.shape(), (Shape{4, 2, 2}));
    EXPECT_EQ(codec.decode(z).shape(), (Shape{3, 16, 16}));
  }
  // A few reconstruction steps reduce the loss.
  AdamWConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 30; ++step) {
    store.zero_grads();
    Tensor recon = codec.decode(codec.encode(img), /*clamp=*/false);
    Tensor loss = mse(recon, img);
    if (step == 0) first = loss.item();
    last = loss.item();
    backward(loss);
    opt.step(store);
  }
  EXPECT_LT(last, first);
}

TEST(MaskDownsample, MaxAndAverage) {
  Tensor mask = Tensor::zeros({16, 16});
  // cover one full 8x8 block and one pixel of another
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) mask.at(y * 16 + x) = 1.0;
  mask.at(3 * 16 + 12) = 1.0;
  Tensor mx = downsample_mask_max8(mask);
  Tensor avg = downsample_mask_avg8(mask);
  ASSERT_EQ(mx.shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(mx.at(0), 1.0);
  EXPECT_DOUBLE_EQ(mx.at(1), 1.0);  // single covered pixel still flags the cell
  EXPECT_DOUBLE_EQ(mx.at(2), 0.0);
  EXPECT_DOUBLE_EQ(avg.at(0), 1.0);
  EXPECT_DOUBLE_EQ(avg.at(1), 1.0 / 64.0);
  EXPECT_DOUBLE_EQ(avg.at(3), 0.0);
}
