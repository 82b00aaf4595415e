#include <gtest/gtest.h>

#include "layerfit/metrics.hpp"
#include "lacd_oracle.hpp"

using namespace layerfit;

namespace {

Tensor random_blob_mask(int H, int W, Rng& rng) {
  Tensor m = Tensor::zeros({H, W});
  int cy = 2 + static_cast<int>(rng.uniform_index(H - 4));
  int cx = 2 + static_cast<int>(rng.uniform_index(W - 4));
  int ry = 1 + static_cast<int>(rng.uniform_index(H / 3));
  int rx = 1 + static_cast<int>(rng.uniform_index(W / 3));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (std::abs(y - cy) <= ry && std::abs(x - cx) <= rx)
        m.at(static_cast<int64_t>(y) * W + x) = 1.0;
  return m;
}

}  // namespace

TEST(Regions, DisjointLayersHaveEmptyBand) {
  Tensor a1 = Tensor::zeros({16, 16});
  Tensor a2 = Tensor::zeros({16, 16});
  a1.at(2 * 16 + 2) = 1.0;
  a1.at(2 * 16 + 3) = 1.0;
  a2.at(13 * 16 + 13) = 1.0;  // far away
  LayerRegions r = derive_regions({a1, a2}, 3);
  EXPECT_EQ(mask_count(r.band[0]), 0);
  for (int64_t i = 0; i < a1.numel(); ++i)
    EXPECT_EQ(r.interior[0].at(i), a1.at(i));
  // last layer's band is always empty
  EXPECT_EQ(mask_count(r.band[1]), 0);
}

TEST(Regions, AbuttingStripMatchesDistanceOracle) {
  // A_2 directly abuts A_1's right edge; radius 1 band = 1-pixel strip.
  const int H = 12, W = 12;
  Tensor a1 = Tensor::zeros({H, W});
  Tensor a2 = Tensor::zeros({H, W});
  for (int y = 3; y < 9; ++y) {
    for (int x = 2; x <= 5; ++x) a1.at(y * W + x) = 1.0;
    for (int x = 6; x <= 8; ++x) a2.at(y * W + x) = 1.0;
  }
  LayerRegions r = derive_regions({a1, a2}, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      bool expect = layerfit::testutil::naive_in_band(a1, a2, y, x, 1);
      EXPECT_EQ(r.band[0].at(y * W + x) > 0.0, expect) << y << "," << x;
      if (a1.at(y * W + x) > 0.0)
        EXPECT_EQ(expect, x == 5 && y >= 2 && y <= 9);  // the strip column
    }
}

TEST(Regions, BandSubsetAndPartition) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tensor a1 = random_blob_mask(14, 14, rng);
    Tensor a2 = random_blob_mask(14, 14, rng);
    int radius = 1 + static_cast<int>(seed % 4);
    LayerRegions r = derive_regions({a1, a2}, radius);
    for (int i = 0; i < 2; ++i) {
      // B_i subset of A_i
      for (int64_t p = 0; p < a1.numel(); ++p)
        if (r.band[i].at(p) > 0.0) EXPECT_GT(r.region[i].at(p), 0.0);
      // |B_i| + |C_i| == |A_i|
      EXPECT_EQ(mask_count(r.band[i]) + mask_count(r.interior[i]),
                mask_count(r.region[i]));
      // C_i == A_i minus B_i exactly
      for (int64_t p = 0; p < a1.numel(); ++p)
        EXPECT_EQ(r.interior[i].at(p) > 0.0,
                  r.region[i].at(p) > 0.0 && r.band[i].at(p) <= 0.0);
    }
  }
}

TEST(Regions, ErrorsOnBadInput) {
  EXPECT_THROW(derive_regions({}, 3), InputError);
  EXPECT_THROW(derive_regions({Tensor::zeros({4, 4})}, 0), UsageError);
  EXPECT_THROW(derive_regions({Tensor::zeros({4, 4}), Tensor::zeros({5, 5})}, 1),
               InputError);
}

TEST(Lacd, IdenticalImagesScoreZero) {
  Rng rng(1);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor a1 = random_blob_mask(16, 16, rng);
  Tensor a2 = random_blob_mask(16, 16, rng);
  LayerRegions r = derive_regions({a1, a2}, 3);
  LacdReport rep = lacd(img, img, r, 3.0, LacdNorm::kRawSum);
  for (double v : rep.per_layer) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(rep.value, 0.0);
}

TEST(Lacd, SingleBandPixelHandValue) {
  // One band pixel differing by (0.6, 0, 0.8): norm 1.0, lambda1 3 -> 3.0.
  const int H = 16, W = 16;
  Tensor a1 = Tensor::zeros({H, W});
  Tensor a2 = Tensor::zeros({H, W});
  for (int y = 4; y <= 8; ++y)
    for (int x = 4; x <= 7; ++x) a1.at(y * W + x) = 1.0;
  for (int y = 4; y <= 8; ++y)
    for (int x = 8; x <= 11; ++x) a2.at(y * W + x) = 1.0;
  LayerRegions r = derive_regions({a1, a2}, 1);
  ASSERT_GT(r.band[0].at(6 * W + 7), 0.0);  // abutting column is band

  Tensor gt = Tensor::filled({3, H, W}, 0.1);
  Tensor gen = gt.detached();
  gen.at((0 * H + 6) * W + 7) += 0.6;
  gen.at((2 * H + 6) * W + 7) += 0.8;
  double v = lacd_layer(gt, gen, r, 0, 3.0, LacdNorm::kRawSum);
  EXPECT_NEAR(v, 3.0, 1e-12);

  // Moving the same differing pixel from B to C divides the score by lambda1.
  Tensor gen2 = gt.detached();
  ASSERT_GT(r.interior[0].at(6 * W + 4), 0.0);
  gen2.at((0 * H + 6) * W + 4) += 0.6;
  gen2.at((2 * H + 6) * W + 4) += 0.8;
  double v2 = lacd_layer(gt, gen2, r, 0, 3.0, LacdNorm::kRawSum);
  EXPECT_NEAR(v / v2, 3.0, 1e-12);
}

TEST(Lacd, AggregateIsMeanOfLayers) {
  Rng rng(2);
  Tensor gt = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor gen = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor a1 = random_blob_mask(16, 16, rng);
  LayerRegions r1 = derive_regions({a1}, 3);
  LacdReport one = lacd(gt, gen, r1, 3.0, LacdNorm::kRawSum);
  EXPECT_DOUBLE_EQ(one.value, one.per_layer[0]);  // N = 1

  Tensor a2 = random_blob_mask(16, 16, rng);
  LayerRegions r2 = derive_regions({a1, a2}, 3);
  LacdReport two = lacd(gt, gen, r2, 3.0, LacdNorm::kRawSum);
  double s0 = lacd_layer(gt, gen, r2, 0, 3.0, LacdNorm::kRawSum);
  double s1 = lacd_layer(gt, gen, r2, 1, 3.0, LacdNorm::kRawSum);
  EXPECT_NEAR(two.value, (s0 + s1) / 2.0, 1e-12);
}

TEST(Lacd, NonnegativeOnRandomPairs) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor gt = Tensor::uniform({3, 12, 12}, rng, 0.0, 1.0);
    Tensor gen = Tensor::uniform({3, 12, 12}, rng, 0.0, 1.0);
    Tensor a1 = random_blob_mask(12, 12, rng);
    Tensor a2 = random_blob_mask(12, 12, rng);
    LayerRegions r = derive_regions({a1, a2}, 2);
    LacdReport rep = lacd(gt, gen, r);
    EXPECT_GE(rep.value, 0.0);
    for (double v : rep.per_layer) EXPECT_GE(v, 0.0);
  }
}

TEST(Lacd, ScaleHomogeneity) {
  Rng rng(7);
  Tensor gt = Tensor::uniform({3, 16, 16}, rng, 0.2, 0.8);
  Tensor delta = Tensor::uniform({3, 16, 16}, rng, -0.1, 0.1);
  Tensor a1 = random_blob_mask(16, 16, rng);
  Tensor a2 = random_blob_mask(16, 16, rng);
  LayerRegions r = derive_regions({a1, a2}, 2);
  const double c = 2.5;
  for (LacdNorm norm : {LacdNorm::kRawSum, LacdNorm::kPerPixel}) {
    LacdReport base = lacd(gt, add(gt, delta), r, 3.0, norm);
    LacdReport scaled = lacd(gt, add(gt, scale(delta, c)), r, 3.0, norm);
    EXPECT_NEAR(scaled.value, c * base.value, 1e-10);
    for (size_t i = 0; i < base.per_layer.size(); ++i)
      EXPECT_NEAR(scaled.per_layer[i], c * base.per_layer[i], 1e-10);
  }
}

TEST(Lacd, BackgroundPixelsIgnored) {
  Rng rng(9);
  Tensor gt = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor gen = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  Tensor a1 = random_blob_mask(16, 16, rng);
  Tensor a2 = random_blob_mask(16, 16, rng);
  LayerRegions r = derive_regions({a1, a2}, 3);
  LacdReport before = lacd(gt, gen, r);
  Tensor uni = mask_or(a1, a2);
  Tensor gen2 = gen.detached();
  for (int64_t p = 0; p < uni.numel(); ++p)
    if (uni.at(p) <= 0.0)
      for (int c = 0; c < 3; ++c)
        gen2.at(c * 16 * 16 + p) = rng.uniform(0.0, 1.0);
  LacdReport after = lacd(gt, gen2, r);
  EXPECT_DOUBLE_EQ(after.value, before.value);
}

TEST(Lacd, EmptyLayerScoresZero) {
  Rng rng(10);
  Tensor gt = Tensor::uniform({3, 12, 12}, rng, 0.0, 1.0);
  Tensor gen = Tensor::uniform({3, 12, 12}, rng, 0.0, 1.0);
  Tensor empty = Tensor::zeros({12, 12});
  Tensor a2 = random_blob_mask(12, 12, rng);
  LayerRegions r = derive_regions({empty, a2}, 3);
  EXPECT_DOUBLE_EQ(lacd_layer(gt, gen, r, 0, 3.0, LacdNorm::kRawSum), 0.0);
  EXPECT_DOUBLE_EQ(lacd_layer(gt, gen, r, 0, 3.0, LacdNorm::kPerPixel), 0.0);
}

TEST(Lacd, MatchesNaiveOracle) {
  for (uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    Tensor gt = Tensor::uniform({3, 14, 14}, rng, 0.0, 1.0);
    Tensor gen = Tensor::uniform({3, 14, 14}, rng, 0.0, 1.0);
    Tensor a1 = random_blob_mask(14, 14, rng);
    Tensor a2 = random_blob_mask(14, 14, rng);
    double lambda1 = rng.uniform(1.0, 5.0);
    int radius = 1 + static_cast<int>(rng.uniform_index(4));
    for (bool per_pixel : {false, true}) {
      LayerRegions r = derive_regions({a1, a2}, radius);
      LacdReport got = lacd(gt, gen, r, lambda1,
                            per_pixel ? LacdNorm::kPerPixel : LacdNorm::kRawSum);
      auto want = layerfit::testutil::naive_lacd(gt, gen, {a1, a2}, lambda1,
                                                 radius, per_pixel);
      EXPECT_NEAR(got.value, want.value, 1e-10);
      for (size_t i = 0; i < got.per_layer.size(); ++i)
        EXPECT_NEAR(got.per_layer[i], want.per_layer[i], 1e-10);
    }
  }
}

TEST(Lacd, LayerOutOfRangeRejected) {
  Tensor img = Tensor::zeros({3, 12, 12});
  LayerRegions r = derive_regions({Tensor::zeros({12, 12})}, 3);
  EXPECT_THROW(lacd_layer(img, img, r, 1, 3.0), UsageError);
  EXPECT_THROW(lacd(img, img, LayerRegions{}), InputError);
}

TEST(Ssim, SelfSimilarityIsOne) {
  Rng rng(3);
  Tensor x = Tensor::uniform({3, 16, 20}, rng, 0.0, 1.0);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, InvertedBinaryImageStronglyNegative) {
  Rng rng(4);
  Tensor x = Tensor::zeros({3, 16, 16});
  for (int64_t p = 0; p < 256; ++p) {
    double v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (int c = 0; c < 3; ++c) x.at(c * 256 + p) = v;
  }
  Tensor inv = sub(Tensor::filled({3, 16, 16}, 1.0), x);
  EXPECT_LT(ssim(x, inv), 0.0);
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  for (auto [m1, m2] : {std::pair{0.3, 0.7}, {0.1, 0.9}, {0.5, 0.5}}) {
    Tensor a = Tensor::filled({3, 16, 16}, m1);
    Tensor b = Tensor::filled({3, 16, 16}, m2);
    constexpr double C1 = 1e-4;
    double expect = (2.0 * m1 * m2 + C1) / (m1 * m1 + m2 * m2 + C1);
    EXPECT_NEAR(ssim(a, b), expect, 1e-9);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = Tensor::uniform({3, 14, 14}, rng, 0.0, 1.0);
    Tensor y = Tensor::uniform({3, 14, 14}, rng, 0.0, 1.0);
    double a = ssim(x, y), b = ssim(y, x);
    EXPECT_NEAR(a, b, 1e-12);
    EXPECT_GE(a, -1.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Ssim, TooSmallImageRejected) {
  Tensor tiny = Tensor::zeros({3, 8, 8});
  EXPECT_THROW(ssim(tiny, tiny), InputError);
  EXPECT_THROW(ssim(Tensor::zeros({3, 16, 16}), Tensor::zeros({3, 16, 15})),
               InputError);
}
