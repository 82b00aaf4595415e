#include <gtest/gtest.h>

#include "layerfit/pipeline.hpp"
#include "testutil.hpp"

using namespace layerfit;
using layerfit::testutil::gradcheck_max_rel_error;

namespace {

PipelineConfig tiny_pipeline_config() {
  PipelineConfig cfg;
  cfg.gol.channels = {1, 1, 2, 2, 2};
  cfg.unet.base_channels = 4;
  cfg.unet.temb_dim = 8;
  cfg.schedule_steps = 40;
  return cfg;
}

Quadruplet tiny_sample(uint64_t seed) {
  SynthConfig cfg;
  cfg.size = 32;
  cfg.seed = seed;
  return generate_sample(cfg, 0);
}

}  // namespace

TEST(NoiseSchedule, LinearScheduleInvariants) {
  NoiseSchedule s = NoiseSchedule::linear(200);
  EXPECT_EQ(s.T, 200);
  for (int t = 1; t <= s.T; ++t) {
    EXPECT_GT(s.beta_at(t), 0.0);
    EXPECT_LT(s.beta_at(t), 1.0);
    if (t > 1) EXPECT_GT(s.beta_at(t), s.beta_at(t - 1));
  }
  EXPECT_LT(s.alpha_bar_at(s.T), 0.05);  // near-pure noise at the final step
  // cumulative product oracle
  double prod = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    prod *= 1.0 - s.beta_at(t);
    EXPECT_NEAR(s.alpha_bar_at(t), prod, 1e-15);
  }
  EXPECT_THROW(NoiseSchedule::linear(1), ConfigError);
  // T so small the compressed betas leave (0,1)
  EXPECT_THROW(NoiseSchedule::linear(10), ConfigError);
  EXPECT_THROW(s.beta_at(0), UsageError);
  EXPECT_THROW(s.beta_at(201), UsageError);
}

TEST(ForwardNoise, DegenerateSchedulePointKeepsSignal) {
  // alpha_bar -> 1 limit: y_t == y0.
  NoiseSchedule s = NoiseSchedule::from_betas({1e-15, 2e-15, 3e-15});
  Rng rng(1);
  Tensor y0 = Tensor::randn({4, 3, 3}, rng);
  auto [y_t, eps] = forward_noise(y0, 3, s, rng);
  for (int64_t i = 0; i < y0.numel(); ++i) EXPECT_NEAR(y_t.at(i), y0.at(i), 1e-6);
}

TEST(ForwardNoise, OutOfRangeRejected) {
  NoiseSchedule s = NoiseSchedule::linear(50);
  Rng rng(2);
  Tensor y0 = Tensor::zeros({4, 2, 2});
  EXPECT_THROW(forward_noise(y0, 0, s, rng), UsageError);
  EXPECT_THROW(forward_noise(y0, 51, s, rng), UsageError);
}

TEST(ForwardNoise, MonteCarloVarianceMatchesSchedule) {
  NoiseSchedule s = NoiseSchedule::linear(200);
  Rng rng(3);
  Tensor y0 = Tensor::zeros({1, 4, 4});
  for (int t : {1, 50, 120, 200}) {
    double sum = 0.0, sum2 = 0.0;
    const int draws = 10000 / 16;  // 16 elements per draw
    int64_t count = 0;
    for (int i = 0; i < draws; ++i) {
      auto [y_t, eps] = forward_noise(y0, t, s, rng);
      for (int64_t j = 0; j < y_t.numel(); ++j) {
        sum += y_t.at(j);
        sum2 += y_t.at(j) * y_t.at(j);
        ++count;
      }
    }
    double var = sum2 / count - (sum / count) * (sum / count);
    double want = 1.0 - s.alpha_bar_at(t);
    EXPECT_NEAR(var, want, 0.05 * want) << "t=" << t;
  }
}

TEST(ForwardNoise, MeanPreservedOnConstantSignal) {
  NoiseSchedule s = NoiseSchedule::linear(200);
  Rng rng(4);
  Tensor y0 = Tensor::filled({1, 4, 4}, 2.0);
  for (int t : {30, 170}) {
    double sum = 0.0;
    int64_t count = 0;
    for (int i = 0; i < 2000; ++i) {
      auto [y_t, eps] = forward_noise(y0, t, s, rng);
      for (int64_t j = 0; j < y_t.numel(); ++j) {
        sum += y_t.at(j);
        ++count;
      }
    }
    double want = std::sqrt(s.alpha_bar_at(t)) * 2.0;
    EXPECT_NEAR(sum / count, want, 0.02 * 2.0) << "t=" << t;  // 2% of the signal level
  }
}

TEST(ForwardNoise, AffineInSignalForFixedNoise) {
  NoiseSchedule s = NoiseSchedule::linear(100);
  Rng rng(5);
  Tensor y0 = Tensor::randn({4, 2, 2}, rng);
  auto [y_t, eps] = forward_noise(y0, 40, s, rng);
  double ab = s.alpha_bar_at(40);
  // reconstruct the affine form from the returned draw
  for (int64_t i = 0; i < y0.numel(); ++i)
    EXPECT_NEAR(y_t.at(i),
                std::sqrt(ab) * y0.at(i) + std::sqrt(1.0 - ab) * eps.at(i), 1e-12);
}

TEST(Assemble, ShapesAndSlotRoundTrip) {
  Rng rng(6);
  Tensor z_a = Tensor::randn({4, 8, 8}, rng);
  Tensor z_o = Tensor::randn({4, 8, 8}, rng);
  Tensor z_iv = Tensor::randn({4, 8, 8}, rng);
  Tensor m_a = Tensor::zeros({1, 8, 8});
  m_a.at(3) = 1.0;
  m_a.at(9) = 1.0;
  Assembly asm_ = assemble(z_a, z_o, z_iv, m_a);
  EXPECT_EQ(asm_.z_in.shape(), (Shape{4, 8, 24}));
  EXPECT_EQ(asm_.m_in.shape(), (Shape{1, 8, 24}));

  Tensor slot_o = extract_slot(asm_.z_in, kSlotOuter);
  for (int64_t i = 0; i < z_o.numel(); ++i) EXPECT_EQ(slot_o.at(i), z_o.at(i));
  Tensor slot_p = extract_slot(asm_.z_in, kSlotPerson);
  for (int64_t i = 0; i < z_a.numel(); ++i) EXPECT_EQ(slot_p.at(i), z_a.at(i));
  Tensor slot_i = extract_slot(asm_.z_in, kSlotInner);
  for (int64_t i = 0; i < z_iv.numel(); ++i) EXPECT_EQ(slot_i.at(i), z_iv.at(i));

  // the all-zero mask slots contribute nothing
  double m_sum = 0.0, ma_sum = 0.0;
  for (int64_t i = 0; i < asm_.m_in.numel(); ++i) m_sum += asm_.m_in.at(i);
  for (int64_t i = 0; i < m_a.numel(); ++i) ma_sum += m_a.at(i);
  EXPECT_DOUBLE_EQ(m_sum, ma_sum);

  EXPECT_THROW(assemble(z_a, Tensor::zeros({4, 4, 8}), z_iv, m_a), InputError);
  EXPECT_THROW(assemble(z_a, z_o, z_iv, Tensor::zeros({1, 4, 4})), InputError);
}

TEST(ConditionalDropout, EdgeProbabilities) {
  Rng rng(7);
  Tensor z_o = Tensor::filled({4, 2, 2}, 1.5);
  Tensor z_iv = Tensor::filled({4, 2, 2}, -2.5);
  for (int i = 0; i < 50; ++i) {
    auto [a, b] = conditional_dropout(z_o, z_iv, rng, 0.0);
    EXPECT_EQ(a.at(0), 1.5);
    EXPECT_EQ(b.at(0), -2.5);
    auto [c, d] = conditional_dropout(z_o, z_iv, rng, 1.0);
    EXPECT_EQ(c.at(0), 0.0);
    EXPECT_EQ(d.at(0), 0.0);
  }
  EXPECT_THROW(conditional_dropout(z_o, z_iv, rng, -0.1), UsageError);
  EXPECT_THROW(conditional_dropout(z_o, z_iv, rng, 1.5), UsageError);
}

TEST(ConditionalDropout, EmpiricalRateAtTenPercent) {
  Rng rng(8);
  Tensor z_o = Tensor::filled({1, 1, 1}, 1.0);
  Tensor z_iv = Tensor::filled({1, 1, 1}, 1.0);
  int dropped = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto [a, b] = conditional_dropout(z_o, z_iv, rng, 0.1);
    if (a.at(0) == 0.0) {
      EXPECT_EQ(b.at(0), 0.0);  // both replaced together
      ++dropped;
    }
  }
  double rate = static_cast<double>(dropped) / n;
  EXPECT_GE(rate, 0.09);
  EXPECT_LE(rate, 0.11);
}

TEST(CfgCombine, AlgebraicIdentities) {
  Rng rng(9);
  Tensor eu = Tensor::randn({4, 3, 3}, rng);
  Tensor ec = Tensor::randn({4, 3, 3}, rng);
  Tensor at1 = cfg_combine(eu, ec, 1.0);
  Tensor at0 = cfg_combine(eu, ec, 0.0);
  for (int64_t i = 0; i < eu.numel(); ++i) {
    EXPECT_DOUBLE_EQ(at1.at(i), ec.at(i));  // s=1 -> conditional
    EXPECT_DOUBLE_EQ(at0.at(i), eu.at(i));  // s=0 -> unconditional
  }
  // agreement fixed point: identical branches for any s
  for (double s : {0.0, 0.7, 1.0, 2.5, 7.0}) {
    Tensor same = cfg_combine(ec, ec, s);
    for (int64_t i = 0; i < ec.numel(); ++i) EXPECT_DOUBLE_EQ(same.at(i), ec.at(i));
  }
  // zero unconditional, v conditional, s=2.5 -> 2.5 v
  Tensor zero = Tensor::zeros(ec.shape());
  Tensor scaled = cfg_combine(zero, ec, 2.5);
  for (int64_t i = 0; i < ec.numel(); ++i)
    EXPECT_DOUBLE_EQ(scaled.at(i), 2.5 * ec.at(i));
  EXPECT_THROW(cfg_combine(eu, Tensor::zeros({4, 2, 2}), 1.0), InputError);
}

TEST(CfgCombine, AffineInScale) {
  Rng rng(10);
  Tensor eu = Tensor::randn({2, 2, 2}, rng);
  Tensor ec = Tensor::randn({2, 2, 2}, rng);
  Tensor a = cfg_combine(eu, ec, 0.0);
  Tensor b = cfg_combine(eu, ec, 2.0);
  Tensor mid = cfg_combine(eu, ec, 1.0);  // midpoint of s=0 and s=2
  for (int64_t i = 0; i < eu.numel(); ++i)
    EXPECT_NEAR(mid.at(i), 0.5 * (a.at(i) + b.at(i)), 1e-12);
}

TEST(UNet, ShapeAndTimestepSensitivity) {
  ParamStore store;
  Rng rng(11);
  UNetConfig cfg;
  cfg.base_channels = 4;
  cfg.temb_dim = 8;
  DenoiserUNet unet = DenoiserUNet::create(store, cfg, rng);
  // make zero-initialized closers active so the timestep path matters
  for (const auto& [id, p] : store.entries())
    if (id.find("conv2.w") != std::string::npos || id.find("out.w") != std::string::npos) {
      Tensor t = p;
      for (auto& v : t.data()) v = rng.uniform(-0.2, 0.2);
    }
  Tensor x = Tensor::randn({9, 4, 12}, rng);
  Tensor e1 = unet.forward(x, 1);
  Tensor e2 = unet.forward(x, 17);
  EXPECT_EQ(e1.shape(), (Shape{4, 4, 12}));
  EXPECT_GT(testutil::max_abs_diff(e1.data(), e2.data()), 1e-9);
  EXPECT_THROW(unet.forward(Tensor::zeros({8, 4, 12}), 1), InputError);
  EXPECT_THROW(unet.forward(Tensor::zeros({9, 6, 12}), 1), InputError);
}

TEST(UNet, GradientsMatchFiniteDifferences) {
  ParamStore store;
  Rng rng(12);
  UNetConfig cfg;
  cfg.base_channels = 2;
  cfg.temb_dim = 4;
  DenoiserUNet unet = DenoiserUNet::create(store, cfg, rng);
  for (const auto& [id, p] : store.entries())
    if (id.find("conv2.w") != std::string::npos ||
        id.find("proj.w") != std::string::npos ||
        id.find("out.w") != std::string::npos) {
      Tensor t = p;
      for (auto& v : t.data()) v = rng.uniform(-0.2, 0.2);
    }
  Tensor x = Tensor::randn({9, 4, 4}, rng);
  Tensor target = Tensor::randn({4, 4, 4}, rng);
  auto loss = [&]() { return mse(unet.forward(x, 7), target); };
  std::vector<Tensor> leaves;
  for (const auto& [id, p] : store.entries()) leaves.push_back(p);
  EXPECT_LT(gradcheck_max_rel_error(loss, leaves), 1e-4);
}

TEST(DenoiseLoss, StubbedPerfectPredictorLeavesOnlyOcclusionTerm) {
  ParamStore store;
  Rng rng(13);
  PipelineConfig cfg = tiny_pipeline_config();
  cfg.cond_dropout = 0.0;
  Pipeline pipe = Pipeline::create(store, cfg, rng);
  Quadruplet q = tiny_sample(21);

  const uint64_t seed = 99;
  Rng loss_rng(seed);
  // The stub replays the loss path's RNG: first the timestep draw, then the
  // noise draws, reconstructing exactly the eps that was injected.
  auto stub = [&](const Tensor& input, int t) {
    Rng replay(seed);
    int t2 = 1 + static_cast<int>(replay.uniform_index(
                 static_cast<uint64_t>(pipe.schedule.T)));
    EXPECT_EQ(t2, t);
    Tensor eps = Tensor::zeros({4, input.shape()[1], input.shape()[2]});
    for (double& v : eps.data()) v = replay.normal();
    return eps;
  };
  LossBreakdown parts = pipe.denoise_loss_with(stub, q, loss_rng);
  EXPECT_DOUBLE_EQ(parts.gmf, 0.0);
  EXPECT_GT(parts.occ, 0.0);
  EXPECT_NEAR(parts.total.item(), 0.1 * parts.occ, 1e-12);  // lambda2 = 0.1
}

TEST(DenoiseLoss, ConditionChannelsNeverNoised) {
  ParamStore store;
  Rng rng(14);
  PipelineConfig cfg = tiny_pipeline_config();
  cfg.cond_dropout = 0.0;
  Pipeline pipe = Pipeline::create(store, cfg, rng);
  Quadruplet q = tiny_sample(22);

  // Clean conditioning, computed independently of the loss path.
  Tensor z_a, z_o, z_i;
  {
    NoGradGuard ng;
    z_a = pipe.codec.encode(q.agnostic).data;
    z_o = pipe.codec.encode(q.outer).data;
    z_i = pipe.codec.encode(q.inner).data;
  }
  Tensor z_iv = pipe.refined_inner_latent(q, z_i).detached();
  Assembly want = assemble(z_a, z_o, z_iv, downsample_mask_max8(q.upper_mask));

  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng loss_rng(seed);
    Tensor captured;
    auto stub = [&](const Tensor& input, int) {
      captured = input.detached();
      return Tensor::zeros({4, input.shape()[1], input.shape()[2]});
    };
    pipe.denoise_loss_with(stub, q, loss_rng);
    ASSERT_EQ(captured.shape(), (Shape{9, want.z_in.shape()[1], want.z_in.shape()[2]}));
    const int64_t plane = static_cast<int64_t>(want.z_in.shape()[1]) * want.z_in.shape()[2];
    for (int c = 0; c < 4; ++c)
      for (int64_t p = 0; p < plane; ++p)
        ASSERT_EQ(captured.at((4 + c) * plane + p), want.z_in.at(c * plane + p));
    for (int64_t p = 0; p < plane; ++p)
      ASSERT_EQ(captured.at(8 * plane + p), want.m_in.at(p));
  }
}

TEST(DenoiseLoss, LambdaTwoDefaultsAndAblations) {
  PipelineConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lambda2, 0.1);
  cfg.ablation = Ablation::kGol;
  EXPECT_DOUBLE_EQ(cfg.effective_lambda2(), 0.0);
  cfg.ablation = Ablation::kBase;
  EXPECT_FALSE(cfg.has_gol());
  cfg.ablation = Ablation::kGolLocc;
  EXPECT_DOUBLE_EQ(cfg.effective_lambda2(), 0.1);
  EXPECT_EQ(ablation_from_name("gol+locc"), Ablation::kGolLocc);
  EXPECT_THROW(ablation_from_name("nope"), ConfigError);
}

TEST(DenoiseLoss, GradientReachesGolThroughFullPipeline) {
  ParamStore store;
  Rng rng(15);
  PipelineConfig cfg = tiny_pipeline_config();
  cfg.cond_dropout = 0.0;
  Pipeline pipe = Pipeline::create(store, cfg, rng);
  Quadruplet q = tiny_sample(23);

  const uint64_t seed = 7;
  Rng loss_rng(seed);
  store.zero_grads();
  LossBreakdown parts = pipe.denoise_loss(q, loss_rng);
  backward(parts.total);
  double gol_grad_norm = 0.0, unet_grad_norm = 0.0;
  for (const auto& [id, p] : store.entries()) {
    double s = 0.0;
    for (double g : p.grad()) s += g * g;
    if (id.rfind("gol.", 0) == 0) gol_grad_norm += s;
    else unet_grad_norm += s;
  }
  EXPECT_GT(gol_grad_norm, 0.0);
  EXPECT_GT(unet_grad_norm, 0.0);
}

TEST(DenoiseLoss, FullPipelineGradientsMatchFiniteDifferences) {
  // Smallest full configuration: every parameter of GOL + UNet against
  // central differences through the complete loss.
  ParamStore store;
  Rng rng(16);
  PipelineConfig cfg;
  cfg.gol.channels = {1, 1, 1, 1, 1};
  cfg.unet.base_channels = 2;
  cfg.unet.temb_dim = 4;
  cfg.schedule_steps = 40;
  cfg.cond_dropout = 0.0;
  Pipeline pipe = Pipeline::create(store, cfg, rng);
  for (const auto& [id, p] : store.entries())
    if (id.find("conv2.w") != std::string::npos ||
        id.find("proj.w") != std::string::npos ||
        id.find("out.w") != std::string::npos) {
      Tensor t = p;
      for (auto& v : t.data()) v = rng.uniform(-0.2, 0.2);
    }
  Quadruplet q = tiny_sample(24);
  const uint64_t seed = 3;
  auto loss = [&]() {
    Rng loss_rng(seed);  // same timestep and noise draw each evaluation
    return pipe.denoise_loss(q, loss_rng).total;
  };
  std::vector<Tensor> leaves;
  for (const auto& [id, p] : store.entries()) leaves.push_back(p);
  EXPECT_LT(gradcheck_max_rel_error(loss, leaves), 1e-4);
}

TEST(Sample, DeterministicAndShaped) {
  ParamStore store;
  Rng rng(17);
  PipelineConfig cfg = tiny_pipeline_config();
  Pipeline pipe = Pipeline::create(store, cfg, rng);
  Quadruplet q = tiny_sample(25);

  Rng s1(42), s2(42), s3(43);
  Tensor a = pipe.sample(q, 2.5, s1);
  Tensor b = pipe.sample(q, 2.5, s2);
  Tensor c = pipe.sample(q, 2.5, s3);
  EXPECT_EQ(a.shape(), q.person.shape());
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()),
            std::vector<double>(b.data().begin(), b.data().end()));  // bit-exact
  EXPECT_NE(std::vector<double>(a.data().begin(), a.data().end()),
            std::vector<double>(c.data().begin(), c.data().end()));

  // deterministic sampler variant is seed-independent modulo the start noise
  Rng d1(5), d2(5);
  Tensor d = pipe.sample(q, 1.0, d1, SamplerKind::kDdimDeterministic, 8);
  Tensor e = pipe.sample(q, 1.0, d2, SamplerKind::kDdimDeterministic, 8);
  EXPECT_EQ(std::vector<double>(d.data().begin(), d.data().end()),
            std::vector<double>(e.data().begin(), e.data().end()));
  EXPECT_THROW(pipe.sample(q, -1.0, s1), UsageError);
}
