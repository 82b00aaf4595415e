#pragma once

#include <functional>
#include <string>
#include <vector>

#include "layerfit/pipeline.hpp"

namespace layerfit {

// Central finite differences vs the analytic gradients of a scalar-valued
// function re-evaluated from the given leaves; returns the max relative
// error over all leaf elements.
inline double finite_difference_max_rel_error(
    const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
    double h = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);

  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      double keep = leaf.at(i);
      double lp, lm;
      {
        NoGradGuard ng;
        leaf.at(i) = keep + h;
        lp = loss_fn().item();
        leaf.at(i) = keep - h;
        lm = loss_fn().item();
      }
      leaf.at(i) = keep;
      double fd = (lp - lm) / (2.0 * h);
      double a = analytic[static_cast<size_t>(i)];
      double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int seeds = 0;
  bool pass = false;
};

// Finite-difference verification of every differentiable op and of the GOL
// and denoiser networks end to end (tiny configurations).
inline std::vector<GradcheckResult> run_gradcheck_suites(int seeds = 20,
                                                         double tol = 1e-4) {
  std::vector<GradcheckResult> results;

  auto run = [&](const std::string& name, int n_seeds,
                 const std::function<double(uint64_t)>& one_seed) {
    GradcheckResult r;
    r.name = name;
    r.seeds = n_seeds;
    for (uint64_t s = 0; s < static_cast<uint64_t>(n_seeds); ++s)
      r.max_rel_error = std::max(r.max_rel_error, one_seed(s));
    r.pass = r.max_rel_error < tol;
    results.push_back(r);
  };

  // Elementwise and reduction ops.
  run("elementwise(add,sub,mul,scale,sigmoid,silu)", seeds, [&](uint64_t s) {
    Rng rng(s);
    Tensor a = Tensor::randn({2, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({2, 5}, rng, 1.0, true);
    auto loss = [&]() {
      Tensor t = mul(add(a, b), sub(a, scale(b, 0.3)));
      return mean(silu(sigmoid(t)));
    };
    return finite_difference_max_rel_error(loss, {a, b});
  });

  run("reductions(sum,mean,mse,l2_norm)", seeds, [&](uint64_t s) {
    Rng rng(100 + s);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    auto loss = [&]() {
      return add(add(mse(a, b), l2_norm(a)), scale(add(sum(b), mean(a)), 0.1));
    };
    return finite_difference_max_rel_error(loss, {a, b});
  });

  run("matmul+transpose+softmax+reshape", seeds, [&](uint64_t s) {
    Rng rng(200 + s);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 3}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 3}, rng, 1.0);
    auto loss = [&]() {
      Tensor scores = softmax_rows(matmul(a, b));
      return sum(mul(scores, w));
    };
    double e1 = finite_difference_max_rel_error(loss, {a, b});
    auto loss2 = [&]() { return l2_norm(reshape(transpose2d(a), {12})); };
    return std::max(e1, finite_difference_max_rel_error(loss2, {a}));
  });

  run("linear", seeds, [&](uint64_t s) {
    Rng rng(300 + s);
    Tensor x = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor w = Tensor::randn({2, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({2}, rng, 1.0, true);
    auto loss = [&]() { return mean(silu(linear(x, w, b))); };
    return finite_difference_max_rel_error(loss, {x, w, b});
  });

  run("conv2d(stride 1/2, pad 0/1, bias)", seeds, [&](uint64_t s) {
    Rng rng(400 + s);
    Tensor x = Tensor::randn({2, 5, 5}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, true);
    Tensor b = Tensor::randn({3}, rng, 0.5, true);
    int stride = 1 + static_cast<int>(s % 2);
    int pad = static_cast<int>(s % 2);
    auto loss = [&]() { return mean(mul(conv2d(x, w, b, stride, pad),
                                        conv2d(x, w, b, stride, pad))); };
    return finite_difference_max_rel_error(loss, {x, w, b});
  });

  run("upsample+concat+slice+broadcast+bias", seeds, [&](uint64_t s) {
    Rng rng(500 + s);
    Tensor x = Tensor::randn({2, 3, 3}, rng, 1.0, true);
    Tensor y = Tensor::randn({2, 3, 2}, rng, 1.0, true);
    Tensor m = Tensor::uniform({1, 3, 5}, rng, 0.0, 1.0, true);
    Tensor b = Tensor::randn({2}, rng, 1.0, true);
    auto loss = [&]() {
      Tensor j = concat_width({x, y});
      Tensor k = broadcast_mul(m, add_channel_bias(j, b));
      Tensor u = upsample_nearest2(slice_width(k, 1, 3));
      return l2_norm(concat_channel({u, u}));
    };
    return finite_difference_max_rel_error(loss, {x, y, m, b});
  });

  run("rms_norm_channels", seeds, [&](uint64_t s) {
    Rng rng(550 + s);
    Tensor x = Tensor::randn({3, 3, 3}, rng, 1.5, true);
    Tensor g = Tensor::randn({3}, rng, 1.0, true);
    auto loss = [&]() { return mean(mul(rms_norm_channels(x, g), x)); };
    return finite_difference_max_rel_error(loss, {x, g});
  });

  run("residual_block", seeds, [&](uint64_t s) {
    ParamStore store;
    Rng rng(600 + s);
    ResidualBlock blk = ResidualBlock::create(store, "blk", 2, rng);
    Tensor w2 = blk.w2;
    for (auto& v : w2.data()) v = rng.uniform(-0.3, 0.3);
    Tensor x = Tensor::randn({2, 4, 4}, rng, 1.0, true);
    auto loss = [&]() { return mean(mul(blk.forward(x), blk.forward(x))); };
    return finite_difference_max_rel_error(loss, {x, blk.w1, blk.b1, blk.w2, blk.b2});
  });

  run("timestep_resblock+self_attention", seeds, [&](uint64_t s) {
    ParamStore store;
    Rng rng(700 + s);
    TimestepResBlock blk = TimestepResBlock::create(store, "blk", 2, 4, rng);
    SelfAttentionBlock attn = SelfAttentionBlock::create(store, "attn", 2, rng);
    for (const auto& [id, p] : store.entries())
      if (id.find("conv2.w") != std::string::npos ||
          id.find("proj.w") != std::string::npos) {
        Tensor t = p;
        for (auto& v : t.data()) v = rng.uniform(-0.3, 0.3);
      }
    Tensor x = Tensor::randn({2, 3, 3}, rng, 1.0, true);
    Tensor temb = timestep_embedding(5, 4);
    auto loss = [&]() { return l2_norm(attn.forward(blk.forward(x, temb))); };
    std::vector<Tensor> leaves = {x};
    for (const auto& [id, p] : store.entries()) leaves.push_back(p);
    return finite_difference_max_rel_error(loss, leaves);
  });

  // Full GOL network through the occlusion loss.
  run("gol_network(L_OCC)", seeds, [&](uint64_t s) {
    ParamStore store;
    Rng rng(800 + s);
    GolConfig cfg;
    cfg.channels = {1, 1, 2, 2, 2};
    GolModel m = GolModel::create(store, cfg, rng);
    for (const auto& [id, p] : store.entries())
      if (id.find("conv2.w") != std::string::npos) {
        Tensor t = p;
        for (auto& v : t.data()) v = rng.uniform(-0.2, 0.2);
      }
    LatentCodec codec;
    Tensor g_i = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0);
    Tensor g_o = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0);
    Tensor x_pi = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0);
    Tensor z_i = codec.encode(g_i).data;
    auto loss = [&]() {
      Tensor a = m.attention_map(g_i, g_o);
      return occlusion_loss(broadcast_mul(a, z_i), x_pi, codec);
    };
    std::vector<Tensor> leaves;
    for (const auto& [id, p] : store.entries()) leaves.push_back(p);
    return finite_difference_max_rel_error(loss, leaves);
  });

  // Full denoiser through the noise-prediction loss.
  run("gmf_unet(denoise mse)", seeds, [&](uint64_t s) {
    ParamStore store;
    Rng rng(900 + s);
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
    int t = 1 + static_cast<int>(s % 37);
    auto loss = [&]() { return mse(unet.forward(x, t), target); };
    std::vector<Tensor> leaves;
    for (const auto& [id, p] : store.entries()) leaves.push_back(p);
    return finite_difference_max_rel_error(loss, leaves);
  });

  // Complete pipeline loss: gradient flows into GOL and the UNet at once.
  run("full_pipeline(denoise_loss)", std::max(1, seeds / 4), [&](uint64_t s) {
    ParamStore store;
    Rng rng(1000 + s);
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
    SynthConfig dcfg;
    dcfg.size = 32;
    dcfg.seed = 7000 + s;
    Quadruplet q = generate_sample(dcfg, 0);
    auto loss = [&]() {
      Rng loss_rng(s);
      return pipe.denoise_loss(q, loss_rng).total;
    };
    std::vector<Tensor> leaves;
    for (const auto& [id, p] : store.entries()) leaves.push_back(p);
    return finite_difference_max_rel_error(loss, leaves);
  });

  return results;
}

}  // namespace layerfit
