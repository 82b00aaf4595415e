#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "layerfit/dataset.hpp"
#include "layerfit/gmf.hpp"
#include "layerfit/gol.hpp"
#include "layerfit/unet.hpp"

namespace layerfit {

// Tab-2 style model settings: `kBase` feeds the raw inner latent with no
// occlusion module, `kGol` adds the module without its supervision,
// `kGolLocc` is the full configuration.
enum class Ablation { kBase, kGol, kGolLocc };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kBase: return "base";
    case Ablation::kGol: return "gol";
    default: return "gol+locc";
  }
}

inline Ablation ablation_from_name(const std::string& name) {
  if (name == "base") return Ablation::kBase;
  if (name == "gol") return Ablation::kGol;
  if (name == "gol+locc") return Ablation::kGolLocc;
  throw ConfigError("unknown ablation '" + name + "' (base | gol | gol+locc)");
}

enum class SamplerKind { kDdpmAncestral, kDdimDeterministic };

struct PipelineConfig {
  GolConfig gol;
  UNetConfig unet;
  CodecConfig codec;
  int schedule_steps = 200;
  double lambda2 = 0.1;       // weight of the occlusion loss
  double cond_dropout = 0.1;  // conditional dropout probability
  Ablation ablation = Ablation::kGolLocc;

  bool has_gol() const { return ablation != Ablation::kBase; }
  double effective_lambda2() const {
    return ablation == Ablation::kGolLocc ? lambda2 : 0.0;
  }
};

struct LossBreakdown {
  Tensor total;      // scalar, on tape
  double gmf = 0.0;  // noise-prediction term
  double occ = 0.0;  // occlusion term (0 when GOL is absent)
  int t = 0;         // sampled timestep
};

// The full try-on model: codec, optional occlusion module, denoiser, schedule.
struct Pipeline {
  PipelineConfig cfg;
  LatentCodec codec;
  std::optional<GolModel> gol;
  DenoiserUNet unet;
  NoiseSchedule schedule;

  static Pipeline create(ParamStore& store, const PipelineConfig& cfg, Rng& rng) {
    Pipeline p;
    p.cfg = cfg;
    p.codec = LatentCodec(cfg.codec);
    if (cfg.has_gol()) p.gol = GolModel::create(store, cfg.gol, rng);
    p.unet = DenoiserUNet::create(store, cfg.unet, rng);
    p.schedule = NoiseSchedule::linear(cfg.schedule_steps);
    return p;
  }

  static Pipeline load(const ParamStore& store, const PipelineConfig& cfg) {
    Pipeline p;
    p.cfg = cfg;
    p.codec = LatentCodec(cfg.codec);
    if (cfg.has_gol()) p.gol = GolModel::load(store, cfg.gol);
    p.unet = DenoiserUNet::load(store, cfg.unet);
    p.schedule = NoiseSchedule::linear(cfg.schedule_steps);
    return p;
  }

  // Inner-garment latent after occlusion refinement (raw latent for kBase).
  // On tape whenever GOL parameters require gradients.
  Tensor refined_inner_latent(const Quadruplet& q, const Tensor& z_i) const {
    if (!gol) return z_i;
    Tensor attention = gol->attention_map(q.inner, q.outer);
    return broadcast_mul(attention, z_i);
  }

  LossBreakdown denoise_loss(const Quadruplet& q, Rng& rng) const {
    return denoise_loss_with(
        [this](const Tensor& input, int t) { return unet.forward(input, t); }, q,
        rng);
  }

  // Training loss with a pluggable noise predictor (the UNet in production;
  // tests may stub it). Builds: latents via the codec, the refined inner
  // latent, the target track y0 = [eps(x_p), z_o, z_iv], a noised y_t at a
  // uniform t, and the 9-channel denoiser input y_t (+) z_in (+) m_in.
  LossBreakdown denoise_loss_with(
      const std::function<Tensor(const Tensor&, int)>& predictor,
      const Quadruplet& q, Rng& rng) const {
    Tensor z_a, z_o, z_i, z_person;
    {
      NoGradGuard ng;
      z_a = codec.encode(q.agnostic).data;
      z_o = codec.encode(q.outer).data;
      z_i = codec.encode(q.inner).data;
      z_person = codec.encode(q.person).data;
    }
    Tensor m_a = downsample_mask_max8(q.upper_mask);

    Tensor z_iv = refined_inner_latent(q, z_i);

    // Target track and its noised version at a uniformly sampled step.
    Tensor y0 = concat_width({z_person, z_o, z_iv});
    int t = 1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.T)));
    auto [y_t, eps] = forward_noise(y0, t, schedule, rng);

    // Conditioning channels: garment slots may drop out; never noised.
    auto [z_o_c, z_iv_c] = conditional_dropout(z_o, z_iv, rng, cfg.cond_dropout);
    Assembly in = assemble(z_a, z_o_c, z_iv_c, m_a);
    Tensor input = concat_channel({y_t, in.z_in, in.m_in});

    Tensor eps_hat = predictor(input, t);
    check_same_shape(eps_hat, eps, "denoise_loss prediction");
    Tensor loss_gmf = mse(eps, eps_hat);

    LossBreakdown out;
    out.t = t;
    out.gmf = loss_gmf.item();
    double lambda2 = cfg.effective_lambda2();
    if (gol && lambda2 > 0.0) {
      Tensor loss_occ = occlusion_loss(z_iv, q.inner_crop, codec,
                                       cfg.gol.squared_occlusion_loss);
      out.occ = loss_occ.item();
      out.total = add(loss_gmf, scale(loss_occ, lambda2));
    } else {
      out.total = loss_gmf;
    }
    if (!out.total.all_finite())
      throw UsageError("denoise_loss: non-finite loss at t=" + std::to_string(t));
    return out;
  }

  // Reverse diffusion from pure noise on the target track, conditions held
  // fixed, classifier-free guidance with scale s at every step. Returns the
  // decoded person slot.
  Tensor sample(const Quadruplet& q, double s, Rng& rng,
                SamplerKind kind = SamplerKind::kDdpmAncestral,
                int ddim_steps = 50) const {
    if (s < 0.0) throw UsageError("sample: guidance scale must be >= 0");
    NoGradGuard ng;
    Tensor z_a = codec.encode(q.agnostic).data;
    Tensor z_o = codec.encode(q.outer).data;
    Tensor z_i = codec.encode(q.inner).data;
    Tensor m_a = downsample_mask_max8(q.upper_mask);
    Tensor z_iv = refined_inner_latent(q, z_i);

    Assembly cond = assemble(z_a, z_o, z_iv, m_a);
    // Unconditional branch: zero the garment slots, keep person and mask.
    Tensor zeros = Tensor::zeros(z_o.shape());
    Assembly uncond = assemble(z_a, zeros, zeros, m_a);

    Tensor y = Tensor::zeros(cond.z_in.shape());
    for (double& v : y.data()) v = rng.normal();

    auto guided_eps = [&](const Tensor& y_t, int t) {
      Tensor eps_c = unet.forward(concat_channel({y_t, cond.z_in, cond.m_in}), t);
      Tensor eps_u = unet.forward(concat_channel({y_t, uncond.z_in, uncond.m_in}), t);
      return cfg_combine(eps_u, eps_c, s);
    };

    if (kind == SamplerKind::kDdpmAncestral) {
      for (int t = schedule.T; t >= 1; --t) {
        Tensor eps = guided_eps(y, t);
        double ab = schedule.alpha_bar_at(t);
        double a = schedule.alpha_at(t);
        double b = schedule.beta_at(t);
        Tensor mean = scale(sub(y, scale(eps, b / std::sqrt(1.0 - ab))),
                            1.0 / std::sqrt(a));
        if (t > 1) {
          double var = (1.0 - schedule.alpha_bar_prev(t)) / (1.0 - ab) * b;
          Tensor noise = Tensor::zeros(y.shape());
          for (double& v : noise.data()) v = rng.normal();
          y = add(mean, scale(noise, std::sqrt(var)));
        } else {
          y = mean;
        }
      }
    } else {
      // Deterministic DDIM over an evenly strided subset of steps.
      int n = std::min(std::max(1, ddim_steps), schedule.T);
      std::vector<int> taus(n);
      for (int i = 0; i < n; ++i)
        taus[i] = 1 + static_cast<int>((static_cast<int64_t>(schedule.T - 1) * i) / std::max(1, n - 1));
      if (n == 1) taus[0] = schedule.T;
      for (int i = n - 1; i >= 0; --i) {
        int t = taus[i];
        int t_prev = i > 0 ? taus[i - 1] : 0;
        Tensor eps = guided_eps(y, t);
        double ab = schedule.alpha_bar_at(t);
        double ab_prev = t_prev == 0 ? 1.0 : schedule.alpha_bar_at(t_prev);
        Tensor x0 = scale(sub(y, scale(eps, std::sqrt(1.0 - ab))),
                          1.0 / std::sqrt(ab));
        y = add(scale(x0, std::sqrt(ab_prev)),
                scale(eps, std::sqrt(1.0 - ab_prev)));
      }
    }

    Tensor person_latent = extract_slot(y, kSlotPerson);
    return codec.decode(LatentImage{person_latent, q.height(), q.width()});
  }
};

}  // namespace layerfit
