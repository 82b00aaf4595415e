#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "layerfit/dataset.hpp"
#include "layerfit/optim.hpp"
#include "layerfit/pipeline.hpp"

namespace layerfit {

inline constexpr const char* kVersionString = "layerfit-0.1.0";

struct SampleConfig {
  double guidance_scale = 2.5;
  std::string sampler = "ddpm";  // ddpm | ddim
  int ddim_steps = 50;
  uint64_t seed = 0;
  int count = 0;  // 0 = whole split
};

struct EvalConfig {
  double lambda1 = 3.0;
  int band_radius = 3;
  std::string norm = "per-pixel";  // per-pixel | raw
};

struct TrainSection {
  int steps = 3000;
  int batch_size = 4;
  AdamWConfig optimizer;
  uint64_t seed = 0;
  std::string ablation = "gol+locc";
};

// Whole-run configuration; JSON document with sections
// {data, model, train, sample, eval}. Unknown keys are rejected.
struct RunConfig {
  SynthConfig data;
  PipelineConfig model;
  TrainSection train;
  SampleConfig sample;
  EvalConfig eval;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("unparseable JSON in " + path.string());
    return from_json(j);
  }

  nlohmann::json to_json() const;

  void validate() const {
    data.validate();
    model.gol.validate();
    model.unet.validate();
    if (train.steps < 1 || train.batch_size < 1)
      throw ConfigError("train: steps and batch_size must be positive");
    if (sample.sampler != "ddpm" && sample.sampler != "ddim")
      throw ConfigError("sample: sampler must be ddpm or ddim");
    if (eval.norm != "per-pixel" && eval.norm != "raw")
      throw ConfigError("eval: norm must be per-pixel or raw");
    if (eval.band_radius < 1) throw ConfigError("eval: band_radius must be >= 1");
    ablation_from_name(train.ablation);  // throws on unknown
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object())
    throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown config key '" + where + "." + key + "'");
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using detail::read_into;
  using detail::reject_unknown_keys;
  RunConfig cfg;
  reject_unknown_keys(j, {"data", "model", "train", "sample", "eval"}, "<root>");

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown_keys(d,
                        {"size", "occlusion_min", "occlusion_max", "seed",
                         "shapes", "textures", "train_fraction"},
                        "data");
    read_into(d, "size", cfg.data.size);
    read_into(d, "occlusion_min", cfg.data.occlusion_min);
    read_into(d, "occlusion_max", cfg.data.occlusion_max);
    read_into(d, "seed", cfg.data.seed);
    read_into(d, "shapes", cfg.data.shapes);
    read_into(d, "textures", cfg.data.textures);
    read_into(d, "train_fraction", cfg.data.train_fraction);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown_keys(m, {"codec", "gol", "unet", "schedule_steps", "lambda2",
                            "cond_dropout"},
                        "model");
    if (m.contains("codec")) {
      const auto& c = m.at("codec");
      reject_unknown_keys(c, {"mode", "projection_seed"}, "model.codec");
      std::string mode = "fixed-orthogonal";
      read_into(c, "mode", mode);
      if (mode == "fixed-orthogonal")
        cfg.model.codec.mode = CodecMode::kFixedOrthogonal;
      else if (mode == "learned")
        cfg.model.codec.mode = CodecMode::kLearned;
      else
        throw ConfigError("model.codec.mode must be fixed-orthogonal or learned");
      read_into(c, "projection_seed", cfg.model.codec.projection_seed);
    }
    if (m.contains("gol")) {
      const auto& g = m.at("gol");
      reject_unknown_keys(g, {"channels", "squared_occlusion_loss"}, "model.gol");
      read_into(g, "channels", cfg.model.gol.channels);
      read_into(g, "squared_occlusion_loss", cfg.model.gol.squared_occlusion_loss);
    }
    if (m.contains("unet")) {
      const auto& u = m.at("unet");
      reject_unknown_keys(u, {"base_channels", "temb_dim"}, "model.unet");
      read_into(u, "base_channels", cfg.model.unet.base_channels);
      read_into(u, "temb_dim", cfg.model.unet.temb_dim);
    }
    read_into(m, "schedule_steps", cfg.model.schedule_steps);
    read_into(m, "lambda2", cfg.model.lambda2);
    read_into(m, "cond_dropout", cfg.model.cond_dropout);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown_keys(t,
                        {"steps", "batch_size", "learning_rate", "beta1", "beta2",
                         "eps", "weight_decay", "seed", "ablation"},
                        "train");
    read_into(t, "steps", cfg.train.steps);
    read_into(t, "batch_size", cfg.train.batch_size);
    read_into(t, "learning_rate", cfg.train.optimizer.learning_rate);
    read_into(t, "beta1", cfg.train.optimizer.beta1);
    read_into(t, "beta2", cfg.train.optimizer.beta2);
    read_into(t, "eps", cfg.train.optimizer.eps);
    read_into(t, "weight_decay", cfg.train.optimizer.weight_decay);
    read_into(t, "seed", cfg.train.seed);
    read_into(t, "ablation", cfg.train.ablation);
  }

  if (j.contains("sample")) {
    const auto& s = j.at("sample");
    reject_unknown_keys(
        s, {"guidance_scale", "sampler", "ddim_steps", "seed", "count"}, "sample");
    read_into(s, "guidance_scale", cfg.sample.guidance_scale);
    read_into(s, "sampler", cfg.sample.sampler);
    read_into(s, "ddim_steps", cfg.sample.ddim_steps);
    read_into(s, "seed", cfg.sample.seed);
    read_into(s, "count", cfg.sample.count);
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown_keys(e, {"lambda1", "band_radius", "norm"}, "eval");
    read_into(e, "lambda1", cfg.eval.lambda1);
    read_into(e, "band_radius", cfg.eval.band_radius);
    read_into(e, "norm", cfg.eval.norm);
  }

  cfg.model.ablation = ablation_from_name(cfg.train.ablation);
  cfg.validate();
  return cfg;
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["data"] = {{"size", data.size},
               {"occlusion_min", data.occlusion_min},
               {"occlusion_max", data.occlusion_max},
               {"seed", data.seed},
               {"shapes", data.shapes},
               {"textures", data.textures},
               {"train_fraction", data.train_fraction}};
  j["model"] = {
      {"codec",
       {{"mode", model.codec.mode == CodecMode::kLearned ? "learned"
                                                         : "fixed-orthogonal"},
        {"projection_seed", model.codec.projection_seed}}},
      {"gol",
       {{"channels", model.gol.channels},
        {"squared_occlusion_loss", model.gol.squared_occlusion_loss}}},
      {"unet",
       {{"base_channels", model.unet.base_channels},
        {"temb_dim", model.unet.temb_dim}}},
      {"schedule_steps", model.schedule_steps},
      {"lambda2", model.lambda2},
      {"cond_dropout", model.cond_dropout}};
  j["train"] = {{"steps", train.steps},
                {"batch_size", train.batch_size},
                {"learning_rate", train.optimizer.learning_rate},
                {"beta1", train.optimizer.beta1},
                {"beta2", train.optimizer.beta2},
                {"eps", train.optimizer.eps},
                {"weight_decay", train.optimizer.weight_decay},
                {"seed", train.seed},
                {"ablation", train.ablation}};
  j["sample"] = {{"guidance_scale", sample.guidance_scale},
                 {"sampler", sample.sampler},
                 {"ddim_steps", sample.ddim_steps},
                 {"seed", sample.seed},
                 {"count", sample.count}};
  j["eval"] = {{"lambda1", eval.lambda1},
               {"band_radius", eval.band_radius},
               {"norm", eval.norm}};
  return j;
}

}  // namespace layerfit
