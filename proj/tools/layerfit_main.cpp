// layerfit: batch pipeline for layered try-on experiments.
//
// Subcommands: gen-data, train, infer, eval, gradcheck. Progress goes to
// stderr; results are written to files in the run directory.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "layerfit/checkpoint.hpp"
#include "layerfit/config.hpp"
#include "layerfit/eval.hpp"
#include "layerfit/gradcheck.hpp"
#include "layerfit/train.hpp"

namespace fs = std::filesystem;
using namespace layerfit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitVerification = 5;

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        uint64_t seed, const RunConfig& cfg,
                        nlohmann::json extra = {}) {
  nlohmann::json j;
  j["version"] = kVersionString;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = cfg.to_json();
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(out_dir / "run.json");
  out << j.dump(2) << "\n";
}

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::from_file(path);
}

std::map<std::string, Tensor> checkpoint_map(const ParamStore& store,
                                             const Pipeline& pipe) {
  std::map<std::string, Tensor> tensors(store.entries().begin(),
                                        store.entries().end());
  if (pipe.codec.mode() == CodecMode::kFixedOrthogonal)
    tensors.emplace("codec.projection", pipe.codec.projection());
  return tensors;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 int count) {
  RunConfig cfg = load_config_or_default(config_path);
  if (count < 1) throw ConfigError("--count must be >= 1");
  std::cerr << "generating " << count << " samples (size " << cfg.data.size
            << ", seed " << cfg.data.seed << ")\n";
  auto samples = generate(cfg.data, count);
  fs::create_directories(out_dir);
  save_dataset(samples, out_dir, &cfg.data);
  write_run_manifest(out_dir, "gen-data", cfg.data.seed, cfg,
                     {{"count", count}});
  std::cerr << "wrote dataset to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& ablation_flag) {
  RunConfig cfg = load_config_or_default(config_path);
  if (!ablation_flag.empty()) {
    cfg.train.ablation = ablation_flag;
    cfg.model.ablation = ablation_from_name(ablation_flag);
  }
  LoadResult loaded = load_dataset(data_dir);
  for (const auto& issue : loaded.issues)
    std::cerr << "warning: sample " << issue.sample_id << ": " << issue.message
              << "\n";
  auto train_set = split_of(loaded.samples, "train");
  if (train_set.empty()) throw DataError("no train split samples in " + data_dir);
  std::cerr << "training on " << train_set.size() << " samples, ablation "
            << cfg.train.ablation << ", " << cfg.train.steps << " steps\n";

  ParamStore store;
  Rng init_rng(cfg.train.seed);
  Pipeline pipe = Pipeline::create(store, cfg.model, init_rng);

  fs::create_directories(out_dir);
  std::ofstream loss_csv(fs::path(out_dir) / "loss.csv");
  loss_csv << "step,total,gmf,occ\n";
  loss_csv.precision(10);
  auto progress = [&](const StepRecord& rec) {
    loss_csv << rec.step << "," << rec.total << "," << rec.gmf << "," << rec.occ
             << "\n";
    if (rec.step % 100 == 0)
      std::cerr << "step " << rec.step << " loss " << rec.total << "\n";
  };
  train_pipeline(pipe, store, train_set, cfg.train.steps, cfg.train.batch_size,
                 cfg.train.optimizer, cfg.train.seed, progress);

  fs::path ckpt = fs::path(out_dir) / "checkpoint.lft";
  save_checkpoint(ckpt, checkpoint_map(store, pipe));
  std::ofstream(fs::path(out_dir) / "config.json") << cfg.to_json().dump(2) << "\n";
  write_run_manifest(out_dir, "train", cfg.train.seed, cfg,
                     {{"checkpoint", ckpt.string()},
                      {"checkpoint_hash", file_hash_hex(ckpt)},
                      {"train_samples", train_set.size()}});
  std::cerr << "wrote " << ckpt << "\n";
  return kExitOk;
}

Pipeline load_pipeline_from_checkpoint(const std::string& checkpoint_path,
                                       RunConfig& cfg, ParamStore& store) {
  fs::path ckpt(checkpoint_path);
  if (!fs::exists(ckpt))
    throw CheckpointError("checkpoint not found: " + ckpt.string());
  fs::path cfg_path = ckpt.parent_path() / "config.json";
  if (fs::exists(cfg_path)) cfg = RunConfig::from_file(cfg_path);
  cfg.model.ablation = ablation_from_name(cfg.train.ablation);

  Rng init_rng(cfg.train.seed);
  Pipeline pipe = Pipeline::create(store, cfg.model, init_rng);
  auto loaded = load_checkpoint(ckpt);
  if (pipe.codec.mode() == CodecMode::kFixedOrthogonal) {
    auto it = loaded.find("codec.projection");
    if (it != loaded.end()) {
      const Tensor& want = pipe.codec.projection();
      if (it->second.shape() != want.shape())
        throw CheckpointError("codec projection shape mismatch in checkpoint");
      for (int64_t i = 0; i < want.numel(); ++i)
        if (it->second.at(i) != want.at(i))
          throw CheckpointError(
              "codec projection in checkpoint differs from configured seed");
      loaded.erase(it);
    }
  }
  restore_params(store, loaded);
  return pipe;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& data_dir,
              const std::string& out_dir, double scale, uint64_t seed,
              const std::string& sampler, int count, const std::string& split) {
  RunConfig cfg;
  ParamStore store;
  Pipeline pipe = load_pipeline_from_checkpoint(checkpoint_path, cfg, store);
  if (scale >= 0.0) cfg.sample.guidance_scale = scale;
  if (!sampler.empty()) cfg.sample.sampler = sampler;
  cfg.sample.seed = seed;
  cfg.validate();

  LoadResult loaded = load_dataset(data_dir);
  auto samples = split_of(loaded.samples, split);
  if (samples.empty()) throw DataError("no '" + split + "' samples in " + data_dir);
  if (count > 0 && static_cast<size_t>(count) < samples.size())
    samples.resize(static_cast<size_t>(count));

  SamplerKind kind = cfg.sample.sampler == "ddim" ? SamplerKind::kDdimDeterministic
                                                  : SamplerKind::kDdpmAncestral;
  fs::path images_dir = fs::path(out_dir) / "images";
  fs::create_directories(images_dir);
  Rng base(seed);
  nlohmann::json ids = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    Rng chain = base.child(i);  // per-chain seed from a splittable counter
    Tensor img = pipe.sample(samples[i], cfg.sample.guidance_scale, chain, kind,
                             cfg.sample.ddim_steps);
    write_image_rgb(images_dir / (samples[i].id + ".png"), img);
    ids.push_back(samples[i].id);
    std::cerr << "sampled " << samples[i].id << " (" << (i + 1) << "/"
              << samples.size() << ")\n";
  }

  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["guidance_scale"] = cfg.sample.guidance_scale;
  manifest["sampler"] = cfg.sample.sampler;
  manifest["ddim_steps"] = cfg.sample.ddim_steps;
  manifest["schedule_steps"] = pipe.schedule.T;
  manifest["checkpoint"] = checkpoint_path;
  manifest["checkpoint_hash"] = file_hash_hex(checkpoint_path);
  manifest["ids"] = ids;
  std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(2) << "\n";
  write_run_manifest(out_dir, "infer", seed, cfg,
                     {{"checkpoint_hash", manifest["checkpoint_hash"]}});
  return kExitOk;
}

int cmd_eval(const std::string& gen_dir, const std::string& gt_dir,
             const std::string& masks_dir, const std::string& out_dir,
             double lambda1, int band_radius, const std::string& norm) {
  std::cerr << "evaluating " << gen_dir << " against " << gt_dir << "\n";
  CorpusReport report =
      evaluate_directories(gen_dir, gt_dir, masks_dir, lambda1, band_radius, norm);
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "report.json")
      << report_to_json(report).dump(2) << "\n";
  write_report_csv(fs::path(out_dir) / "report.csv", report);
  RunConfig cfg;
  cfg.eval.lambda1 = lambda1;
  cfg.eval.band_radius = band_radius;
  cfg.eval.norm = norm;
  write_run_manifest(out_dir, "eval", 0, cfg,
                     {{"mean_lacd", report.mean_lacd},
                      {"mean_ssim", report.mean_ssim},
                      {"count", report.rows.size()}});
  std::cerr << "mean LACD " << report.mean_lacd << ", mean SSIM "
            << report.mean_ssim << "\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& out_path, int seeds) {
  auto results = run_gradcheck_suites(seeds);
  bool all_pass = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) {
    std::cerr << (r.pass ? "PASS" : "FAIL") << " " << r.name << " max_rel="
              << r.max_rel_error << " seeds=" << r.seeds << "\n";
    j.push_back({{"suite", r.name},
                 {"max_rel_error", r.max_rel_error},
                 {"seeds", r.seeds},
                 {"pass", r.pass}});
    all_pass = all_pass && r.pass;
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << j.dump(2) << "\n";
  }
  return all_pass ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered try-on pipeline: data, training, inference, evaluation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_path;
  std::string ablation, sampler, split = "test", norm = "per-pixel";
  std::string gen_dir, gt_dir, masks_dir, gradcheck_out;
  int count = 0, band_radius = 3, gradcheck_seeds = 20;
  double scale = -1.0, lambda1 = 3.0;
  uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--count", count, "number of samples")->required();

  auto* train = app.add_subcommand("train", "train the pipeline");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_option("--ablation", ablation, "base | gol | gol+locc");

  auto* infer = app.add_subcommand("infer", "sample try-on images");
  infer->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  infer->add_option("--data", data_dir, "dataset directory")->required();
  infer->add_option("--out", out_dir, "run output directory")->required();
  infer->add_option("--scale", scale, "guidance scale (default from config)");
  infer->add_option("--seed", seed, "sampling seed");
  infer->add_option("--sampler", sampler, "ddpm | ddim");
  infer->add_option("--count", count, "max samples (0 = all)");
  infer->add_option("--split", split, "dataset split (default test)");

  auto* eval = app.add_subcommand("eval", "score generated images");
  eval->add_option("--gen", gen_dir, "directory of generated PNGs")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth PNGs")->required();
  eval->add_option("--masks", masks_dir, "directory of per-sample layer masks")
      ->required();
  eval->add_option("--out", out_dir, "report output directory")->required();
  eval->add_option("--lambda1", lambda1, "band weight (default 3)");
  eval->add_option("--band-radius", band_radius, "band dilation radius");
  eval->add_option("--norm", norm, "raw | per-pixel");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference suites");
  gradcheck->add_option("--config", config_path, "run config JSON (unused knobs ok)");
  gradcheck->add_option("--out", gradcheck_out, "JSON report path");
  gradcheck->add_option("--seeds", gradcheck_seeds, "seeds per suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, count);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, ablation);
    if (infer->parsed())
      return cmd_infer(checkpoint_path, data_dir, out_dir, scale, seed, sampler,
                       count, split);
    if (eval->parsed())
      return cmd_eval(gen_dir, gt_dir, masks_dir, out_dir, lambda1, band_radius,
                      norm);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_out, gradcheck_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerification;
  }
  return kExitOk;
}
