#pragma once

#include <atomic>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "layerfit/image_io.hpp"
#include "layerfit/metrics.hpp"

namespace layerfit {

inline int eval_thread_count(int n_samples) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("LAYERFIT_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return std::max(1, std::min(hw, n_samples));
}

struct SampleScore {
  std::string id;
  double lacd = 0.0;      // headline value in the requested normalization
  double lacd_raw = 0.0;  // literal weighted-sum form
  double lacd_per_pixel = 0.0;
  std::vector<double> per_layer;  // headline normalization
  double ssim_value = 0.0;
};

struct CorpusReport {
  std::vector<SampleScore> rows;
  double mean_lacd = 0.0;
  double mean_lacd_raw = 0.0;
  double mean_lacd_per_pixel = 0.0;
  double mean_ssim = 0.0;
  double lambda1 = 3.0;
  int band_radius = 3;
  std::string norm = "per-pixel";
};

namespace detail {

inline std::filesystem::path find_gt_image(const std::filesystem::path& gt_dir,
                                           const std::string& id) {
  namespace fs = std::filesystem;
  if (fs::exists(gt_dir / (id + ".png"))) return gt_dir / (id + ".png");
  if (fs::exists(gt_dir / id / "person.png")) return gt_dir / id / "person.png";
  throw DataError("ground truth for '" + id + "' not found under " +
                  gt_dir.string());
}

inline std::vector<std::filesystem::path> find_layer_masks(
    const std::filesystem::path& masks_dir, const std::string& id) {
  namespace fs = std::filesystem;
  fs::path dir = masks_dir / id;
  if (!fs::exists(dir))
    throw DataError("mask directory for '" + id + "' not found under " +
                    masks_dir.string());
  // dataset layout: named inner/outer pair
  if (fs::exists(dir / "layer_inner.png") && fs::exists(dir / "layer_outer.png"))
    return {dir / "layer_inner.png", dir / "layer_outer.png"};
  std::vector<fs::path> layers;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("layer_", 0) == 0 && e.path().extension() == ".png")
      layers.push_back(e.path());
  }
  std::sort(layers.begin(), layers.end());
  if (layers.empty())
    throw DataError("no layer_*.png masks for '" + id + "' under " + dir.string());
  return layers;
}

}  // namespace detail

// Scores every <id>.png in gen_dir against its ground truth and layer masks.
// Embarrassingly parallel across samples; LAYERFIT_THREADS caps the pool.
inline CorpusReport evaluate_directories(const std::filesystem::path& gen_dir,
                                         const std::filesystem::path& gt_dir,
                                         const std::filesystem::path& masks_dir,
                                         double lambda1 = 3.0,
                                         int band_radius = 3,
                                         const std::string& norm = "per-pixel") {
  namespace fs = std::filesystem;
  if (!fs::exists(gen_dir)) throw DataError("generated dir not found: " + gen_dir.string());
  if (!fs::exists(gt_dir)) throw DataError("ground-truth dir not found: " + gt_dir.string());
  if (norm != "per-pixel" && norm != "raw")
    throw ConfigError("eval norm must be per-pixel or raw, got '" + norm + "'");

  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(gen_dir))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no .png images in " + gen_dir.string());

  CorpusReport report;
  report.lambda1 = lambda1;
  report.band_radius = band_radius;
  report.norm = norm;
  report.rows.resize(ids.size());

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mu;

  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= ids.size() || failed.load()) return;
      try {
        const std::string& id = ids[i];
        Tensor gen = read_image_rgb(gen_dir / (id + ".png"));
        Tensor gt = read_image_rgb(detail::find_gt_image(gt_dir, id));
        std::vector<Tensor> masks;
        for (const auto& p : detail::find_layer_masks(masks_dir, id))
          masks.push_back(read_mask(p));
        LayerRegions regions = derive_regions(masks, band_radius);
        LacdReport raw = lacd(gt, gen, regions, lambda1, LacdNorm::kRawSum);
        LacdReport pp = lacd(gt, gen, regions, lambda1, LacdNorm::kPerPixel);
        SampleScore& row = report.rows[i];
        row.id = id;
        row.lacd_raw = raw.value;
        row.lacd_per_pixel = pp.value;
        const LacdReport& headline = norm == "raw" ? raw : pp;
        row.lacd = headline.value;
        row.per_layer = headline.per_layer;
        row.ssim_value = ssim(gt, gen);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };

  int n_threads = eval_thread_count(static_cast<int>(ids.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed.load()) throw DataError("evaluation failed: " + first_error);

  for (const SampleScore& row : report.rows) {
    report.mean_lacd += row.lacd;
    report.mean_lacd_raw += row.lacd_raw;
    report.mean_lacd_per_pixel += row.lacd_per_pixel;
    report.mean_ssim += row.ssim_value;
  }
  double inv = 1.0 / static_cast<double>(report.rows.size());
  report.mean_lacd *= inv;
  report.mean_lacd_raw *= inv;
  report.mean_lacd_per_pixel *= inv;
  report.mean_ssim *= inv;
  return report;
}

inline nlohmann::json report_to_json(const CorpusReport& report) {
  nlohmann::json j;
  j["settings"] = {{"lambda1", report.lambda1},
                   {"band_radius", report.band_radius},
                   {"norm", report.norm}};
  j["corpus"] = {{"mean_lacd", report.mean_lacd},
                 {"mean_lacd_raw", report.mean_lacd_raw},
                 {"mean_lacd_per_pixel", report.mean_lacd_per_pixel},
                 {"mean_ssim", report.mean_ssim},
                 {"count", report.rows.size()}};
  j["samples"] = nlohmann::json::array();
  for (const SampleScore& row : report.rows)
    j["samples"].push_back({{"id", row.id},
                            {"lacd", row.lacd},
                            {"lacd_raw", row.lacd_raw},
                            {"lacd_per_pixel", row.lacd_per_pixel},
                            {"lacd_layers", row.per_layer},
                            {"ssim", row.ssim_value}});
  return j;
}

inline void write_report_csv(const std::filesystem::path& path,
                             const CorpusReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV report: " + path.string());
  size_t max_layers = 0;
  for (const auto& row : report.rows)
    max_layers = std::max(max_layers, row.per_layer.size());
  out << "id,lacd,lacd_raw,lacd_per_pixel,ssim";
  for (size_t i = 0; i < max_layers; ++i) out << ",lacd_layer" << (i + 1);
  out << "\n";
  out.precision(12);
  for (const auto& row : report.rows) {
    out << row.id << "," << row.lacd << "," << row.lacd_raw << ","
        << row.lacd_per_pixel << "," << row.ssim_value;
    for (size_t i = 0; i < max_layers; ++i)
      out << "," << (i < row.per_layer.size() ? row.per_layer[i] : 0.0);
    out << "\n";
  }
  out << "mean," << report.mean_lacd << "," << report.mean_lacd_raw << ","
      << report.mean_lacd_per_pixel << "," << report.mean_ssim;
  for (size_t i = 0; i < max_layers; ++i) out << ",";
  out << "\n";
}

}  // namespace layerfit
