#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerfit/image_io.hpp"
#include "layerfit/mask_ops.hpp"
#include "layerfit/rng.hpp"
#include "layerfit/tensor.hpp"

namespace layerfit {

// One try-on sample: garment images, dressed person, agnostic person, and
// the oracle masks that make occlusion ground truth exact.
struct Quadruplet {
  std::string id;
  std::string split;        // "train" or "test"
  Tensor inner;             // g_i, garment alone at worn position, white bg
  Tensor outer;             // g_o
  Tensor person;            // x_p, dressed person
  Tensor agnostic;          // x_a, person with the upper region blanked
  Tensor upper_mask;        // M, HxW, 1 = region to regenerate
  Tensor inner_crop;        // x_pi, visible inner pixels of x_p, 0 elsewhere
  Tensor layer_inner;       // A_1
  Tensor layer_outer;       // A_2
  Tensor inner_visibility;  // A_1 and not A_2

  int height() const { return person.shape()[1]; }
  int width() const { return person.shape()[2]; }

  double occlusion_fraction() const {
    int64_t a1 = mask_count(layer_inner);
    if (a1 == 0) return 0.0;
    return static_cast<double>(mask_count(mask_and(layer_inner, layer_outer))) /
           static_cast<double>(a1);
  }

  // Checks every structural invariant; returns human-readable violations.
  std::vector<std::string> invariant_violations() const {
    std::vector<std::string> bad;
    const int H = height(), W = width();
    auto dims_ok = [&](const Tensor& t, int ch) {
      return t.shape().size() == (ch == 1 ? 2u : 3u) &&
             (ch == 1 ? t.shape()[0] == H && t.shape()[1] == W
                      : t.shape()[0] == 3 && t.shape()[1] == H && t.shape()[2] == W);
    };
    if (!dims_ok(inner, 3) || !dims_ok(outer, 3) || !dims_ok(agnostic, 3) ||
        !dims_ok(inner_crop, 3))
      bad.push_back("image dims inconsistent");
    if (!dims_ok(upper_mask, 1) || !dims_ok(layer_inner, 1) ||
        !dims_ok(layer_outer, 1) || !dims_ok(inner_visibility, 1))
      bad.push_back("mask dims inconsistent");
    if (!bad.empty()) return bad;

    auto all_pixels = [&](auto&& pred) {
      for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
        if (!pred(p)) return false;
      return true;
    };
    auto rgb = [&](const Tensor& t, int c, int64_t p) {
      return t.at(static_cast<int64_t>(c) * H * W + p);
    };

    if (!all_pixels([&](int64_t p) {
          for (int c = 0; c < 3; ++c) {
            double v = rgb(person, c, p);
            if (v < 0.0 || v > 1.0) return false;
          }
          return true;
        }))
      bad.push_back("person pixel out of [0,1]");

    // agnostic region blanked: x_a == x_p * (1 - M)
    if (!all_pixels([&](int64_t p) {
          bool masked = upper_mask.at(p) > 0.0;
          for (int c = 0; c < 3; ++c)
            if (rgb(agnostic, c, p) != (masked ? 0.0 : rgb(person, c, p)))
              return false;
          return true;
        }))
      bad.push_back("agnostic != person * (1 - upper_mask)");

    // inner_visibility == A_1 and not A_2 (hence a subset of A_1)
    Tensor expect_vis = mask_diff(layer_inner, layer_outer);
    if (!all_pixels([&](int64_t p) {
          return inner_visibility.at(p) == expect_vis.at(p);
        }))
      bad.push_back("inner_visibility != layer_inner and not layer_outer");

    // x_pi == x_p * inner_visibility
    if (!all_pixels([&](int64_t p) {
          bool vis = inner_visibility.at(p) > 0.0;
          for (int c = 0; c < 3; ++c)
            if (rgb(inner_crop, c, p) != (vis ? rgb(person, c, p) : 0.0))
              return false;
          return true;
        }))
      bad.push_back("inner_crop != person * inner_visibility");

    // garments lie inside the regenerated region
    if (!all_pixels([&](int64_t p) {
          bool garment = layer_inner.at(p) > 0.0 || layer_outer.at(p) > 0.0;
          return !garment || upper_mask.at(p) > 0.0;
        }))
      bad.push_back("garment pixels outside upper_mask");
    return bad;
  }
};

struct SynthConfig {
  int size = 64;                 // square canvas, divisible by 32
  double occlusion_min = 0.2;    // occluded fraction of the inner garment
  double occlusion_max = 0.7;
  uint64_t seed = 0;
  std::vector<std::string> shapes = {"rect", "ellipse", "tee"};
  std::vector<std::string> textures = {"flat", "stripes", "checker"};
  double train_fraction = 2783.0 / 3538.0;  // MLG-style split ratio

  void validate() const {
    if (size < 32 || size % 32 != 0)
      throw ConfigError("dataset size must be a positive multiple of 32, got " +
                        std::to_string(size));
    if (!(occlusion_min >= 0.0 && occlusion_max <= 1.0 &&
          occlusion_min < occlusion_max))
      throw ConfigError("invalid occlusion range");
    if (shapes.empty() || textures.empty())
      throw ConfigError("shape/texture families must be non-empty");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
      throw ConfigError("train_fraction must be in (0,1)");
  }
};

namespace synth {

// All colors live on the u8 grid so PNG round trips are exact.
inline double u8v(int k) { return k / 255.0; }

struct Color {
  double r, g, b;
};

inline Color random_garment_color(Rng& rng) {
  // Away from both white (g_* background) and black (crop background).
  return {u8v(40 + static_cast<int>(rng.uniform_index(176))),
          u8v(40 + static_cast<int>(rng.uniform_index(176))),
          u8v(40 + static_cast<int>(rng.uniform_index(176)))};
}

struct TextureSpec {
  int kind = 0;  // 0 flat, 1 stripes, 2 checker
  Color c1{0, 0, 0}, c2{0, 0, 0};
  int period = 4;
  bool vertical = false;

  Color at(int y, int x) const {
    switch (kind) {
      case 1: {
        int t = (vertical ? x : y) / period;
        return (t % 2 == 0) ? c1 : c2;
      }
      case 2: {
        int t = y / period + x / period;
        return (t % 2 == 0) ? c1 : c2;
      }
      default:
        return c1;
    }
  }
};

inline TextureSpec random_texture(const std::vector<std::string>& families,
                                  Rng& rng) {
  TextureSpec spec;
  const std::string& fam = families[rng.uniform_index(families.size())];
  spec.c1 = random_garment_color(rng);
  spec.c2 = random_garment_color(rng);
  spec.period = 3 + static_cast<int>(rng.uniform_index(5));
  spec.vertical = rng.bernoulli(0.5);
  if (fam == "stripes")
    spec.kind = 1;
  else if (fam == "checker")
    spec.kind = 2;
  else
    spec.kind = 0;
  return spec;
}

struct ShapeSpec {
  int kind = 0;  // 0 rect, 1 ellipse, 2 tee
  int cy = 0, cx = 0;
  int ry = 0, rx = 0;

  bool contains(int y, int x) const {
    int dy = y - cy, dx = x - cx;
    switch (kind) {
      case 1: {
        double fy = static_cast<double>(dy) / ry;
        double fx = static_cast<double>(dx) / rx;
        return fy * fy + fx * fx <= 1.0;
      }
      case 2: {
        // T silhouette: full-width yoke over a narrower body.
        if (dy >= -ry && dy < -ry + std::max(1, (2 * ry) / 3) && dx >= -rx &&
            dx <= rx)
          return true;
        return dy >= -ry && dy <= ry && dx >= -(2 * rx) / 3 && dx <= (2 * rx) / 3;
      }
      default:
        return dy >= -ry && dy <= ry && dx >= -rx && dx <= rx;
    }
  }
};

inline Tensor rasterize(const ShapeSpec& s, int H, int W) {
  Tensor m = Tensor::zeros({H, W});
  int y0 = std::max(0, s.cy - s.ry - 1), y1 = std::min(H - 1, s.cy + s.ry + 1);
  int x0 = std::max(0, s.cx - s.rx - 1), x1 = std::min(W - 1, s.cx + s.rx + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (s.contains(y, x)) m.at(static_cast<int64_t>(y) * W + x) = 1.0;
  return m;
}

inline void paint(Tensor& img, const Tensor& mask, const TextureSpec& tex) {
  const int H = img.shape()[1], W = img.shape()[2];
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (mask.at(static_cast<int64_t>(y) * W + x) <= 0.0) continue;
      Color c = tex.at(y, x);
      img.at((0 * static_cast<int64_t>(H) + y) * W + x) = c.r;
      img.at((1 * static_cast<int64_t>(H) + y) * W + x) = c.g;
      img.at((2 * static_cast<int64_t>(H) + y) * W + x) = c.b;
    }
}

inline Tensor solid_canvas(int H, int W, Color c) {
  Tensor img = Tensor::zeros({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      img.at((0 * static_cast<int64_t>(H) + y) * W + x) = c.r;
      img.at((1 * static_cast<int64_t>(H) + y) * W + x) = c.g;
      img.at((2 * static_cast<int64_t>(H) + y) * W + x) = c.b;
    }
  return img;
}

}  // namespace synth

// Deterministic per (seed, index): sample `index` is identical no matter the
// batch it is generated in.
inline Quadruplet generate_sample(const SynthConfig& cfg, int index) {
  using namespace synth;
  cfg.validate();
  const int S = cfg.size;
  Rng rng(split_seed(cfg.seed, static_cast<uint64_t>(index)));

  // Body and backdrop.
  int bgk = 212 + static_cast<int>(rng.uniform_index(24));
  Color bg{u8v(bgk), u8v(bgk), u8v(bgk)};
  Color skin{u8v(150 + static_cast<int>(rng.uniform_index(60))),
             u8v(110 + static_cast<int>(rng.uniform_index(60))),
             u8v(85 + static_cast<int>(rng.uniform_index(50)))};
  ShapeSpec torso{1, static_cast<int>(0.58 * S) + static_cast<int>(rng.uniform_index(5)) - 2,
                  S / 2 + static_cast<int>(rng.uniform_index(5)) - 2,
                  static_cast<int>(0.30 * S), static_cast<int>(0.19 * S)};
  ShapeSpec head{1, torso.cy - torso.ry - static_cast<int>(0.10 * S),
                 torso.cx, static_cast<int>(0.09 * S), static_cast<int>(0.075 * S)};
  Tensor body = mask_or(rasterize(torso, S, S), rasterize(head, S, S));

  auto pick_kind = [&](const std::string& fam) {
    if (fam == "ellipse") return 1;
    if (fam == "tee") return 2;
    return 0;
  };

  // Inner garment, anchored on the torso.
  ShapeSpec inner_shape;
  inner_shape.kind = pick_kind(cfg.shapes[rng.uniform_index(cfg.shapes.size())]);
  inner_shape.cy = torso.cy - static_cast<int>(0.06 * S) +
                   static_cast<int>(rng.uniform_index(2 * (S / 16) + 1)) - S / 16;
  inner_shape.cx = torso.cx + static_cast<int>(rng.uniform_index(2 * (S / 21) + 1)) - S / 21;
  inner_shape.ry = static_cast<int>(rng.uniform(0.17, 0.26) * S);
  inner_shape.rx = static_cast<int>(rng.uniform(0.14, 0.22) * S);
  Tensor a1 = rasterize(inner_shape, S, S);
  TextureSpec inner_tex = random_texture(cfg.textures, rng);

  // Outer garment: size relative to the inner, position chosen so the
  // occluded fraction of the inner lands inside the configured range.
  TextureSpec outer_tex = random_texture(cfg.textures, rng);
  double target = rng.uniform(cfg.occlusion_min + 0.05, cfg.occlusion_max - 0.05);
  double grow = 1.0;
  Tensor a2;
  double achieved = -1.0;
  for (int attempt = 0; attempt < 8; ++attempt, grow *= 1.2) {
    ShapeSpec outer_shape;
    outer_shape.kind = pick_kind(cfg.shapes[rng.uniform_index(cfg.shapes.size())]);
    outer_shape.ry = std::min(S / 3, static_cast<int>(inner_shape.ry * rng.uniform(0.95, 1.3) * grow));
    outer_shape.rx = std::min(S / 3, static_cast<int>(inner_shape.rx * rng.uniform(0.95, 1.3) * grow));
    outer_shape.cy = inner_shape.cy + static_cast<int>(0.04 * S);
    outer_shape.cx = inner_shape.cx;

    // Base mask once; overlap counts by shifting the inner pixel list.
    Tensor base = rasterize(outer_shape, S, S);
    std::vector<std::pair<int, int>> inner_px;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        if (a1.at(static_cast<int64_t>(y) * S + x) > 0.0) inner_px.emplace_back(y, x);
    const double inner_area = static_cast<double>(inner_px.size());

    auto fraction_at = [&](int dy, int dx) {
      int64_t hit = 0;
      for (auto [y, x] : inner_px) {
        int yy = y - dy, xx = x - dx;
        if (yy >= 0 && yy < S && xx >= 0 && xx < S &&
            base.at(static_cast<int64_t>(yy) * S + xx) > 0.0)
          ++hit;
      }
      return static_cast<double>(hit) / inner_area;
    };

    int best_dy = 0, best_dx = 0;
    double best_err = 1e9;
    const int dy_span = std::max(2, S / 12), dx_span = S / 2;
    for (int dy = -dy_span; dy <= dy_span; dy += 2)
      for (int dx = -dx_span; dx <= dx_span; dx += 2) {
        double err = std::abs(fraction_at(dy, dx) - target);
        if (err < best_err) {
          best_err = err;
          best_dy = dy;
          best_dx = dx;
        }
      }
    for (int dy = best_dy - 2; dy <= best_dy + 2; ++dy)
      for (int dx = best_dx - 2; dx <= best_dx + 2; ++dx) {
        double err = std::abs(fraction_at(dy, dx) - target);
        if (err < best_err) {
          best_err = err;
          best_dy = dy;
          best_dx = dx;
        }
      }
    double f = fraction_at(best_dy, best_dx);
    if (f >= cfg.occlusion_min && f <= cfg.occlusion_max) {
      outer_shape.cy += best_dy;
      outer_shape.cx += best_dx;
      a2 = rasterize(outer_shape, S, S);
      achieved = f;
      break;
    }
  }
  if (achieved < 0.0)
    throw DataError("occlusion placement failed for sample " + std::to_string(index));

  Quadruplet q;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "q%05d", index);
  q.id = buf;
  q.layer_inner = a1;
  q.layer_outer = a2;
  q.inner_visibility = mask_diff(a1, a2);
  q.upper_mask = dilate_chebyshev(mask_or(a1, a2), 2);

  // Garment canvases use a neutral mid-gray backdrop: its latent energy is
  // comparable to garment texture, so no region dominates the occlusion
  // supervision.
  Color canvas{u8v(128), u8v(128), u8v(128)};
  q.inner = solid_canvas(S, S, canvas);
  paint(q.inner, a1, inner_tex);
  q.outer = solid_canvas(S, S, canvas);
  paint(q.outer, a2, outer_tex);

  q.person = solid_canvas(S, S, bg);
  paint(q.person, body, TextureSpec{0, skin, skin, 4, false});
  paint(q.person, a1, inner_tex);  // painter's order: inner first,
  paint(q.person, a2, outer_tex);  // outer covers it

  q.agnostic = q.person.detached();
  for (int64_t p = 0; p < static_cast<int64_t>(S) * S; ++p)
    if (q.upper_mask.at(p) > 0.0)
      for (int c = 0; c < 3; ++c)
        q.agnostic.at(static_cast<int64_t>(c) * S * S + p) = 0.0;

  q.inner_crop = Tensor::zeros({3, S, S});
  for (int64_t p = 0; p < static_cast<int64_t>(S) * S; ++p)
    if (q.inner_visibility.at(p) > 0.0)
      for (int c = 0; c < 3; ++c)
        q.inner_crop.at(static_cast<int64_t>(c) * S * S + p) =
            q.person.at(static_cast<int64_t>(c) * S * S + p);
  return q;
}

inline std::vector<Quadruplet> generate(const SynthConfig& cfg, int n) {
  if (n < 1) throw UsageError("generate: n must be >= 1");
  cfg.validate();
  int n_train = static_cast<int>(std::lround(cfg.train_fraction * n));
  n_train = std::clamp(n_train, n > 1 ? 1 : 0, n > 1 ? n - 1 : n);
  std::vector<Quadruplet> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Quadruplet q = generate_sample(cfg, i);
    q.split = i < n_train ? "train" : "test";
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout: <root>/<split>/<id>/{inner,outer,person,agnostic,inner_crop}.png
// + {mask_upper,layer_inner,layer_outer,inner_visible}.png, and a manifest.
// ---------------------------------------------------------------------------

inline void save_dataset(const std::vector<Quadruplet>& samples,
                         const std::filesystem::path& root,
                         const SynthConfig* cfg = nullptr) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  manifest["samples"] = nlohmann::json::array();
  for (const Quadruplet& q : samples) {
    fs::path dir = root / q.split / q.id;
    fs::create_directories(dir);
    write_image_rgb(dir / "inner.png", q.inner);
    write_image_rgb(dir / "outer.png", q.outer);
    write_image_rgb(dir / "person.png", q.person);
    write_image_rgb(dir / "agnostic.png", q.agnostic);
    write_image_rgb(dir / "inner_crop.png", q.inner_crop);
    write_mask(dir / "mask_upper.png", q.upper_mask);
    write_mask(dir / "layer_inner.png", q.layer_inner);
    write_mask(dir / "layer_outer.png", q.layer_outer);
    write_mask(dir / "inner_visible.png", q.inner_visibility);
    manifest["samples"].push_back({{"id", q.id}, {"split", q.split}});
  }
  if (cfg) {
    manifest["config"] = {{"size", cfg->size},
                          {"occlusion_min", cfg->occlusion_min},
                          {"occlusion_max", cfg->occlusion_max},
                          {"seed", cfg->seed},
                          {"shapes", cfg->shapes},
                          {"textures", cfg->textures},
                          {"train_fraction", cfg->train_fraction}};
  }
  std::ofstream out(root / "manifest.json");
  out << manifest.dump(2) << "\n";
}

struct LoadIssue {
  std::string sample_id;
  std::string message;
};

struct LoadResult {
  std::vector<Quadruplet> samples;
  std::vector<LoadIssue> issues;
};

inline LoadResult load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw DataError("dataset directory not found: " + root.string());

  // Sample list from the manifest when present, otherwise a directory scan.
  std::vector<std::pair<std::string, std::string>> entries;  // (id, split)
  fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
    if (manifest.is_discarded())
      throw DataError("unparseable manifest: " + manifest_path.string());
    for (const auto& s : manifest.value("samples", nlohmann::json::array()))
      entries.emplace_back(s.at("id").get<std::string>(),
                           s.at("split").get<std::string>());
  } else {
    for (const char* split : {"train", "test"}) {
      fs::path dir = root / split;
      if (!fs::exists(dir)) continue;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) entries.emplace_back(e.path().filename().string(), split);
    }
    std::sort(entries.begin(), entries.end());
  }

  LoadResult result;
  static const char* kImages[] = {"inner.png", "outer.png", "person.png",
                                  "agnostic.png", "inner_crop.png"};
  static const char* kMasks[] = {"mask_upper.png", "layer_inner.png",
                                 "layer_outer.png", "inner_visible.png"};
  for (const auto& [id, split] : entries) {
    fs::path dir = root / split / id;
    bool missing = false;
    for (const char* name : kImages)
      if (!fs::exists(dir / name)) {
        result.issues.push_back({id, "missing " + std::string(name)});
        missing = true;
      }
    for (const char* name : kMasks)
      if (!fs::exists(dir / name)) {
        result.issues.push_back({id, "missing " + std::string(name)});
        missing = true;
      }
    if (missing) continue;
    try {
      Quadruplet q;
      q.id = id;
      q.split = split;
      q.inner = read_image_rgb(dir / "inner.png");
      q.outer = read_image_rgb(dir / "outer.png");
      q.person = read_image_rgb(dir / "person.png");
      q.agnostic = read_image_rgb(dir / "agnostic.png");
      q.inner_crop = read_image_rgb(dir / "inner_crop.png");
      q.upper_mask = read_mask(dir / "mask_upper.png");
      q.layer_inner = read_mask(dir / "layer_inner.png");
      q.layer_outer = read_mask(dir / "layer_outer.png");
      q.inner_visibility = read_mask(dir / "inner_visible.png");
      result.samples.push_back(std::move(q));
    } catch (const DataError& e) {
      result.issues.push_back({id, e.what()});
    }
  }
  return result;
}

inline std::vector<Quadruplet> split_of(std::vector<Quadruplet> samples,
                                        const std::string& split) {
  std::vector<Quadruplet> out;
  for (auto& q : samples)
    if (q.split == split) out.push_back(std::move(q));
  return out;
}

}  // namespace layerfit
