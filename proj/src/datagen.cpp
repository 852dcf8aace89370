#include "rlvs/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"
#include "rlvs/rng.hpp"

namespace rlvs {
namespace {

using nlohmann::json;

struct Color {
  double r = 0, g = 0, b = 0;
};

constexpr Color kStroma{0.93, 0.76, 0.86};
constexpr Color kCytoplasm{0.83, 0.61, 0.80};
constexpr Color kNormalNucleus{0.50, 0.35, 0.65};
constexpr Color kTumorNucleus{0.31, 0.17, 0.46};
constexpr Color kNecrosis{0.87, 0.60, 0.76};
constexpr Color kDebris{0.36, 0.20, 0.50};

class Canvas {
 public:
  Canvas(std::uint32_t w, std::uint32_t h) : w_(w), h_(h), px_(std::size_t{w} * h * 3) {}

  std::uint32_t width() const { return w_; }
  std::uint32_t height() const { return h_; }

  void set(std::uint32_t x, std::uint32_t y, Color c) {
    double* p = &px_[(std::size_t{y} * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  void blend(std::uint32_t x, std::uint32_t y, Color c, double a) {
    double* p = &px_[(std::size_t{y} * w_ + x) * 3];
    p[0] += a * (c.r - p[0]);
    p[1] += a * (c.g - p[1]);
    p[2] += a * (c.b - p[2]);
  }
  void add_noise(Rng& rng, double sd) {
    for (double& v : px_) v += rng.normal(0.0, sd);
  }
  Image to_image() const {
    Image img(w_, h_);
    for (std::size_t i = 0; i < px_.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px_[i], 0.0, 1.0) * 255.0));
    }
    return img;
  }

 private:
  std::uint32_t w_, h_;
  std::vector<double> px_;
};

// Smoothly interpolated lattice noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(std::uint32_t w, std::uint32_t h, double spacing, Rng& rng)
      : spacing_(std::max(1.0, spacing)),
        gw_(static_cast<std::uint32_t>(w / spacing_) + 2),
        gh_(static_cast<std::uint32_t>(h / spacing_) + 2),
        grid_(std::size_t{gw_} * gh_) {
    for (double& v : grid_) v = rng.uniform(-1.0, 1.0);
  }

  double at(double x, double y) const {
    const double fx = x / spacing_, fy = y / spacing_;
    const auto ix = std::min(static_cast<std::uint32_t>(fx), gw_ - 2);
    const auto iy = std::min(static_cast<std::uint32_t>(fy), gh_ - 2);
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double tx = smooth(std::clamp(fx - ix, 0.0, 1.0));
    const double ty = smooth(std::clamp(fy - iy, 0.0, 1.0));
    auto g = [&](std::uint32_t a, std::uint32_t b) { return grid_[std::size_t{b} * gw_ + a]; };
    const double top = g(ix, iy) + tx * (g(ix + 1, iy) - g(ix, iy));
    const double bot = g(ix, iy + 1) + tx * (g(ix + 1, iy + 1) - g(ix, iy + 1));
    return top + ty * (bot - top);
  }

 private:
  double spacing_;
  std::uint32_t gw_, gh_;
  std::vector<double> grid_;
};

struct CaseStyle {
  Color tone;            // additive shift
  double stain = 1.0;    // nucleus darkness multiplier
};

CaseStyle case_style(const SynthConfig& cfg, std::uint64_t seed, std::uint32_t case_id) {
  Rng rng(seed, "case", case_id);
  CaseStyle s;
  s.tone = {rng.normal(0, cfg.case_tone_sd), rng.normal(0, cfg.case_tone_sd),
            rng.normal(0, cfg.case_tone_sd)};
  s.stain = rng.uniform(0.92, 1.08);
  return s;
}

Color shade(Color c, const CaseStyle& s, double delta = 0.0) {
  return {c.r + s.tone.r + delta, c.g + s.tone.g + delta, c.b + s.tone.b + delta};
}

Color darken(Color c, double k) { return {c.r * k, c.g * k, c.b * k}; }

struct Cell {
  double x = 0, y = 0;
  bool tumor = false;
  double radius = 0;
  double aspect = 1;
  double angle = 0;
  double harm[4] = {0, 0, 0, 0};  // cos harmonics k = 2..5
  double phase[4] = {0, 0, 0, 0};
  double texture = 0;

  double boundary(double theta) const {
    double r = 1.0;
    for (int k = 0; k < 4; ++k) r += harm[k] * std::cos((k + 2) * theta + phase[k]);
    return radius * r;
  }
  // Extent including cytoplasm.
  double reach() const { return radius * (tumor ? 1.55 : 1.8) * 1.35; }
};

Cell make_cell(const SynthConfig& cfg, bool tumor, double x, double y, Rng& rng) {
  Cell c;
  c.x = x;
  c.y = y;
  c.tumor = tumor;
  const Range r = tumor ? cfg.tumor_nucleus_radius : cfg.normal_nucleus_radius;
  c.radius = rng.uniform(r.lo, r.hi);
  c.aspect = tumor ? rng.uniform(0.7, 1.0) : rng.uniform(0.85, 1.0);
  c.angle = rng.uniform(0.0, std::numbers::pi);
  const double irr = tumor ? cfg.tumor_irregularity : cfg.normal_irregularity;
  for (int k = 0; k < 4; ++k) {
    c.harm[k] = rng.uniform(0.0, irr) / (1.0 + 0.5 * k);
    c.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  c.texture = rng.uniform(0.0, 1.0);
  return c;
}

// Nucleus membership for a point, with the ellipse and boundary harmonics.
bool in_nucleus(const Cell& c, double px, double py) {
  const double dx = px - c.x, dy = py - c.y;
  const double ca = std::cos(c.angle), sa = std::sin(c.angle);
  const double u = ca * dx + sa * dy;
  const double v = (-sa * dx + ca * dy) / c.aspect;
  const double rho = std::hypot(u, v);
  if (rho > c.radius * 1.6) return false;
  return rho <= c.boundary(std::atan2(v, u));
}

void paint_cell(Canvas& canvas, const Cell& c, const CaseStyle& style, Rng& rng) {
  const double cyto = c.radius * (c.tumor ? 1.55 : 1.8);
  const double reach = c.reach();
  const auto x0 = static_cast<long>(std::floor(c.x - reach));
  const auto x1 = static_cast<long>(std::ceil(c.x + reach));
  const auto y0 = static_cast<long>(std::floor(c.y - reach));
  const auto y1 = static_cast<long>(std::ceil(c.y + reach));
  const Color nucleus = darken(c.tumor ? kTumorNucleus : kNormalNucleus, 1.0 / style.stain);
  constexpr int kSub = 4;
  for (long y = std::max(0L, y0); y <= std::min<long>(canvas.height() - 1L, y1); ++y) {
    for (long x = std::max(0L, x0); x <= std::min<long>(canvas.width() - 1L, x1); ++x) {
      int in_cyto = 0, in_nuc = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x - 0.5 + (sx + 0.5) / kSub;
          const double py = y - 0.5 + (sy + 0.5) / kSub;
          const double dx = (px - c.x) / (cyto * std::sqrt(c.aspect));
          const double dy = (py - c.y) / cyto;
          if (dx * dx + dy * dy <= 1.0) ++in_cyto;
          if (in_nucleus(c, px, py)) ++in_nuc;
        }
      }
      const auto ux = static_cast<std::uint32_t>(x), uy = static_cast<std::uint32_t>(y);
      if (in_cyto) canvas.blend(ux, uy, shade(kCytoplasm, style), 0.45 * in_cyto / (kSub * kSub));
      if (in_nuc) {
        // Coarse chromatin: tumour nuclei get blotchy texture.
        const double grain = c.tumor ? rng.uniform(-0.07, 0.07) : rng.uniform(-0.025, 0.025);
        Color n = nucleus;
        n.r += grain;
        n.g += grain;
        n.b += grain;
        canvas.blend(ux, uy, n, 0.92 * in_nuc / (kSub * kSub));
      }
    }
  }
}

void paint_background(Canvas& canvas, const CaseStyle& style, double spacing, Rng& rng) {
  ValueNoise coarse(canvas.width(), canvas.height(), spacing, rng);
  ValueNoise fine(canvas.width(), canvas.height(), spacing / 4.0, rng);
  for (std::uint32_t y = 0; y < canvas.height(); ++y) {
    for (std::uint32_t x = 0; x < canvas.width(); ++x) {
      const double n = 0.035 * coarse.at(x, y) + 0.02 * fine.at(x, y);
      Color c = shade(kStroma, style, n);
      c.g += 0.5 * n;
      canvas.set(x, y, c);
    }
  }
}

struct Region {
  std::vector<Vertex> polygon;
  double cx = 0, cy = 0, radius = 0;
};

// Star-shaped polygon around (cx, cy); vertices stay within `radius`.
Region make_region(double cx, double cy, double radius, Rng& rng) {
  Region r{{}, cx, cy, radius};
  const int n = 11 + static_cast<int>(rng.below(4));
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / n;
    const double rr = radius * rng.uniform(0.65, 1.0);
    r.polygon.push_back({cx + rr * std::cos(theta), cy + rr * std::sin(theta)});
  }
  return r;
}

void paint_necrosis(Canvas& canvas, const Region& region, const SynthConfig& cfg,
                    const CaseStyle& style, Rng& rng) {
  ValueNoise mottle(canvas.width(), canvas.height(), std::max(2.0, region.radius / 3.0), rng);
  const auto x0 = static_cast<long>(std::floor(region.cx - region.radius));
  const auto x1 = static_cast<long>(std::ceil(region.cx + region.radius));
  const auto y0 = static_cast<long>(std::floor(region.cy - region.radius));
  const auto y1 = static_cast<long>(std::ceil(region.cy + region.radius));
  double area = 0.0;
  for (long y = std::max(0L, y0); y <= std::min<long>(canvas.height() - 1L, y1); ++y) {
    for (long x = std::max(0L, x0); x <= std::min<long>(canvas.width() - 1L, x1); ++x) {
      int inside = 0;
      for (int s = 0; s < 4; ++s) {
        inside += point_in_polygon(region.polygon, x - 0.25 + 0.5 * (s % 2), y - 0.25 + 0.5 * (s / 2));
      }
      if (!inside) continue;
      area += inside / 4.0;
      const double m = 0.07 * mottle.at(x, y);
      const auto ux = static_cast<std::uint32_t>(x), uy = static_cast<std::uint32_t>(y);
      canvas.blend(ux, uy, shade(kNecrosis, style, m), 0.85 * inside / 4.0);
    }
  }
  // Nuclear debris: small dark fragments scattered through the region.
  const auto count = static_cast<std::size_t>(std::lround(cfg.debris_density * area / 1000.0));
  for (std::size_t i = 0; i < count; ++i) {
    double px = 0, py = 0;
    for (int attempt = 0; attempt < 20; ++attempt) {
      px = rng.uniform(region.cx - region.radius, region.cx + region.radius);
      py = rng.uniform(region.cy - region.radius, region.cy + region.radius);
      if (point_in_polygon(region.polygon, px, py)) break;
    }
    if (!point_in_polygon(region.polygon, px, py)) continue;
    const double r = rng.uniform(cfg.debris_radius.lo, cfg.debris_radius.hi);
    const Color dark = darken(kDebris, rng.uniform(0.85, 1.15) / style.stain);
    for (long y = static_cast<long>(std::floor(py - r)); y <= static_cast<long>(std::ceil(py + r)); ++y) {
      for (long x = static_cast<long>(std::floor(px - r)); x <= static_cast<long>(std::ceil(px + r)); ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(canvas.width()) ||
            y >= static_cast<long>(canvas.height())) {
          continue;
        }
        const double d = std::hypot(x - px, y - py);
        const double cover = std::clamp(r + 0.5 - d, 0.0, 1.0);
        if (cover > 0) {
          canvas.blend(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), dark, 0.8 * cover);
        }
      }
    }
  }
}

// Places non-overlapping cells; returns false if no spot was found.
bool place_cell(const SynthConfig& cfg, bool tumor, std::vector<Cell>& cells,
                const std::vector<Region>& regions, std::uint32_t w, std::uint32_t h, Rng& rng,
                double min_center_distance = 0.0, double cx = 0.0, double cy = 0.0) {
  for (int attempt = 0; attempt < 60; ++attempt) {
    const double x = rng.uniform(0.0, w - 1.0);
    const double y = rng.uniform(0.0, h - 1.0);
    Cell c = make_cell(cfg, tumor, x, y, rng);
    if (min_center_distance > 0.0 && std::hypot(x - cx, y - cy) < min_center_distance) continue;
    bool ok = true;
    for (const Cell& o : cells) {
      if (std::hypot(o.x - x, o.y - y) < 1.05 * (o.radius + c.radius) + 1.0) {
        ok = false;
        break;
      }
    }
    for (const Region& r : regions) {
      if (!ok) break;
      if (std::hypot(r.cx - x, r.cy - y) < r.radius + c.radius) ok = false;
    }
    if (ok) {
      cells.push_back(c);
      return true;
    }
  }
  return false;
}

std::size_t poisson(Rng& rng, double mean) {
  std::poisson_distribution<std::size_t> d(std::max(mean, 0.0));
  return mean > 0.0 ? d(rng.engine()) : 0;
}

// Renders a scene and its annotations.
Sample render_scene(const SynthConfig& cfg, std::uint32_t w, std::uint32_t h,
                    const std::vector<Cell>& cells, const std::vector<Region>& regions,
                    const CaseStyle& style, Rng& rng) {
  Canvas canvas(w, h);
  paint_background(canvas, style, std::max(6.0, cfg.patch_size / 3.0), rng);
  for (const Region& r : regions) paint_necrosis(canvas, r, cfg, style, rng);
  for (const Cell& c : cells) paint_cell(canvas, c, style, rng);
  canvas.add_noise(rng, cfg.noise_sd);

  Sample s;
  s.image = canvas.to_image();
  s.annotations.width = w;
  s.annotations.height = h;
  for (const Cell& c : cells) {
    s.annotations.points.push_back({c.x, c.y, c.tumor ? PointClass::kCancer : PointClass::kNonCancer});
    if (c.tumor) s.label = kCancer;
  }
  for (std::size_t i = 0; i < regions.size(); ++i) {
    s.annotations.regions.push_back({"necrosis-" + std::to_string(i), "necrosis", regions[i].polygon});
  }
  if (!regions.empty()) s.region_classes.push_back("necrosis");
  return s;
}

std::string config_hash_of(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<bool> test_cases(const SynthConfig& cfg, std::uint32_t n_cases, std::uint64_t seed) {
  std::vector<std::uint32_t> order(n_cases);
  for (std::uint32_t i = 0; i < n_cases; ++i) order[i] = i;
  Rng rng(seed, "split", 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  auto n_test = static_cast<std::uint32_t>(std::lround(cfg.test_fraction * n_cases));
  if (n_cases >= 2) n_test = std::clamp<std::uint32_t>(n_test, 1, n_cases - 1);
  std::vector<bool> is_test(n_cases, false);
  for (std::uint32_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  return is_test;
}

void assign_cases(const SynthConfig& cfg, Dataset& data) {
  const std::size_t n = data.samples.size();
  const auto n_cases = static_cast<std::uint32_t>((n + cfg.case_size - 1) / cfg.case_size);
  const auto is_test = test_cases(cfg, n_cases, data.seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = data.samples[i];
    s.case_id = static_cast<std::uint32_t>(i / cfg.case_size);
    s.train = !is_test[s.case_id];
    s.annotations.tile_id = "patch-" + std::to_string(i);
  }
}

template <typename Entries>
std::size_t drop_class(Entries& entries, const std::string& region_class) {
  if (std::find(kRegionClasses.begin(), kRegionClasses.end(), region_class) == kRegionClasses.end()) {
    throw Error(ErrorCode::kInvalidArgument, "exclude_class", "unknown region class '" + region_class + "'");
  }
  const std::size_t before = entries.size();
  std::erase_if(entries, [&](const auto& e) {
    return e.train && std::find(e.region_classes.begin(), e.region_classes.end(), region_class) !=
                          e.region_classes.end();
  });
  return before - entries.size();
}

}  // namespace

const char* label_name(int label) { return label == kCancer ? "cancer" : "no-cancer"; }

SynthConfig SynthConfig::scaled(double s) const {
  SynthConfig c = *this;
  c.patch_size = static_cast<std::uint32_t>(std::lround(patch_size * s));
  auto scale = [s](Range r) { return Range{r.lo * s, r.hi * s}; };
  c.tumor_nucleus_radius = scale(tumor_nucleus_radius);
  c.normal_nucleus_radius = scale(normal_nucleus_radius);
  c.necrosis_radius = scale(necrosis_radius);
  c.debris_radius = scale(debris_radius);
  c.tumor_density = tumor_density / (s * s);
  c.normal_density = normal_density / (s * s);
  c.debris_density = debris_density / (s * s);
  return c;
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "synth config", what);
  };
  if (tumor_density < 0 || normal_density < 0 || debris_density < 0) bad("densities must be >= 0");
  for (const Range& r : {tumor_nucleus_radius, normal_nucleus_radius, necrosis_radius, debris_radius}) {
    if (!(r.lo > 0 && r.lo <= r.hi)) bad("size ranges need 0 < lo <= hi");
  }
  if (!(normal_nucleus_radius.hi < tumor_nucleus_radius.lo || tumor_nucleus_radius.hi < normal_nucleus_radius.lo)) {
    bad("tumour and normal nucleus sizes must not overlap");
  }
  if (necrosis_probability < 0 || necrosis_probability > 1) bad("necrosis probability outside [0, 1]");
  if (patch_size < 8) bad("patch size below 8");
  if (2.0 * tumor_nucleus_radius.hi * 1.3 > patch_size) bad("tumour cells do not fit into a patch");
  if (case_size == 0) bad("case size 0");
  if (!(test_fraction > 0 && test_fraction < 1)) bad("test fraction outside (0, 1)");
}

std::string SynthConfig::to_json() const {
  auto range = [](Range r) { return json::array({r.lo, r.hi}); };
  json j{{"patch_size", patch_size},
         {"tumor_density", tumor_density},
         {"normal_density", normal_density},
         {"tumor_nucleus_radius", range(tumor_nucleus_radius)},
         {"normal_nucleus_radius", range(normal_nucleus_radius)},
         {"tumor_irregularity", tumor_irregularity},
         {"normal_irregularity", normal_irregularity},
         {"necrosis_probability", necrosis_probability},
         {"necrosis_radius", range(necrosis_radius)},
         {"debris_radius", range(debris_radius)},
         {"debris_density", debris_density},
         {"noise_sd", noise_sd},
         {"case_tone_sd", case_tone_sd},
         {"case_size", case_size},
         {"test_fraction", test_fraction}};
  return j.dump();
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  SynthConfig c;
  try {
    const json j = json::parse(text);
    auto range = [&](const char* key, Range& r) {
      if (j.contains(key)) r = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
    };
    c.patch_size = j.value("patch_size", c.patch_size);
    c.tumor_density = j.value("tumor_density", c.tumor_density);
    c.normal_density = j.value("normal_density", c.normal_density);
    range("tumor_nucleus_radius", c.tumor_nucleus_radius);
    range("normal_nucleus_radius", c.normal_nucleus_radius);
    c.tumor_irregularity = j.value("tumor_irregularity", c.tumor_irregularity);
    c.normal_irregularity = j.value("normal_irregularity", c.normal_irregularity);
    c.necrosis_probability = j.value("necrosis_probability", c.necrosis_probability);
    range("necrosis_radius", c.necrosis_radius);
    range("debris_radius", c.debris_radius);
    c.debris_density = j.value("debris_density", c.debris_density);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.case_tone_sd = j.value("case_tone_sd", c.case_tone_sd);
    c.case_size = j.value("case_size", c.case_size);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "synth config", e.what());
  }
  c.validate();
  return c;
}

std::string SynthConfig::hash() const { return config_hash_of(to_json()); }

std::size_t Dataset::count(int label, bool train) const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](const Sample& s) {
    return s.label == label && s.train == train;
  }));
}

std::size_t DatasetManifest::count(int label, bool train) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
    return e.label == label && e.train == train;
  }));
}

Dataset gen_dataset(const SynthConfig& cfg, std::size_t n_patches, double tumor_fraction,
                    std::uint64_t seed) {
  cfg.validate();
  if (n_patches < 2) throw Error(ErrorCode::kInvalidArgument, "gen_dataset", "need at least 2 patches");
  if (!(tumor_fraction > 0.0 && tumor_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gen_dataset", "tumour fraction outside (0, 1)");
  }
  const std::uint32_t P = cfg.patch_size;
  const std::size_t n_cancer =
      cfg.tumor_density > 0.0
          ? static_cast<std::size_t>(std::llround(static_cast<double>(n_patches) * tumor_fraction))
          : 0;
  std::vector<int> labels(n_patches, kNoCancer);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_cancer), kCancer);
  Rng label_rng(seed, "labels", 0);
  std::shuffle(labels.begin(), labels.end(), label_rng.engine());

  Dataset data;
  data.config = cfg;
  data.seed = seed;
  data.kind = "tumor";
  data.samples.resize(n_patches);
  const double area = static_cast<double>(P) * P / 1000.0;
  for (std::size_t i = 0; i < n_patches; ++i) {
    Rng rng(seed, "patch", i);
    const auto case_id = static_cast<std::uint32_t>(i / cfg.case_size);
    const CaseStyle style = case_style(cfg, seed, case_id);
    std::vector<Region> regions;
    if (rng.bernoulli(cfg.necrosis_probability)) {
      const double R = rng.uniform(cfg.necrosis_radius.lo, cfg.necrosis_radius.hi);
      const double m = std::min(R, P / 2.0 - 1.0);
      regions.push_back(make_region(rng.uniform(m, P - 1.0 - m), rng.uniform(m, P - 1.0 - m), m, rng));
    }
    std::vector<Cell> cells;
    if (labels[i] == kCancer) {
      const std::size_t n_tumor = std::max<std::size_t>(1, poisson(rng, cfg.tumor_density * area));
      for (std::size_t k = 0; k < n_tumor; ++k) {
        const bool placed = place_cell(cfg, true, cells, regions, P, P, rng);
        if (!placed && k == 0) {
          // Necrosis crowds out the only tumour cell: drop the region.
          regions.clear();
          if (!place_cell(cfg, true, cells, regions, P, P, rng)) {
            throw Error(ErrorCode::kInvalidArgument, "gen_dataset", "cannot place a tumour cell");
          }
        }
      }
    }
    const std::size_t n_normal = poisson(rng, cfg.normal_density * area);
    for (std::size_t k = 0; k < n_normal; ++k) place_cell(cfg, false, cells, regions, P, P, rng);
    data.samples[i] = render_scene(cfg, P, P, cells, regions, style, rng);
  }
  assign_cases(cfg, data);
  return data;
}

Dataset make_center_bias_dataset(const SynthConfig& cfg, std::size_t n_patches, std::uint64_t seed) {
  cfg.validate();
  if (n_patches < 2) throw Error(ErrorCode::kInvalidArgument, "center_bias", "need at least 2 patches");
  const std::uint32_t P = cfg.patch_size;
  std::vector<int> labels(n_patches, kNoCancer);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_patches / 2), kCancer);
  Rng label_rng(seed, "labels", 0);
  std::shuffle(labels.begin(), labels.end(), label_rng.engine());

  Dataset data;
  data.config = cfg;
  data.seed = seed;
  data.kind = "center-bias";
  data.samples.resize(n_patches);
  const double c = (P - 1) / 2.0;
  const double area = static_cast<double>(P) * P / 1000.0;
  const double keep_out = 0.2 * P;
  for (std::size_t i = 0; i < n_patches; ++i) {
    Rng rng(seed, "patch", i);
    const CaseStyle style = case_style(cfg, seed, static_cast<std::uint32_t>(i / cfg.case_size));
    std::vector<Cell> cells{make_cell(cfg, labels[i] == kCancer, c, c, rng)};
    const std::size_t n_tumor = poisson(rng, 0.5 * cfg.tumor_density * area);
    const std::size_t n_normal = poisson(rng, cfg.normal_density * area);
    for (std::size_t k = 0; k < n_tumor; ++k) place_cell(cfg, true, cells, {}, P, P, rng, keep_out, c, c);
    for (std::size_t k = 0; k < n_normal; ++k) place_cell(cfg, false, cells, {}, P, P, rng, keep_out, c, c);
    Sample s = render_scene(cfg, P, P, cells, {}, style, rng);
    s.label = labels[i];
    data.samples[i] = std::move(s);
  }
  assign_cases(cfg, data);
  return data;
}

void inject_corner_artifact(Image& image, std::uint32_t size, Rgb color) {
  if (image.width < size || image.height < size) {
    throw Error(ErrorCode::kInvalidArgument, "corner artifact",
                "image smaller than " + std::to_string(size) + "x" + std::to_string(size));
  }
  for (std::uint32_t y = 0; y < size; ++y) {
    for (std::uint32_t x = 0; x < size; ++x) image.set(x, y, color);
  }
}

Sample gen_tile(const SynthConfig& cfg, const TileOptions& opt, std::uint64_t seed,
                const std::string& tile_id) {
  cfg.validate();
  if (opt.width < cfg.patch_size || opt.height < cfg.patch_size) {
    throw Error(ErrorCode::kInvalidArgument, "gen_tile", "tile smaller than a patch");
  }
  Rng rng(seed, "tile", 0);
  const CaseStyle style = case_style(cfg, seed, 0);
  const std::uint32_t W = opt.width, H = opt.height;
  std::vector<Region> regions;
  for (std::uint32_t k = 0; k < opt.necrosis_regions; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double R = rng.uniform(cfg.necrosis_radius.lo, cfg.necrosis_radius.hi);
      const double x = rng.uniform(R + 1.0, W - 2.0 - R);
      const double y = rng.uniform(R + 1.0, H - 2.0 - R);
      bool ok = true;
      for (const Region& o : regions) ok = ok && std::hypot(o.cx - x, o.cy - y) > o.radius + R + 4.0;
      if (ok) {
        regions.push_back(make_region(x, y, R, rng));
        break;
      }
    }
  }
  ValueNoise nests(W, H, std::max(W, H) / 3.0, rng);
  std::vector<Cell> cells;
  const auto n_cells = static_cast<std::size_t>(opt.cell_density * W * H / 1000.0);
  for (std::size_t k = 0; k < n_cells; ++k) {
    // Decide the type from the nest field at a provisional location.
    const double x = rng.uniform(0.0, W - 1.0);
    const double y = rng.uniform(0.0, H - 1.0);
    const bool in_nest = nests.at(x, y) > 0.0;
    const bool tumor = rng.bernoulli(in_nest ? opt.tumor_share_in_nests : opt.tumor_share_outside);
    Cell cell = make_cell(cfg, tumor, x, y, rng);
    bool ok = true;
    for (const Cell& o : cells) {
      if (std::hypot(o.x - x, o.y - y) < 1.05 * (o.radius + cell.radius) + 1.0) {
        ok = false;
        break;
      }
    }
    for (const Region& r : regions) ok = ok && std::hypot(r.cx - x, r.cy - y) >= r.radius + cell.radius;
    if (ok) cells.push_back(cell);
  }
  Sample s = render_scene(cfg, W, H, cells, regions, style, rng);
  for (auto& p : s.annotations.points) {
    if (rng.bernoulli(opt.excluded_share)) p.cls = PointClass::kExcluded;
  }
  s.annotations.tile_id = tile_id;
  s.train = false;
  return s;
}

DatasetManifest write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  DatasetManifest m;
  m.root = dir;
  m.kind = data.kind;
  m.seed = data.seed;
  m.config_json = data.config.to_json();
  m.config_hash = data.config.hash();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", i);
    ManifestEntry e;
    e.image = std::string("images/") + name + ".png";
    e.annotation = std::string("annotations/") + name + ".json";
    e.label = s.label;
    e.train = s.train;
    e.case_id = s.case_id;
    e.region_classes = s.region_classes;
    write_png(s.image, dir / e.image);
    std::filesystem::create_directories(dir / "annotations");
    write_annotations(s.annotations, dir / e.annotation);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"image", e.image},
                       {"annotation", e.annotation},
                       {"label", label_name(e.label)},
                       {"split", e.train ? "train" : "test"},
                       {"case", e.case_id},
                       {"regions", e.region_classes}});
  }
  json j{{"kind", m.kind},
         {"seed", m.seed},
         {"config_hash", m.config_hash},
         {"config", json::parse(m.config_json)},
         {"counts",
          {{"train", {{"cancer", m.count(kCancer, true)}, {"no-cancer", m.count(kNoCancer, true)}}},
           {"test", {{"cancer", m.count(kCancer, false)}, {"no-cancer", m.count(kNoCancer, false)}}}}},
         {"entries", entries}};
  detail::write_text(path, j.dump(1));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    m.kind = j.value("kind", std::string("tumor"));
    m.seed = j.value("seed", std::uint64_t{0});
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_json = j.at("config").dump();
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.image = e.at("image").get<std::string>();
      me.annotation = e.value("annotation", std::string());
      const auto label = e.at("label").get<std::string>();
      if (label != "cancer" && label != "no-cancer") {
        throw Error(ErrorCode::kCorruptFile, path.string(), "unknown label '" + label + "'");
      }
      me.label = label == "cancer" ? kCancer : kNoCancer;
      const auto split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") {
        throw Error(ErrorCode::kCorruptFile, path.string(), "unknown split '" + split + "'");
      }
      me.train = split == "train";
      me.case_id = e.value("case", 0u);
      me.region_classes = e.value("regions", std::vector<std::string>{});
      m.entries.push_back(std::move(me));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string(), e.what());
  }
  for (const auto& e : m.entries) {
    if (!std::filesystem::exists(m.root / e.image)) {
      throw Error(ErrorCode::kCorruptFile, path.string(), "missing image " + e.image);
    }
  }
  return m;
}

Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  d.config = SynthConfig::from_json(m.config_json);
  d.seed = m.seed;
  d.kind = m.kind;
  for (const auto& e : m.entries) {
    Sample s;
    s.image = read_png(m.root / e.image);
    if (!e.annotation.empty() && std::filesystem::exists(m.root / e.annotation)) {
      s.annotations = read_annotations(m.root / e.annotation);
    }
    s.label = e.label;
    s.train = e.train;
    s.case_id = e.case_id;
    s.region_classes = e.region_classes;
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::size_t exclude_class(DatasetManifest& manifest, const std::string& region_class) {
  return drop_class(manifest.entries, region_class);
}

std::size_t exclude_class(Dataset& data, const std::string& region_class) {
  return drop_class(data.samples, region_class);
}

}  // namespace rlvs
