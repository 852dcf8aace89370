#include "rlvs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rlvs/rng.hpp"

namespace rlvs {
namespace {

double cross(const Vertex& o, const Vertex& a, const Vertex& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Vertex& p, const Vertex& a, const Vertex& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

bool segments_touch(const Vertex& a, const Vertex& b, const Vertex& c, const Vertex& d) {
  const int d1 = sign(cross(c, d, a));
  const int d2 = sign(cross(c, d, b));
  const int d3 = sign(cross(a, b, c));
  const int d4 = sign(cross(a, b, d));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  return (d1 == 0 && on_segment(a, c, d)) || (d2 == 0 && on_segment(b, c, d)) ||
         (d3 == 0 && on_segment(c, a, b)) || (d4 == 0 && on_segment(d, a, b));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

const char* to_string(PointClass c) {
  switch (c) {
    case PointClass::kCancer: return "cancer";
    case PointClass::kNonCancer: return "non-cancer";
    case PointClass::kExcluded: return "excluded";
  }
  return "?";
}

PointClass parse_point_class(const std::string& s) {
  if (s == "cancer") return PointClass::kCancer;
  if (s == "non-cancer") return PointClass::kNonCancer;
  if (s == "excluded") return PointClass::kExcluded;
  throw Error(ErrorCode::kInvalidArgument, "annotations", "unknown point class '" + s + "'");
}

const char* to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::kCancerCell: return "cancer";
    case ScoreSource::kNonCancerCell: return "non-cancer";
    case ScoreSource::kRegion: return "region";
  }
  return "?";
}

bool point_in_polygon(const std::vector<Vertex>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vertex& a = poly[i];
    const Vertex& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

bool polygon_is_simple(const std::vector<Vertex>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_touch(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

void AnnotationSet::validate() const {
  const std::string where = "annotations " + tile_id;
  if (width == 0 || height == 0) throw Error(ErrorCode::kInvalidArgument, where, "tile size is 0");
  auto in_bounds = [&](double x, double y) {
    return x >= -0.5 && y >= -0.5 && x <= width - 0.5 && y <= height - 0.5;
  };
  for (const auto& p : points) {
    if (!in_bounds(p.x, p.y)) {
      throw Error(ErrorCode::kInvalidArgument, where,
                  "point (" + fmt(p.x) + ", " + fmt(p.y) + ") outside tile");
    }
  }
  for (const auto& r : regions) {
    for (const auto& v : r.polygon) {
      if (!in_bounds(v.x, v.y)) {
        throw Error(ErrorCode::kInvalidArgument, where, "region " + r.id + " outside tile");
      }
    }
    if (!polygon_is_simple(r.polygon)) {
      throw Error(ErrorCode::kInvalidArgument, where, "region " + r.id + " is not a simple polygon");
    }
  }
}

AnnotationSet read_annotations(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  AnnotationSet set;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    set.tile_id = j.value("tile_id", path.stem().string());
    set.width = j.at("width").get<std::uint32_t>();
    set.height = j.at("height").get<std::uint32_t>();
    for (const auto& p : j.value("points", nlohmann::json::array())) {
      set.points.push_back({p.at("x").get<double>(), p.at("y").get<double>(),
                            parse_point_class(p.at("class").get<std::string>())});
    }
    std::size_t index = 0;
    for (const auto& r : j.value("regions", nlohmann::json::array())) {
      RegionAnnotation reg;
      reg.cls = r.at("class").get<std::string>();
      reg.id = r.value("id", reg.cls + "-" + std::to_string(index));
      for (const auto& v : r.at("polygon")) reg.polygon.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
      set.regions.push_back(std::move(reg));
      ++index;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string(), e.what());
  }
  set.validate();
  return set;
}

void write_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  nlohmann::json j{{"tile_id", set.tile_id}, {"width", set.width}, {"height", set.height}};
  j["points"] = nlohmann::json::array();
  for (const auto& p : set.points) {
    j["points"].push_back({{"x", p.x}, {"y", p.y}, {"class", to_string(p.cls)}});
  }
  j["regions"] = nlohmann::json::array();
  for (const auto& r : set.regions) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& v : r.polygon) poly.push_back({v.x, v.y});
    j["regions"].push_back({{"id", r.id}, {"class", r.cls}, {"polygon", poly}});
  }
  detail::write_text(path, j.dump(1));
}

std::vector<std::size_t> disc_pixels(std::uint32_t width, std::uint32_t height, double cx,
                                     double cy, double radius) {
  std::vector<std::size_t> out;
  const long y0 = std::max(0L, static_cast<long>(std::ceil(cy - radius)));
  const long y1 = std::min<long>(height - 1L, static_cast<long>(std::floor(cy + radius)));
  const long x0 = std::max(0L, static_cast<long>(std::ceil(cx - radius)));
  const long x1 = std::min<long>(width - 1L, static_cast<long>(std::floor(cx + radius)));
  const double r2 = radius * radius;
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      if (dx * dx + dy * dy <= r2) out.push_back(static_cast<std::size_t>(y) * width + x);
    }
  }
  return out;
}

std::vector<std::size_t> polygon_pixels(std::uint32_t width, std::uint32_t height,
                                        const std::vector<Vertex>& polygon) {
  std::vector<std::size_t> out;
  if (polygon.size() < 3) return out;
  double lx = polygon[0].x, hx = lx, ly = polygon[0].y, hy = ly;
  for (const auto& v : polygon) {
    lx = std::min(lx, v.x);
    hx = std::max(hx, v.x);
    ly = std::min(ly, v.y);
    hy = std::max(hy, v.y);
  }
  const long y0 = std::max(0L, static_cast<long>(std::ceil(ly)));
  const long y1 = std::min<long>(height - 1L, static_cast<long>(std::floor(hy)));
  const long x0 = std::max(0L, static_cast<long>(std::ceil(lx)));
  const long x1 = std::min<long>(width - 1L, static_cast<long>(std::floor(hx)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      if (point_in_polygon(polygon, static_cast<double>(x), static_cast<double>(y))) {
        out.push_back(static_cast<std::size_t>(y) * width + x);
      }
    }
  }
  return out;
}

double rectified_mean(const Heatmap& map, const std::vector<std::size_t>& pixels) {
  if (pixels.empty()) throw Error(ErrorCode::kEmptyInput, "rectified_mean", "no pixels");
  double acc = 0.0;
  for (std::size_t i : pixels) acc += std::max(0.0f, map.values[i]);
  return acc / static_cast<double>(pixels.size());
}

std::vector<ScoredItem> cell_scores(const Heatmap& map, const AnnotationSet& ann, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cell_scores", "radius must be > 0");
  if (map.width != ann.width || map.height != ann.height) {
    throw Error(ErrorCode::kShapeMismatch, "cell_scores",
                "heatmap and annotations of tile " + ann.tile_id + " differ in size");
  }
  std::vector<ScoredItem> out;
  for (const auto& p : ann.points) {
    if (p.cls == PointClass::kExcluded) continue;
    const auto pixels = disc_pixels(map.width, map.height, p.x, p.y, radius);
    if (pixels.empty()) {
      throw Error(ErrorCode::kEmptyInput, "cell_scores",
                  "disc of radius " + fmt(radius) + " at (" + fmt(p.x) + ", " + fmt(p.y) +
                      ") holds no pixel");
    }
    const bool cancer = p.cls == PointClass::kCancer;
    out.push_back({rectified_mean(map, pixels), cancer,
                   cancer ? ScoreSource::kCancerCell : ScoreSource::kNonCancerCell, {}});
  }
  for (const auto& r : ann.regions) {
    const auto pixels = polygon_pixels(map.width, map.height, r.polygon);
    if (pixels.empty()) {
      throw Error(ErrorCode::kEmptyInput, "cell_scores", "region " + r.id + " covers no pixel");
    }
    out.push_back({rectified_mean(map, pixels), false, ScoreSource::kRegion, r.id});
  }
  return out;
}

double RocCurve::trapezoid_auc() const {
  double area = 0.0;
  for (std::size_t i = 1; i < fpr.size(); ++i) {
    area += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) * 0.5;
  }
  return area;
}

RocCurve roc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorCode::kShapeMismatch, "roc", "scores and labels differ in length");
  }
  RocCurve curve;
  for (bool p : positive) (p ? curve.positives : curve.negatives)++;
  if (curve.positives == 0 || curve.negatives == 0) {
    throw Error(ErrorCode::kSingleClass, "roc", "need at least one positive and one negative");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kNonFinite, "roc", "non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(curve.positives);
  const double N = static_cast<double>(curve.negatives);
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  // Walking down the sorted scores, each tie group contributes its midrank
  // (ascending rank) to the positives' rank sum.
  std::size_t tp = 0, fp = 0;
  double rank_sum = 0.0;
  const std::size_t n = order.size();
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_pos += positive[order[j]] ? 1 : 0;
      ++j;
    }
    // Ascending ranks of this group are n - j + 1 .. n - i.
    const double midrank = (static_cast<double>(n - j + 1) + static_cast<double>(n - i)) * 0.5;
    rank_sum += midrank * static_cast<double>(group_pos);
    tp += group_pos;
    fp += (j - i) - group_pos;
    curve.thresholds.push_back(scores[order[i]]);
    curve.fpr.push_back(static_cast<double>(fp) / N);
    curve.tpr.push_back(static_cast<double>(tp) / P);
    i = j;
  }
  curve.auc = (rank_sum - P * (P + 1.0) * 0.5) / (P * N);
  return curve;
}

RocCurve roc(const std::vector<ScoredItem>& items) {
  std::vector<double> scores;
  std::vector<bool> positive;
  for (const auto& it : items) {
    scores.push_back(it.score);
    positive.push_back(it.positive);
  }
  return roc(scores, positive);
}

AucSummary random_baseline_auc(const AnnotationSet& ann, std::size_t runs, std::uint64_t seed,
                               double radius) {
  if (runs < 2) throw Error(ErrorCode::kInvalidArgument, "random_baseline_auc", "runs must be >= 2");
  AucSummary s;
  for (std::size_t r = 0; r < runs; ++r) {
    Rng rng(seed, "random-baseline", r);
    Heatmap map(ann.height, ann.width);
    for (float& v : map.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    s.runs.push_back(roc(cell_scores(map, ann, radius)).auc);
  }
  double acc = 0.0;
  for (double a : s.runs) acc += a;
  s.mean = acc / static_cast<double>(runs);
  double var = 0.0;
  for (double a : s.runs) var += (a - s.mean) * (a - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(runs - 1));
  return s;
}

ClassifierMetrics classifier_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels) {
  if (predictions.empty()) throw Error(ErrorCode::kEmptyInput, "classifier_metrics", "no samples");
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "classifier_metrics", "length mismatch");
  }
  ClassifierMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i];
    const int p = predictions[i];
    if ((t != 0 && t != 1) || (p != 0 && p != 1)) {
      throw Error(ErrorCode::kInvalidArgument, "classifier_metrics", "labels must be 0 or 1");
    }
    ++m.confusion[t][p];
  }
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
  const double total = static_cast<double>(labels.size());
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double predicted = static_cast<double>(m.confusion[0][c] + m.confusion[1][c]);
    m.support[c] = m.confusion[c][0] + m.confusion[c][1];
    m.precision[c] = ratio(tp, predicted);
    m.recall[c] = ratio(tp, static_cast<double>(m.support[c]));
    m.f1[c] = ratio(2.0 * m.precision[c] * m.recall[c], m.precision[c] + m.recall[c]);
    m.weighted_f1 += static_cast<double>(m.support[c]) / total * m.f1[c];
  }
  m.accuracy = static_cast<double>(m.confusion[0][0] + m.confusion[1][1]) / total;
  return m;
}

CenterMassProfile center_mass_profile(const std::vector<Heatmap>& maps,
                                      const std::vector<double>& fractions) {
  if (maps.empty()) throw Error(ErrorCode::kEmptyInput, "center_mass_profile", "no maps");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "center_mass_profile", "fractions must lie in (0, 1]");
    }
  }
  const std::uint32_t H = maps[0].height;
  const std::uint32_t W = maps[0].width;
  CenterMassProfile prof;
  prof.fractions = fractions;
  prof.mass_inside.assign(fractions.size(), 0.0);
  std::vector<double> abs_sum(std::size_t{H} * W, 0.0);

  // Per fraction, the pixel rows/columns whose centres fall in the box.
  auto span_of = [](std::uint32_t n, double f, std::uint32_t& lo, std::uint32_t& hi) {
    const double a = n * 0.5 - f * n * 0.5;
    const double b = n * 0.5 + f * n * 0.5;
    lo = static_cast<std::uint32_t>(std::max(0.0, std::ceil(a - 0.5)));
    hi = static_cast<std::uint32_t>(std::min(static_cast<double>(n), std::floor(b - 0.5) + 1.0));
  };
  for (const Heatmap& m : maps) {
    if (m.height != H || m.width != W) {
      throw Error(ErrorCode::kShapeMismatch, "center_mass_profile", "maps differ in size");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double a = std::abs(static_cast<double>(m.values[i]));
      abs_sum[i] += a;
      total += a;
    }
    if (total == 0.0) continue;
    ++prof.maps_used;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      std::uint32_t y0, y1, x0, x1;
      span_of(H, fractions[k], y0, y1);
      span_of(W, fractions[k], x0, x1);
      double inside = 0.0;
      for (std::uint32_t y = y0; y < y1; ++y) {
        for (std::uint32_t x = x0; x < x1; ++x) inside += std::abs(static_cast<double>(m.at(y, x)));
      }
      prof.mass_inside[k] += inside / total;
    }
  }
  if (prof.maps_used > 0) {
    for (double& v : prof.mass_inside) v /= static_cast<double>(prof.maps_used);
  }
  prof.mean_abs = Heatmap(H, W);
  for (std::size_t i = 0; i < abs_sum.size(); ++i) {
    prof.mean_abs.values[i] = static_cast<float>(abs_sum[i] / static_cast<double>(maps.size()));
  }
  prof.mean_abs.provenance.method = "mean_abs_relevance";
  return prof;
}

Heatmap class_average_heatmap(const std::vector<Heatmap>& maps,
                              const std::vector<int>& predicted, int cls) {
  if (maps.size() != predicted.size()) {
    throw Error(ErrorCode::kShapeMismatch, "class_average_heatmap", "one prediction per map");
  }
  std::vector<double> acc;
  std::size_t count = 0;
  Heatmap out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (predicted[i] != cls) continue;
    if (count == 0) {
      out = Heatmap(maps[i].height, maps[i].width);
      acc.assign(maps[i].size(), 0.0);
    } else if (maps[i].height != out.height || maps[i].width != out.width) {
      throw Error(ErrorCode::kShapeMismatch, "class_average_heatmap", "maps differ in size");
    }
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += maps[i].values[k];
    ++count;
  }
  if (count == 0) {
    throw Error(ErrorCode::kEmptyInput, "class_average_heatmap",
                "no map predicted as class " + std::to_string(cls));
  }
  for (std::size_t k = 0; k < acc.size(); ++k) {
    out.values[k] = static_cast<float>(acc[k] / static_cast<double>(count));
  }
  out.provenance.method = "class_average";
  out.provenance.target_class = cls;
  return out;
}

std::vector<RegionComparisonRow> region_relevance_comparison(
    const std::vector<Heatmap>& maps_a, const std::vector<Heatmap>& maps_b,
    const std::vector<AnnotationSet>& tiles) {
  if (maps_a.size() != tiles.size() || maps_b.size() != tiles.size()) {
    throw Error(ErrorCode::kShapeMismatch, "region_relevance_comparison",
                "one map per tile and model required");
  }
  std::vector<RegionComparisonRow> rows;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const AnnotationSet& ann = tiles[t];
    for (const Heatmap* m : {&maps_a[t], &maps_b[t]}) {
      if (m->width != ann.width || m->height != ann.height) {
        throw Error(ErrorCode::kShapeMismatch, "region_relevance_comparison",
                    "map and tile " + ann.tile_id + " differ in size");
      }
    }
    for (const auto& r : ann.regions) {
      for (const auto& v : r.polygon) {
        if (v.x < -0.5 || v.y < -0.5 || v.x > ann.width - 0.5 || v.y > ann.height - 0.5) {
          throw Error(ErrorCode::kInvalidArgument, "region_relevance_comparison",
                      "region " + r.id + " outside tile " + ann.tile_id);
        }
      }
      const auto pixels = polygon_pixels(ann.width, ann.height, r.polygon);
      if (pixels.empty()) {
        throw Error(ErrorCode::kEmptyInput, "region_relevance_comparison",
                    "region " + r.id + " covers no pixel");
      }
      rows.push_back({ann.tile_id, r.id, r.cls, pixels.size(), rectified_mean(maps_a[t], pixels),
                      rectified_mean(maps_b[t], pixels)});
    }
  }
  return rows;
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::string out = "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    out += (i == 0 ? std::string("inf") : fmt(curve.thresholds[i - 1])) + "," +
           fmt(curve.fpr[i]) + "," + fmt(curve.tpr[i]) + "\n";
  }
  detail::write_text(path, out);
}

void write_scores_csv(const std::vector<ScoredItem>& items, const std::filesystem::path& path) {
  std::string out = "score,positive,source,label\n";
  for (const auto& it : items) {
    out += fmt(it.score) + "," + (it.positive ? "1" : "0") + "," + to_string(it.source) + "," +
           it.label + "\n";
  }
  detail::write_text(path, out);
}

void write_metrics_csv(const ClassifierMetrics& m, const std::filesystem::path& path) {
  std::string out = "class,precision,recall,f1,support\n";
  for (int c = 0; c < 2; ++c) {
    out += std::to_string(c) + "," + fmt(m.precision[c]) + "," + fmt(m.recall[c]) + "," +
           fmt(m.f1[c]) + "," + std::to_string(m.support[c]) + "\n";
  }
  out += "weighted,,," + fmt(m.weighted_f1) + "," +
         std::to_string(m.support[0] + m.support[1]) + "\n";
  out += "accuracy,,," + fmt(m.accuracy) + ",\n";
  out += "confusion,tn=" + std::to_string(m.confusion[0][0]) +
         ",fp=" + std::to_string(m.confusion[0][1]) + ",fn=" + std::to_string(m.confusion[1][0]) +
         ",tp=" + std::to_string(m.confusion[1][1]) + "\n";
  detail::write_text(path, out);
}

Image plot_roc(const std::vector<RocCurve>& curves, std::uint32_t size) {
  if (size < 16) throw Error(ErrorCode::kInvalidArgument, "plot_roc", "plot too small");
  Image img(size, size, Rgb{255, 255, 255});
  const double span = size - 1;
  auto line = [&](double fx0, double fy0, double fx1, double fy1, Rgb c) {
    const double x0 = fx0 * span, y0 = (1.0 - fy0) * span;
    const double x1 = fx1 * span, y1 = (1.0 - fy1) * span;
    const auto steps = static_cast<long>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (long s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / static_cast<double>(steps);
      img.set(static_cast<std::uint32_t>(std::lround(x0 + t * (x1 - x0))),
              static_cast<std::uint32_t>(std::lround(y0 + t * (y1 - y0))), c);
    }
  };
  line(0, 0, 1, 0, Rgb{0, 0, 0});
  line(0, 0, 0, 1, Rgb{0, 0, 0});
  line(0, 0, 1, 1, Rgb{180, 180, 180});
  static constexpr Rgb kPalette[] = {{214, 39, 40}, {31, 119, 180}, {44, 160, 44}, {255, 127, 14},
                                     {148, 103, 189}};
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const Rgb colour = kPalette[k % std::size(kPalette)];
    for (std::size_t i = 1; i < c.fpr.size(); ++i) {
      line(c.fpr[i - 1], c.tpr[i - 1], c.fpr[i], c.tpr[i], colour);
    }
  }
  return img;
}

}  // namespace rlvs
