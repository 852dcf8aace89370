#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rlvs/datagen.hpp"

using namespace rlvs;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig cfg = SynthConfig{}.scaled(0.5);
  cfg.case_size = 10;
  return cfg;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool has_tumor_point(const Sample& s) {
  for (const auto& p : s.annotations.points) {
    if (p.cls == PointClass::kCancer) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("generation is byte-deterministic") {
  const auto dir = fs::temp_directory_path() / "rlvs_gen_det";
  fs::remove_all(dir);
  SynthConfig cfg = small_config();
  cfg.necrosis_probability = 0.3;
  const auto a = write_dataset(gen_dataset(cfg, 24, 0.5, 11), dir / "a");
  const auto b = write_dataset(gen_dataset(cfg, 24, 0.5, 11), dir / "b");
  CHECK(bytes_of(dir / "a" / "manifest.json") == bytes_of(dir / "b" / "manifest.json"));
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(bytes_of(dir / "a" / a.entries[i].image) == bytes_of(dir / "b" / b.entries[i].image));
    CHECK(bytes_of(dir / "a" / a.entries[i].annotation) == bytes_of(dir / "b" / b.entries[i].annotation));
  }
  const auto other = gen_dataset(cfg, 24, 0.5, 12);
  CHECK_FALSE(other.samples[0].image == gen_dataset(cfg, 24, 0.5, 11).samples[0].image);
}

TEST_CASE("cancer count follows the rounding rule") {
  SynthConfig cfg = small_config();
  cfg.normal_density = 0.5;
  const auto d = gen_dataset(cfg, 1000, 0.84, 3);
  std::size_t cancer = 0;
  for (const auto& s : d.samples) {
    cancer += s.label == kCancer;
    CHECK((s.label == kCancer) == has_tumor_point(s));
  }
  CHECK(cancer == 840);
  CHECK(d.count(kCancer, true) + d.count(kCancer, false) == 840);
}

TEST_CASE("zero densities give background-only no-cancer patches") {
  SynthConfig cfg = small_config();
  cfg.tumor_density = 0.0;
  cfg.normal_density = 0.0;
  const auto d = gen_dataset(cfg, 20, 0.5, 4);
  for (const auto& s : d.samples) {
    CHECK(s.label == kNoCancer);
    CHECK(s.annotations.points.empty());
  }
}

TEST_CASE("labels, annotations and case-disjoint splits") {
  SynthConfig cfg = small_config();
  cfg.necrosis_probability = 0.4;
  const auto d = gen_dataset(cfg, 120, 0.3, 5);
  std::set<std::uint32_t> train_cases, test_cases;
  std::size_t test = 0;
  for (const auto& s : d.samples) {
    CHECK((s.label == kCancer) == has_tumor_point(s));
    CHECK_NOTHROW(s.annotations.validate());
    (s.train ? train_cases : test_cases).insert(s.case_id);
    test += !s.train;
    CHECK(s.region_classes.size() == s.annotations.regions.size());
  }
  for (auto c : test_cases) CHECK(train_cases.count(c) == 0);
  CHECK(test_cases.size() == 2);  // 12 cases, 20 %
  CHECK(test == 20);
}

TEST_CASE("tumour nuclei are larger and darker than normal ones") {
  SynthConfig cfg;
  cfg.tumor_density = 1.0;
  cfg.normal_density = 1.0;
  const auto d = gen_dataset(cfg, 40, 0.5, 6);
  double dark[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (const auto& s : d.samples) {
    for (const auto& p : s.annotations.points) {
      const Rgb c = s.image.at(static_cast<std::uint32_t>(std::lround(p.x)),
                               static_cast<std::uint32_t>(std::lround(p.y)));
      const int k = p.cls == PointClass::kCancer ? 1 : 0;
      dark[k] += luminance(c);
      ++n[k];
    }
  }
  REQUIRE(n[0] > 10);
  REQUIRE(n[1] > 10);
  CHECK(dark[1] / n[1] + 15 < dark[0] / n[0]);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.normal_nucleus_radius = {3.0, 5.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = SynthConfig{};
  cfg.tumor_density = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(gen_dataset(SynthConfig{}, 1, 0.5, 0), Error);
  CHECK_THROWS_AS(gen_dataset(SynthConfig{}, 10, 1.0, 0), Error);
  const SynthConfig c2 = SynthConfig::from_json(SynthConfig{}.scaled(0.75).to_json());
  CHECK(c2.hash() == SynthConfig{}.scaled(0.75).hash());
  CHECK(c2.patch_size == 48);
}

TEST_CASE("corner artifact") {
  Image img(12, 9, Rgb{10, 20, 30});
  img.set(5, 5, Rgb{1, 2, 3});
  inject_corner_artifact(img);
  std::size_t painted = 0;
  for (std::uint32_t y = 0; y < 9; ++y) {
    for (std::uint32_t x = 0; x < 12; ++x) painted += img.at(x, y) == kDefaultArtifactColor;
  }
  CHECK(painted == 25);
  for (std::uint32_t y = 0; y < 5; ++y) {
    for (std::uint32_t x = 0; x < 5; ++x) CHECK(img.at(x, y) == kDefaultArtifactColor);
  }
  CHECK(img.at(5, 5) == Rgb{1, 2, 3});
  CHECK(img.at(5, 0) == Rgb{10, 20, 30});
  Image twice = img;
  inject_corner_artifact(twice);
  CHECK(twice == img);
  Image tiny(4, 4);
  CHECK_THROWS_AS(inject_corner_artifact(tiny), Error);
}

TEST_CASE("centre-rule dataset") {
  const SynthConfig cfg = small_config();
  const auto d = make_center_bias_dataset(cfg, 40, 8);
  const double c = (cfg.patch_size - 1) / 2.0;
  std::size_t cancer = 0;
  for (const auto& s : d.samples) {
    std::size_t at_center = 0;
    for (const auto& p : s.annotations.points) {
      if (p.x == c && p.y == c) {
        ++at_center;
        CHECK((p.cls == PointClass::kCancer) == (s.label == kCancer));
      } else {
        CHECK(std::hypot(p.x - c, p.y - c) >= 0.2 * cfg.patch_size);
      }
    }
    CHECK(at_center == 1);
    cancer += s.label == kCancer;
  }
  CHECK(cancer == 20);
  const auto again = make_center_bias_dataset(cfg, 40, 8);
  for (std::size_t i = 0; i < d.samples.size(); ++i) CHECK(again.samples[i].image == d.samples[i].image);
}

TEST_CASE("excluding a region class") {
  SynthConfig cfg = small_config();
  auto none = gen_dataset(cfg, 30, 0.5, 9);
  const auto before = none.samples.size();
  CHECK(exclude_class(none, "necrosis") == 0);
  CHECK(none.samples.size() == before);

  // 100 train patches, 20 with necrosis; 10 test patches.
  DatasetManifest m;
  for (int i = 0; i < 110; ++i) {
    ManifestEntry e;
    e.train = i < 100;
    if (i % 5 == 0) e.region_classes = {"necrosis"};
    m.entries.push_back(e);
  }
  CHECK(exclude_class(m, "necrosis") == 20);
  std::size_t train = 0, test = 0;
  for (const auto& e : m.entries) (e.train ? train : test)++;
  CHECK(train == 80);
  CHECK(test == 10);
  const auto copy = m.entries.size();
  CHECK(exclude_class(m, "necrosis") == 0);
  CHECK(m.entries.size() == copy);
  CHECK_THROWS_AS(exclude_class(m, "tumour-ish"), Error);
}

TEST_CASE("manifest round trip") {
  const auto dir = fs::temp_directory_path() / "rlvs_gen_manifest";
  fs::remove_all(dir);
  SynthConfig cfg = small_config();
  cfg.necrosis_probability = 0.5;
  const auto data = gen_dataset(cfg, 12, 0.5, 10);
  const auto m = write_dataset(data, dir);
  const auto back = read_manifest(dir / "manifest.json");
  CHECK(back.entries.size() == 12);
  CHECK(back.config_hash == cfg.hash());
  const auto loaded = load_dataset(back);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(loaded.samples[i].image == data.samples[i].image);
    CHECK(loaded.samples[i].label == data.samples[i].label);
    CHECK(loaded.samples[i].annotations.points.size() == data.samples[i].annotations.points.size());
  }
  fs::remove(dir / m.entries[3].image);
  CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), Error);
}

TEST_CASE("evaluation tiles") {
  const SynthConfig cfg = small_config();
  TileOptions opt;
  opt.width = 160;
  opt.height = 120;
  opt.necrosis_regions = 2;
  const Sample t = gen_tile(cfg, opt, 4, "t4");
  CHECK(t.image.width == 160);
  CHECK(t.image.height == 120);
  CHECK(t.annotations.tile_id == "t4");
  CHECK(t.annotations.regions.size() == 2);
  CHECK_NOTHROW(t.annotations.validate());
  CHECK(t.annotations.points.size() > 20);
  CHECK(gen_tile(cfg, opt, 4, "t4").image == t.image);
}
