#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lgps/patch.hpp"
#include "scene_fixtures.hpp"

using namespace lgps;
using namespace lgps::patch;

namespace {

// Plus-shaped object, symmetric under quarter turns about (cx, cy).
lgps::Scene cross_scene(int cx, int cy, int w = 160, int h = 160) {
  return fixtures::blob_scene(w, h, [=](int x, int y) {
    const int dx = std::abs(x - cx), dy = std::abs(y - cy);
    return (dx <= 20 && dy <= 5) || (dx <= 5 && dy <= 20);
  });
}

// Asymmetric textured object so that rotations are distinguishable.
lgps::Scene textured_scene(int ox, int oy, int w = 200, int h = 200) {
  lgps::Scene s = fixtures::blob_scene(w, h, [=](int x, int y) {
    return x >= ox && x < ox + 40 && y >= oy && y < oy + 25;
  });
  for (int y = oy; y < oy + 25; ++y)
    for (int x = ox; x < ox + 40; ++x) {
      s.rgb.at(x, y, 0) = static_cast<std::uint8_t>(5 * (x - ox));
      s.rgb.at(x, y, 1) = static_cast<std::uint8_t>(9 * (y - oy));
      s.depth.at(x, y) = 0.75 - 0.001 * (x - ox);
    }
  return s;
}

bool in_range(const Patch& p) {
  for (double v : p.data)
    if (!(v >= -1.0 && v <= 1.0)) return false;
  return true;
}

}  // namespace

TEST_CASE("normalize_channels endpoints") {
  NormalizationStats stats{0.5, 1.0};
  std::vector<double> raw = {255, 0, 127.5, 0.5, 0, 0, 1, 0, 0, 0, 1.0, 0.3, -0.4, 0.86, 0, 0, 0, 0.0, 0, 0, 1};
  normalize_channels(raw, 3, stats, 0.75);
  CHECK(raw[0] == 1.0);
  CHECK(raw[1] == -1.0);
  CHECK(raw[2] == 0.0);
  CHECK(raw[3] == -1.0);
  CHECK(raw[4] == 0.0);
  CHECK(raw[6] == 1.0);
  CHECK(raw[10] == 1.0);
  CHECK(raw[11] == 0.3);
  CHECK(raw[12] == -0.4);
  CHECK(raw[17] == doctest::Approx(0.0));  // missing depth takes 0.75, the mid-range

  std::vector<double> flat(7, 100.0);
  normalize_channels(flat, 1, NormalizationStats{0.8, 0.8}, 0.8);
  CHECK(flat[3] == 0.0);
  CHECK_THROWS_AS(normalize_channels(flat, 2, stats, 0.8), Error);
  CHECK_THROWS_AS(normalize_channels(flat, 1, NormalizationStats{0.0, INFINITY}, 0.8), Error);
}

TEST_CASE("depth statistics use robust percentiles") {
  Scene s = fixtures::blob_scene(128, 128, [](int, int) { return false; });
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) s.depth.at(x, y) = 0.5 + 0.5 * (y * 128 + x) / (128.0 * 128.0);
  s.depth.at(0, 0) = 0.0;
  s.depth.at(1, 0) = 50.0;
  const NormalizationStats st = compute_depth_stats(std::vector<Scene>{s});
  CHECK(st.depth_min == doctest::Approx(0.51).epsilon(1e-3));
  CHECK(st.depth_max == doctest::Approx(0.99).epsilon(1e-3));
}

TEST_CASE("axis-aligned pose gives a plain crop") {
  const Scene s = cross_scene(80, 80);
  const NormalizationStats stats{0.7, 0.85};
  const PatchExtractor ex(s, stats, PatchConfig{32});
  const Patch p = ex.extract(GraspPose(80, 80, 0.0));
  CHECK(p.size == 32);
  CHECK(p.data.size() == 7u * 32 * 32);
  for (int c = 0; c < kChannels; ++c)
    for (int v = 0; v < 32; ++v)
      for (int u = 0; u < 32; ++u) CHECK(p.at(c, v, u) == ex.normalized().at(80 - 16 + u, 80 - 16 + v, c));
  CHECK(in_range(p));
}

TEST_CASE("quarter-turned poses give rotated patches") {
  const Scene s = textured_scene(70, 80);
  const NormalizationStats stats = compute_depth_stats(std::vector<Scene>{s});
  const PatchExtractor ex(s, stats, PatchConfig{48});
  for (double theta : {0.0, 0.3, -1.1}) {
    const Patch a = ex.extract(GraspPose(90.4, 92.7, theta));
    const Patch b = ex.extract(GraspPose(90.4, 92.7, theta + kPi / 2));
    // b is stored with theta - pi/2 after canonicalization when theta + pi/2 >= pi/2.
    const bool wrapped = b.pose.theta < theta;
    double worst = 0.0;
    for (int c = 0; c < kChannels; ++c)
      for (int v = 1; v < 48; ++v)
        for (int u = 1; u < 48; ++u) {
          const int ua = wrapped ? v : 48 - v;
          const int va = wrapped ? 48 - u : u;
          worst = std::max(worst, std::abs(b.at(c, v, u) - a.at(c, va, ua)));
        }
    MESSAGE("theta " << theta << ": max diff " << worst);
    CHECK(worst <= 0.05);
  }
}

TEST_CASE("half-turn extraction is the patch turned by 180 degrees") {
  const Scene s = textured_scene(70, 80);
  const NormalizationStats stats = compute_depth_stats(std::vector<Scene>{s});
  const PatchExtractor ex(s, stats, PatchConfig{32, 1.5});
  for (double theta : {0.0, 0.7, -1.2}) {
    const GraspPose pose(88.2, 91.9, theta);
    const Patch a = ex.extract(pose);
    const Patch b = ex.extract(pose, true);
    CHECK(b.pose == pose);
    // Grid offsets run from -P/2, so the half turn maps (u, v) onto (P - u, P - v).
    double worst = 0.0;
    for (int c = 0; c < kChannels; ++c)
      for (int v = 1; v < 32; ++v)
        for (int u = 1; u < 32; ++u) worst = std::max(worst, std::abs(b.at(c, v, u) - a.at(c, 32 - v, 32 - u)));
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("translation moves the patch with the content") {
  const Scene s1 = textured_scene(60, 70), s2 = textured_scene(73, 61);
  const NormalizationStats stats{0.7, 0.85};
  const PatchExtractor e1(s1, stats, PatchConfig{32}), e2(s2, stats, PatchConfig{32});
  const Patch a = e1.extract(GraspPose(75.3, 82.6, 0.4));
  const Patch b = e2.extract(GraspPose(88.3, 73.6, 0.4));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  CHECK(worst <= 1e-9);
}

TEST_CASE("patches near the border use the fill value") {
  const Scene s = cross_scene(80, 80);
  const NormalizationStats stats{0.7, 0.85};
  const PatchExtractor ex(s, stats, PatchConfig{32});
  const Patch p = ex.extract(GraspPose(0, 0, 0.0));
  for (int c = 0; c < kChannels; ++c) CHECK(p.at(c, 0, 0) == ex.fill()[c]);
  CHECK(in_range(p));
  CHECK(ex.fill()[0] == doctest::Approx(250 / 127.5 - 1.0));
  CHECK(ex.fill()[6] == 1.0);

  for (const GraspPose& bad : {GraspPose(-1, 5, 0), GraspPose(5, 160, 0), GraspPose(160.5, 3, 0)}) {
    try {
      ex.extract(bad);
      FAIL("expected invalid pose");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kInvalidPose);
    }
  }
}

TEST_CASE("extraction is deterministic and bounded") {
  const Scene s = textured_scene(50, 50, 160, 160);
  const NormalizationStats stats = compute_depth_stats(std::vector<Scene>{s});
  const PatchExtractor ex(s, stats, PatchConfig{32, 2.0});
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const GraspPose pose(rng.uniform(0, 159), rng.uniform(0, 159), rng.uniform(-2, 2));
    const Patch a = ex.extract(pose);
    CHECK(a.data == ex.extract(pose).data);
    CHECK(in_range(a));
  }
  const imaging::NormalMap n = imaging::normals_from_depth(s.depth, 1000.0);
  CHECK(extract_patch(s, n, GraspPose(60, 60, 0.2), stats, PatchConfig{32, 2.0}).data ==
        ex.extract(GraspPose(60, 60, 0.2)).data);
}

TEST_CASE("patch corpus round trip") {
  const Scene s = cross_scene(80, 80);
  const PatchExtractor ex(s, NormalizationStats{0.7, 0.85}, PatchConfig{16});
  PatchCorpus corpus;
  corpus.add(ex.extract(GraspPose(80, 80, 0.1)));
  corpus.add(ex.extract(GraspPose(70, 85, -0.6)));
  CHECK(corpus.count() == 2);
  CHECK_THROWS_AS(corpus.add(PatchExtractor(s, NormalizationStats{0.7, 0.85}, PatchConfig{8}).extract(GraspPose(80, 80, 0))),
                  Error);

  const auto path = std::filesystem::temp_directory_path() / "lgps_corpus_test.bin";
  write_corpus(path, corpus);
  CHECK(std::filesystem::file_size(path) == 8 + 4 + 4 + 4 + 8 + 4 * corpus.data.size());
  const PatchCorpus back = read_corpus(path);
  CHECK(back.size == 16);
  CHECK(back.channels == 7);
  CHECK(back.data == corpus.data);

  {
    std::ofstream trunc(path, std::ios::binary | std::ios::trunc);
    trunc << "LGPSPTCH";
  }
  CHECK_THROWS_AS(read_corpus(path), Error);
  {
    std::ofstream junk(path, std::ios::binary | std::ios::trunc);
    junk << "NOTACORPUS-------------------";
  }
  CHECK_THROWS_AS(read_corpus(path), Error);
  std::filesystem::remove(path);
}
