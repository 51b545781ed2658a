#include <cmath>

#include "doctest.h"
#include "lgps/imaging.hpp"
#include "scene_fixtures.hpp"

using namespace lgps;
using namespace lgps::imaging;

namespace {

BinaryMask mask_from(int w, int h, const std::function<bool(int, int)>& f) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(x, y) = f(x, y) ? 1 : 0;
  return m;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data()[i] && !b.data()[i]) return false;
  return true;
}

int components8(const BinaryMask& m) {
  Image<int> lab(m.width(), m.height());
  int n = 0;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y) || lab.at(x, y)) continue;
      ++n;
      std::vector<std::pair<int, int>> st{{x, y}};
      lab.at(x, y) = n;
      while (!st.empty()) {
        auto [cx, cy] = st.back();
        st.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (m.contains(nx, ny) && m.at(nx, ny) && !lab.at(nx, ny)) {
              lab.at(nx, ny) = n;
              st.emplace_back(nx, ny);
            }
          }
      }
    }
  }
  return n;
}

}  // namespace

TEST_CASE("segmentation recovers a dark rectangle") {
  const Scene s = fixtures::blob_scene(160, 140, fixtures::box(50, 40, 110, 90));
  const BinaryMask m = segment_foreground(s);
  int mismatch_far = 0;
  for (int y = 0; y < 140; ++y)
    for (int x = 0; x < 160; ++x) {
      const bool truth = x >= 50 && x < 110 && y >= 40 && y < 90;
      const int dist = std::max({50 - x, x - 109, 40 - y, y - 89});
      if (static_cast<bool>(m.at(x, y)) != truth && std::abs(dist) > 2) ++mismatch_far;
    }
  CHECK(mismatch_far == 0);
  CHECK(count(m) > 0);
}

TEST_CASE("segmentation uses depth alone and color alone") {
  Scene s = fixtures::blob_scene(128, 128, fixtures::box(40, 40, 80, 70));
  SegmenterConfig depth_only;
  depth_only.use_color = false;
  CHECK(count(segment_foreground(s, depth_only)) == doctest::Approx(40 * 30).epsilon(0.1));
  SegmenterConfig color_only;
  color_only.use_depth = false;
  CHECK(count(segment_foreground(s, color_only)) == doctest::Approx(40 * 30).epsilon(0.1));
}

TEST_CASE("segmentation keeps the larger blob and fails on empty scenes") {
  const auto two = [](int x, int y) { return fixtures::box(10, 10, 30, 30)(x, y) || fixtures::box(60, 50, 110, 100)(x, y); };
  const BinaryMask m = segment_foreground(fixtures::blob_scene(128, 128, two));
  CHECK(m.at(80, 70) == 1);
  CHECK(m.at(20, 20) == 0);
  CHECK(components8(m) == 1);

  const Scene empty = fixtures::blob_scene(128, 128, [](int, int) { return false; });
  try {
    segment_foreground(empty);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSegmentationFailed);
  }
}

TEST_CASE("canny edges") {
  CHECK(count(canny_edges(GrayImage(40, 40, 1, 3.0))) == 0);
  CHECK_THROWS_AS(canny_edges(GrayImage(10, 10), 0.5, 0.2), Error);
  CHECK_THROWS_AS(canny_edges(GrayImage(10, 10), -1.0, 0.2), Error);

  // Filled 30x30 square: edges within 1 px of the perimeter, count near 4*30.
  const BinaryMask sq = mask_from(64, 64, fixtures::box(17, 17, 47, 47));
  const BinaryMask e = canny_edges(mask_to_gray(sq));
  std::size_t near = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (!e.at(x, y)) continue;
      const double dx = std::max({16.5 - x, x - 46.5, 0.0});
      const double dy = std::max({16.5 - y, y - 46.5, 0.0});
      const double outside = std::hypot(dx, dy);
      const double inside = std::min({x - 16.5, 46.5 - x, y - 16.5, 46.5 - y});
      if (std::max(outside, inside) <= 1.0 + 1e-9) ++near;
    }
  CHECK(near == count(e));
  CHECK(static_cast<double>(count(e)) == doctest::Approx(120.0).epsilon(0.1));

  BinaryMask dot(32, 32);
  dot.at(16, 16) = 1;
  CHECK(count(mask_edges(dot)) <= 1);

  // Adding a constant leaves the edges unchanged.
  GrayImage g = mask_to_gray(sq);
  Rng rng(1);
  for (double& v : g.data()) v = 0.7 * v + 0.05 * rng.uniform();
  GrayImage shifted = g;
  for (double& v : shifted.data()) v += 12.5;
  CHECK(canny_edges(g) == canny_edges(shifted));
  CHECK(canny_edges(g, 0.02, 0.1) == canny_edges(shifted, 0.02, 0.1));
}

TEST_CASE("mask edges form an inner contour") {
  const BinaryMask sq = mask_from(64, 64, fixtures::box(10, 20, 50, 40));
  const BinaryMask e = mask_edges(sq);
  CHECK(subset(e, sq));
  // Every contour pixel touches the background.
  for (int y = 1; y < 63; ++y)
    for (int x = 1; x < 63; ++x) {
      if (!e.at(x, y)) continue;
      bool touches = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) touches |= !sq.at(x + dx, y + dy);
      CHECK(touches);
    }
  CHECK(static_cast<double>(count(e)) == doctest::Approx(2.0 * (40 + 20)).epsilon(0.1));
}

TEST_CASE("skeletonize") {
  CHECK(count(skeletonize(BinaryMask(20, 20))) == 0);

  const BinaryMask line = mask_from(40, 20, [](int x, int y) { return y == 10 && x >= 5 && x < 35; });
  CHECK(skeletonize(line) == line);

  const BinaryMask bar = mask_from(70, 20, fixtures::box(10, 8, 60, 13));
  const BinaryMask sk = skeletonize(bar);
  CHECK(subset(sk, bar));
  // Centerline of the medial axis spans length - thickness = 45.
  CHECK(count(sk) >= 45);
  CHECK(count(sk) <= 50);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 70; ++x)
      if (sk.at(x, y)) CHECK(y == 10);

  const BinaryMask disk = mask_from(60, 60, [](int x, int y) { return std::hypot(x - 30, y - 30) <= 12; });
  CHECK(count(skeletonize(disk)) <= 5);
  CHECK(count(skeletonize(disk)) >= 1);

  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    BinaryMask blobs(48, 48);
    for (int b = 0; b < 3; ++b) {
      const int cx = 6 + static_cast<int>(rng.below(36)), cy = 6 + static_cast<int>(rng.below(36));
      const int rx = 2 + static_cast<int>(rng.below(8)), ry = 2 + static_cast<int>(rng.below(8));
      for (int y = std::max(0, cy - ry); y < std::min(48, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x < std::min(48, cx + rx); ++x) blobs.at(x, y) = 1;
    }
    const BinaryMask s = skeletonize(blobs);
    CHECK(subset(s, blobs));
    CHECK(components8(s) == components8(blobs));
  }
}

TEST_CASE("normals from depth") {
  const NormalMap flat = normals_from_depth(GrayImage(16, 16, 1, 0.7));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      CHECK(flat.at(x, y, 0) == 0.0);
      CHECK(flat.at(x, y, 1) == 0.0);
      CHECK(flat.at(x, y, 2) == 1.0);
    }

  const double s = 0.3;
  GrayImage ramp(20, 10), down(20, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) {
      ramp.at(x, y) = 1.0 + s * x;
      down.at(x, y) = 20.0 - s * x;
    }
  const NormalMap n = normals_from_depth(ramp);
  const NormalMap m = normals_from_depth(down);
  const double k = 1.0 / std::sqrt(1.0 + s * s);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) {
      CHECK(n.at(x, y, 0) == doctest::Approx(-s * k));
      CHECK(n.at(x, y, 1) == doctest::Approx(0.0));
      CHECK(n.at(x, y, 2) == doctest::Approx(k));
      CHECK(m.at(x, y, 0) == doctest::Approx(-n.at(x, y, 0)));
    }

  GrayImage holes(12, 12, 1, 0.5);
  Rng rng(4);
  for (double& v : holes.data()) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.4, 0.6);
  const NormalMap h = normals_from_depth(holes, 50.0);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const double len = std::hypot(h.at(x, y, 0), h.at(x, y, 1), h.at(x, y, 2));
      CHECK(len == doctest::Approx(1.0).epsilon(1e-6));
      if (holes.at(x, y) == 0.0) {
        CHECK(h.at(x, y, 0) == 0.0);
        CHECK(h.at(x, y, 2) == 1.0);
      }
    }
}

TEST_CASE("morphology and components") {
  BinaryMask m(20, 20);
  m.at(5, 5) = 1;
  CHECK(count(open3(m)) == 0);
  CHECK(count(dilate3(m)) == 9);
  CHECK(count(erode3(dilate3(m))) == 1);
  const BinaryMask two = mask_from(20, 20, [](int x, int y) { return (x < 3 && y < 3) || (x > 10 && y > 10); });
  const BinaryMask big = largest_component(two);
  CHECK(count(big) == 81);
  CHECK(big.at(15, 15) == 1);
  CHECK(count(mask_and(two, big)) == 81);
  CHECK(count(mask_or(two, big)) == 90);
}

TEST_CASE("hsv conversion") {
  const Hsv red = rgb_to_hsv(255, 0, 0);
  CHECK(red.s == doctest::Approx(1.0));
  CHECK(red.v == doctest::Approx(1.0));
  const Hsv gray = rgb_to_hsv(128, 128, 128);
  CHECK(gray.s == doctest::Approx(0.0));
  CHECK(gray.v == doctest::Approx(128.0 / 255.0));
}
