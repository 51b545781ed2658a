#include <cmath>
#include <set>

#include "doctest.h"
#include "lgps/core.hpp"
#include "lgps/rng.hpp"

using namespace lgps;

namespace {

double signed_area(const std::array<Point2, 4>& p) {
  double a = 0.0;
  for (int i = 0; i < 4; ++i) a += p[i].x * p[(i + 1) % 4].y - p[(i + 1) % 4].x * p[i].y;
  return 0.5 * a;
}

}  // namespace

TEST_CASE("normalize_theta") {
  CHECK(normalize_theta(0.0) == 0.0);
  CHECK(normalize_theta(kPi) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(normalize_theta(2.0) == doctest::Approx(2.0 - kPi));
  CHECK(normalize_theta(kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(normalize_theta(-kPi / 2) == -kPi / 2);
  CHECK_THROWS_AS(normalize_theta(NAN), Error);
  CHECK_THROWS_AS(normalize_theta(INFINITY), Error);

  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double t = rng.uniform(-50, 50);
    const double n = normalize_theta(t);
    CHECK(n >= -kPi / 2);
    CHECK(n < kPi / 2);
    CHECK(normalize_theta(n) == n);
    // Differs from t by a whole number of half turns.
    const double k = (t - n) / kPi;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("rect_corners") {
  const auto c = rect_corners(GraspRect(0, 0, 0, 2, 2));
  const std::array<Point2, 4> expect{{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
  for (int i = 0; i < 4; ++i) {
    CHECK(c[i].x == doctest::Approx(expect[i].x));
    CHECK(c[i].y == doctest::Approx(expect[i].y));
  }

  // Square turned a quarter: same vertex set.
  const auto q = rect_corners(GraspRect(0, 0, kPi / 2, 2, 2));
  for (const auto& p : q) {
    bool found = false;
    for (const auto& e : expect) found |= std::abs(p.x - e.x) < 1e-12 && std::abs(p.y - e.y) < 1e-12;
    CHECK(found);
  }

  // Rotation-matrix oracle for (5, 3, pi/4, 2, 1).
  const double r = std::sqrt(0.5);
  const auto d = rect_corners(GraspRect(5, 3, kPi / 4, 2, 1));
  const std::array<Point2, 4> local{{{-1, -0.5}, {1, -0.5}, {1, 0.5}, {-1, 0.5}}};
  for (int i = 0; i < 4; ++i) {
    CHECK(d[i].x == doctest::Approx(5 + r * local[i].x - r * local[i].y));
    CHECK(d[i].y == doctest::Approx(3 + r * local[i].x + r * local[i].y));
  }

  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const GraspRect rect(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-4, 4), rng.uniform(1, 80),
                         rng.uniform(1, 80));
    CHECK(signed_area(rect_corners(rect)) == doctest::Approx(rect.area()).epsilon(1e-9));
  }
}

TEST_CASE("pose and rect validation") {
  CHECK_THROWS_AS(GraspPose(0, 0, 0, 0.0), Error);
  CHECK_THROWS_AS(GraspPose(0, 0, 0, -3.0), Error);
  CHECK_THROWS_AS(GraspPose(NAN, 0, 0), Error);
  CHECK_THROWS_AS(GraspRect(GraspPose(0, 0, 0)), Error);
  CHECK_THROWS_AS(GraspRect(0, 0, 0, 10, 0), Error);
  CHECK(GraspRect(GraspPose(1, 2, 0, 10.0)).height() == 38.0);
  CHECK(GraspPose(1, 2, kPi, 10.0).theta == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("labels") {
  CHECK_THROWS_AS(make_label("s", GraspPose(1, 2, 0), Polarity::kPositive), Error);
  const Label neg = make_label("s", GraspPose(1, 2, 0, 30.0), Polarity::kNegative);
  CHECK_FALSE(neg.width());
  const Label pos = make_label("s", GraspPose(1, 2, 0.5, 30.0), Polarity::kPositive);
  CHECK(*pos.width() == 30.0);

  nlohmann::json j = pos;
  CHECK(j["polarity"] == "positive");
  CHECK(j["width"] == 30.0);
  CHECK(j.get<Label>() == pos);
  nlohmann::json jn = neg;
  CHECK_FALSE(jn.contains("width"));
  CHECK(jn.get<Label>() == neg);

  nlohmann::json bad = j;
  bad["polarity"] = "maybe";
  CHECK_THROWS_AS(bad.get<Label>(), Error);
  bad = j;
  bad.erase("width");
  bad["pose"].erase("width");
  CHECK_THROWS_AS(bad.get<Label>(), Error);
}

TEST_CASE("rect json round trip") {
  const GraspRect r(3, 4, -0.7, 25, 20);
  const GraspRect back = grasp_rect_from_json(to_json(r));
  CHECK(back.pose() == r.pose());
  CHECK(back.height() == 20.0);
}

TEST_CASE("scene validation") {
  Scene s;
  s.id = "x";
  s.rgb = RgbImage(128, 128, 3);
  s.depth = GrayImage(128, 128, 1, 0.5);
  CHECK_NOTHROW(validate(s));
  CHECK_FALSE(s.has_missing_depth);
  s.depth.at(3, 3) = 0.0;
  validate(s);
  CHECK(s.has_missing_depth);
  s.depth.at(3, 3) = -1.0;
  CHECK_THROWS_AS(validate(s), Error);
  s.depth.at(3, 3) = NAN;
  CHECK_THROWS_AS(validate(s), Error);
  s.depth = GrayImage(127, 128, 1, 0.5);
  CHECK_THROWS_AS(validate(s), Error);
  s.rgb = RgbImage(127, 128, 3);
  CHECK_THROWS_AS(validate(s), Error);
  CHECK(scene_source_from_string("cornell") == SceneSource::kCornell);
  CHECK_THROWS_AS(scene_source_from_string("nope"), Error);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  // First mt19937_64 output for the default seed is fixed by the standard.
  CHECK(Rng(5489).next_u64() == 14514284786278117030ull);

  Rng u(1);
  double sum = 0.0, sq = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double z = u.normal();
    sum += z;
    sq += z * z;
    seen.insert(u.below(7));
  }
  CHECK(std::abs(sum / 20000) < 0.03);
  CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
  CHECK(seen.size() == 7);
  CHECK(*seen.rbegin() == 6);

  Rng p(8);
  CHECK(p.split(1).next_u64() == Rng(8).split(1).next_u64());
  CHECK(p.split(1).next_u64() != p.split(2).next_u64());
}
