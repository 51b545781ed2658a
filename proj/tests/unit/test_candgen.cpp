#include <cmath>

#include "doctest.h"
#include "lgps/candgen.hpp"
#include "scene_fixtures.hpp"

using namespace lgps;
using namespace lgps::candgen;
using imaging::BinaryMask;

namespace {

BinaryMask curve_from(int w, int h, const std::function<bool(int, int)>& f) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(x, y) = f(x, y) ? 1 : 0;
  return m;
}

// Distance between axis angles modulo pi.
double axis_gap(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

}  // namespace

TEST_CASE("trace_and_subsample") {
  const BinaryMask line = curve_from(30, 5, [](int x, int y) { return y == 2 && x < 20; });
  const auto pts = trace_and_subsample(line, 4.0);
  REQUIRE(pts.size() == 5);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(pts[i].x == 4.0 * static_cast<double>(i));
    CHECK(pts[i].y == 2.0);
  }

  BinaryMask one(10, 10);
  one.at(3, 7) = 1;
  const auto single = trace_and_subsample(one, 4.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == Point2{3, 7});
  CHECK(trace_and_subsample(BinaryMask(10, 10), 4.0).empty());
  CHECK_THROWS_AS(trace_and_subsample(line, 0.0), Error);

  // Consecutive kept points respect the spacing on a closed curve.
  const BinaryMask ring = curve_from(80, 80, [](int x, int y) {
    const double r = std::hypot(x - 40, y - 40);
    return r >= 24.5 && r < 25.5;
  });
  for (double d : {3.0, 4.0, 8.0}) {
    const auto kept = trace_and_subsample(ring, d);
    CHECK(kept.size() > 3);
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(norm(kept[i] - kept[i - 1]) >= d);
  }
}

TEST_CASE("local_tangent") {
  const BinaryMask line = curve_from(20, 5, [](int x, int y) { return y == 2 && x >= 3 && x < 15; });
  const Point2 t = local_tangent({8, 2}, line);
  CHECK(std::abs(t.x) == doctest::Approx(1.0));
  CHECK(t.y == doctest::Approx(0.0));

  const BinaryMask diag = curve_from(20, 20, [](int x, int y) { return x == y; });
  const Point2 d = local_tangent({10, 10}, diag);
  CHECK(std::abs(d.x) == doctest::Approx(std::sqrt(0.5)));
  CHECK(d.x * d.y > 0.0);
  CHECK(std::abs(d.y) == doctest::Approx(std::sqrt(0.5)));

  const Point2 end = local_tangent({3, 2}, line);
  CHECK(end.x == doctest::Approx(1.0));
  CHECK(end.y == doctest::Approx(0.0));

  BinaryMask lone(10, 10);
  lone.at(5, 5) = 1;
  try {
    local_tangent({5, 5}, lone);
    FAIL("expected no-tangent");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNoTangent);
  }
}

TEST_CASE("candidates without jitter on a horizontal skeleton") {
  const Scene s = fixtures::blob_scene(128, 128, fixtures::box(20, 60, 100, 66));
  const BinaryMask skel = curve_from(128, 128, [](int x, int y) { return y == 63 && x >= 22 && x < 98; });
  CandidateConfig cfg;
  cfg.jitter_sigma = 0.0;
  Rng rng(1);
  const CandidateSet set = generate_candidates(s, BinaryMask(128, 128), skel, rng, cfg);
  REQUIRE(set.size() > 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(set.poses[i].theta == -kPi / 2);
    CHECK(set.provenance[i] == Provenance::kSkeleton);
    CHECK_FALSE(set.poses[i].width);
  }
}

TEST_CASE("candidates on a horizontal bar") {
  const Scene s = fixtures::blob_scene(160, 128, fixtures::box(20, 54, 140, 74));
  Rng rng(7);
  CandidateConfig cfg;
  const SceneCandidates sc = candidates_for_scene(s, rng, cfg);
  const CandidateSet& set = sc.candidates;
  REQUIRE(set.size() > 10);

  std::size_t perpendicular = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const GraspPose& p = set.poses[i];
    CHECK(p.theta >= -kPi / 2);
    CHECK(p.theta < kPi / 2);
    const int x = static_cast<int>(p.x), y = static_cast<int>(p.y);
    CHECK((sc.edges.at(x, y) || sc.skeleton.at(x, y)));
    if (axis_gap(p.theta, kPi / 2) <= 0.4) ++perpendicular;
  }
  const double frac = static_cast<double>(perpendicular) / static_cast<double>(set.size());
  MESSAGE(set.size() << " candidates, " << frac << " perpendicular to the long axis");
  CHECK(frac >= 0.75);

  // Jitter never exceeds the clamp around the unjittered angle.
  CandidateConfig flat = cfg;
  flat.jitter_sigma = 0.0;
  Rng r0(7), r1(7);
  const CandidateSet base = generate_candidates(s, sc.edges, sc.skeleton, r0, flat);
  const CandidateSet jit = generate_candidates(s, sc.edges, sc.skeleton, r1, cfg);
  REQUIRE(base.size() == jit.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(axis_gap(base.poses[i].theta, jit.poses[i].theta) <= 0.4 + 1e-12);
    CHECK(base.poses[i].x == jit.poses[i].x);
  }

  // Same seed, same output.
  Rng again(7);
  const CandidateSet repeat = candidates_for_scene(s, again, cfg).candidates;
  CHECK(repeat.poses == set.poses);

  // Doubling the spacing roughly halves the count.
  CandidateConfig wide = cfg;
  wide.min_dist = 8.0;
  Rng r2(7);
  const double ratio = static_cast<double>(generate_candidates(s, sc.edges, sc.skeleton, r2, wide).size()) /
                       static_cast<double>(set.size());
  MESSAGE("count ratio 8px/4px = " << ratio);
  CHECK(ratio >= 0.4);
  CHECK(ratio <= 0.65);

  CandidateConfig dup = cfg;
  dup.duplicates_per_point = 3;
  Rng r3(7);
  CHECK(generate_candidates(s, sc.edges, sc.skeleton, r3, dup).size() == 3 * set.size());
}

TEST_CASE("candidate set json and failures") {
  CandidateSet set;
  set.scene_id = "abc";
  set.poses = {GraspPose(1, 2, 0.5), GraspPose(3, 4, -1.0)};
  set.provenance = {Provenance::kEdge, Provenance::kSkeleton};
  const nlohmann::json j = to_json(set);
  CHECK(j["count"] == 2);
  const CandidateSet back = candidate_set_from_json(j);
  CHECK(back.scene_id == "abc");
  CHECK(back.poses == set.poses);
  CHECK(back.provenance == set.provenance);

  const Scene s = fixtures::blob_scene(128, 128, fixtures::box(20, 20, 40, 40));
  Rng rng(1);
  try {
    generate_candidates(s, BinaryMask(128, 128), BinaryMask(128, 128), rng);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kGenerationFailed);
  }
}
