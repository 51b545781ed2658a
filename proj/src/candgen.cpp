#include "lgps/candgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace lgps::candgen {
namespace {

// Walk preference: 4-neighbors (E, S, W, N) then diagonals.
constexpr std::array<int, 8> kWalkDx{1, 0, -1, 0, 1, -1, -1, 1};
constexpr std::array<int, 8> kWalkDy{0, 1, 0, -1, 1, 1, -1, -1};

double clamped_jitter(Rng& rng, double sigma, double clamp) {
  if (sigma <= 0.0) return 0.0;
  return std::clamp(rng.normal(0.0, sigma), -clamp, clamp);
}

}  // namespace

const char* to_string(Provenance p) { return p == Provenance::kEdge ? "edge" : "skeleton"; }

nlohmann::json to_json(const CandidateSet& set) {
  nlohmann::json poses = nlohmann::json::array();
  for (std::size_t i = 0; i < set.poses.size(); ++i) {
    nlohmann::json p = set.poses[i];
    p["provenance"] = to_string(set.provenance[i]);
    poses.push_back(std::move(p));
  }
  return nlohmann::json{{"scene_id", set.scene_id}, {"count", set.size()}, {"poses", poses}};
}

CandidateSet candidate_set_from_json(const nlohmann::json& j) {
  CandidateSet set;
  set.scene_id = j.at("scene_id").get<std::string>();
  for (const auto& p : j.at("poses")) {
    set.poses.push_back(p.get<GraspPose>());
    set.provenance.push_back(p.value("provenance", "edge") == "edge" ? Provenance::kEdge
                                                                      : Provenance::kSkeleton);
  }
  return set;
}

std::vector<Point2> trace_and_subsample(const imaging::BinaryMask& curve, double min_dist) {
  if (!(min_dist > 0.0)) fail(ErrorKind::kInvalidArgument, "min_dist must be positive");
  const int w = curve.width(), h = curve.height();
  Image<std::uint8_t> visited(w, h);
  std::vector<Point2> kept;
  std::vector<std::pair<int, int>> stack;
  bool have_prev = false;
  Point2 prev;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      if (!curve.at(sx, sy) || visited.at(sx, sy)) continue;
      stack.assign(1, {sx, sy});
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        if (visited.at(x, y)) continue;
        visited.at(x, y) = 1;
        const Point2 p{static_cast<double>(x), static_cast<double>(y)};
        if (!have_prev || norm(p - prev) >= min_dist) {
          kept.push_back(p);
          prev = p;
          have_prev = true;
        }
        for (int k = 7; k >= 0; --k) {
          const int nx = x + kWalkDx[k], ny = y + kWalkDy[k];
          if (curve.contains(nx, ny) && curve.at(nx, ny) && !visited.at(nx, ny)) {
            stack.emplace_back(nx, ny);
          }
        }
      }
    }
  }
  return kept;
}

Point2 local_tangent(Point2 point, const imaging::BinaryMask& curve, double radius) {
  const int px = static_cast<int>(std::lround(point.x));
  const int py = static_cast<int>(std::lround(point.y));
  const int r = static_cast<int>(std::ceil(radius));
  struct Neighbor {
    Point2 offset;
    double dist;
  };
  std::vector<Neighbor> neighbors;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const int x = px + dx, y = py + dy;
      if (!curve.contains(x, y) || !curve.at(x, y)) continue;
      const double d = std::hypot(dx, dy);
      if (d <= radius) neighbors.push_back({{double(dx), double(dy)}, d});
    }
  }
  if (neighbors.empty()) fail(ErrorKind::kNoTangent, "isolated curve point");
  std::stable_sort(neighbors.begin(), neighbors.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.dist < b.dist; });
  const Point2 first = neighbors.front().offset;
  Point2 dir = first;
  for (std::size_t i = 1; i < neighbors.size(); ++i) {
    if (dot(neighbors[i].offset, first) < 0.0) {
      dir = first - neighbors[i].offset;
      break;
    }
  }
  const double n = norm(dir);
  return {dir.x / n, dir.y / n};
}

CandidateSet generate_candidates(const Scene& scene, const imaging::BinaryMask& edges,
                                 const imaging::BinaryMask& skeleton, Rng& rng,
                                 const CandidateConfig& config) {
  CandidateSet set;
  set.scene_id = scene.id;
  const int duplicates = std::max(1, config.duplicates_per_point);
  auto add_curve = [&](const imaging::BinaryMask& curve, Provenance provenance) {
    for (const Point2& p : trace_and_subsample(curve, config.min_dist)) {
      Point2 t;
      try {
        t = local_tangent(p, curve, config.tangent_radius);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNoTangent) throw;
        continue;
      }
      const double base = std::atan2(t.y, t.x) + kPi / 2.0;
      for (int d = 0; d < duplicates; ++d) {
        const double theta = base + clamped_jitter(rng, config.jitter_sigma, config.jitter_clamp);
        set.poses.emplace_back(p.x, p.y, theta);
        set.provenance.push_back(provenance);
      }
    }
  };
  add_curve(edges, Provenance::kEdge);
  add_curve(skeleton, Provenance::kSkeleton);
  if (set.poses.empty()) {
    fail(ErrorKind::kGenerationFailed, "scene " + scene.id + ": no grasp candidates");
  }
  return set;
}

SceneCandidates candidates_for_scene(const Scene& scene, Rng& rng, const CandidateConfig& config,
                                     const imaging::Segmenter* segmenter) {
  SceneCandidates out;
  if (segmenter) {
    out.mask = segmenter->segment(scene);
  } else {
    out.mask = imaging::segment_foreground(scene, config.segmenter);
  }
  out.edges = imaging::mask_edges(out.mask, config.canny);
  out.skeleton = imaging::skeletonize(out.mask);
  out.candidates = generate_candidates(scene, out.edges, out.skeleton, rng, config);
  return out;
}

}  // namespace lgps::candgen
