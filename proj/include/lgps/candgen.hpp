#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgps/core.hpp"
#include "lgps/imaging.hpp"

namespace lgps::candgen {

enum class Provenance { kEdge, kSkeleton };

const char* to_string(Provenance p);

struct CandidateSet {
  std::string scene_id;
  std::vector<GraspPose> poses;  // no width
  std::vector<Provenance> provenance;

  std::size_t size() const { return poses.size(); }
};

nlohmann::json to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const nlohmann::json& j);

struct CandidateConfig {
  // Minimum spacing between consecutive kept curve points; 4 px suits Cornell, 8 px the custom set.
  double min_dist = 4.0;
  // Angular jitter: zero-mean Gaussian, clamped to +/- jitter_clamp.
  double jitter_sigma = 0.2;
  double jitter_clamp = 0.4;
  int duplicates_per_point = 1;
  // Neighborhood radius (px) searched by local_tangent.
  double tangent_radius = 1.5;
  imaging::CannyConfig canny;
  imaging::SegmenterConfig segmenter;
};

// Orders curve pixels by a depth-first walk (components seeded in scan order,
// 4-neighbors preferred over diagonals) and keeps a pixel only if it is at
// least min_dist from the previously kept one.
std::vector<Point2> trace_and_subsample(const imaging::BinaryMask& curve, double min_dist);

// Unit direction of the segment joining the two nearest curve neighbors of
// `point` that lie on opposite sides of it, or the direction to the nearest
// neighbor when all neighbors are on one side. Throws kNoTangent if isolated.
Point2 local_tangent(Point2 point, const imaging::BinaryMask& curve, double radius = 1.5);

// Perpendicular grasps at subsampled edge and skeleton points. Throws
// kGenerationFailed when no candidate could be produced.
CandidateSet generate_candidates(const Scene& scene, const imaging::BinaryMask& edges,
                                 const imaging::BinaryMask& skeleton, Rng& rng,
                                 const CandidateConfig& config = {});

// Segmentation, mask edges, skeleton, and candidate generation in one call.
struct SceneCandidates {
  imaging::BinaryMask mask;
  imaging::BinaryMask edges;
  imaging::BinaryMask skeleton;
  CandidateSet candidates;
};

SceneCandidates candidates_for_scene(const Scene& scene, Rng& rng,
                                     const CandidateConfig& config = {},
                                     const imaging::Segmenter* segmenter = nullptr);

}  // namespace lgps::candgen
