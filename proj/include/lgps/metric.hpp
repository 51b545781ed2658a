#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgps/core.hpp"

namespace lgps::metric {

inline constexpr double kIouThreshold = 0.25;
inline constexpr double kAngleThreshold = kPi / 6.0;
// Angles that differ by exactly pi/6 in input can come out an ulp or two
// above it after normalization; they still count.
inline constexpr double kAngleTolerance = 1e-12;

struct MatchResult {
  double iou = 0.0;
  double angle_diff = 0.0;
  bool rm = false;
};

// Area of a simple polygon, positive when counter-clockwise in (x, y).
double shoelace_area(const std::vector<Point2>& poly);

// Clips subject against a convex, counter-clockwise clip polygon.
std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip);

double intersection_area(const GraspRect& a, const GraspRect& b);
double rect_iou(const GraspRect& a, const GraspRect& b);

// Distance between two grasp axes under theta ~ theta + pi; in [0, pi/2].
double angle_difference(double a, double b);

MatchResult rectangle_metric(const GraspRect& gt, const GraspRect& gc);

// Best match of `selected` against the positives: any rm hit wins, otherwise the highest IoU.
struct SceneScore {
  std::string scene_id;
  std::optional<GraspRect> selected;
  MatchResult best;
  bool scored = false;  // false when there were no positives
  bool success = false;
};

SceneScore score_scene(const std::string& scene_id, const std::optional<GraspRect>& selected,
                       const std::vector<GraspRect>& positives);

struct Summary {
  int scenes = 0;    // scored scenes (the denominator)
  int excluded = 0;  // scenes without positives
  int successes = 0;
  double percentage = 0.0;
};

// 100 * mean success over scored scenes; excluded scenes are logged.
Summary aggregate(const std::vector<SceneScore>& scores);

void write_report_csv(const std::filesystem::path& path, const std::vector<SceneScore>& scores);
nlohmann::json summary_json(const Summary& summary);

}  // namespace lgps::metric
