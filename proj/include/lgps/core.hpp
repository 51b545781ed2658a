#pragma once

#include <array>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lgps/error.hpp"
#include "lgps/image.hpp"
#include "lgps/rng.hpp"

namespace lgps {

inline constexpr double kPi = 3.14159265358979323846;

// Rectangle-metric tolerance height in pixels for predicted grasps.
inline constexpr double kDefaultRectHeight = 38.0;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double norm(Point2 a);

// Maps theta onto [-pi/2, pi/2) using the two-finger symmetry theta ~ theta + pi.
// Throws kInvalidArgument for non-finite input.
double normalize_theta(double theta);

enum class SceneSource { kCornell, kCustom, kSynthetic };

const char* to_string(SceneSource source);
SceneSource scene_source_from_string(const std::string& name);

// One RGB-D observation. Depth is in meters; 0 marks a missing reading.
struct Scene {
  std::string id;
  std::string object_id;
  SceneSource source = SceneSource::kCustom;
  RgbImage rgb;
  GrayImage depth;
  bool has_missing_depth = false;

  int width() const { return rgb.width(); }
  int height() const { return rgb.height(); }
};

inline constexpr int kMinSceneSide = 128;

// Checks the Scene invariants and recomputes has_missing_depth; throws kInvalidArgument.
void validate(Scene& scene);

// Planar grasp. Coordinates are pixels with x right and y down; theta is the
// direction of the gripper-opening axis, (cos theta, sin theta) in pixel coordinates.
struct GraspPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  std::optional<double> width;

  GraspPose() = default;
  GraspPose(double x_, double y_, double theta_, std::optional<double> width_ = std::nullopt);

  friend bool operator==(const GraspPose&, const GraspPose&) = default;
};

class GraspRect {
 public:
  GraspRect(const GraspPose& pose, double height = kDefaultRectHeight);
  GraspRect(double x, double y, double theta, double width, double height = kDefaultRectHeight)
      : GraspRect(GraspPose(x, y, theta, width), height) {}

  const GraspPose& pose() const { return pose_; }
  double width() const { return *pose_.width; }
  double height() const { return height_; }
  double area() const { return width() * height(); }

 private:
  GraspPose pose_;
  double height_;
};

// Vertices in counter-clockwise order (positive shoelace area in pixel
// coordinates): (-w/2,-h/2), (w/2,-h/2), (w/2,h/2), (-w/2,h/2) rotated by theta.
std::array<Point2, 4> rect_corners(const GraspRect& rect);

enum class Polarity { kPositive, kNegative };

struct Label {
  std::string scene_id;
  GraspPose pose;
  Polarity polarity = Polarity::kPositive;

  bool positive() const { return polarity == Polarity::kPositive; }
  // Gripper opening; set iff the label is positive.
  std::optional<double> width() const { return pose.width; }

  friend bool operator==(const Label&, const Label&) = default;
};

// Enforces "positive iff width present"; throws kInvalidArgument.
Label make_label(std::string scene_id, GraspPose pose, Polarity polarity);

// JSON forms. Field names follow the type definitions; angles in radians, coordinates in pixels.
void to_json(nlohmann::json& j, const Point2& p);
void to_json(nlohmann::json& j, const GraspPose& pose);
void from_json(const nlohmann::json& j, GraspPose& pose);
nlohmann::json to_json(const GraspRect& rect);
GraspRect grasp_rect_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const Label& label);
void from_json(const nlohmann::json& j, Label& label);
nlohmann::json scene_metadata(const Scene& scene);

}  // namespace lgps
