#include "lgps/core.hpp"

#include <cmath>

namespace lgps {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kSegmentationFailed: return "segmentation-failed";
    case ErrorKind::kGenerationFailed: return "generation-failed";
    case ErrorKind::kInvalidPose: return "invalid-pose";
    case ErrorKind::kNoTangent: return "no-tangent";
    case ErrorKind::kTrainingDiverged: return "training-diverged";
    case ErrorKind::kOptimization: return "optimization";
    case ErrorKind::kDepthUnavailable: return "depth-unavailable";
    case ErrorKind::kData: return "data";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

double norm(Point2 a) { return std::hypot(a.x, a.y); }

double normalize_theta(double theta) {
  if (!std::isfinite(theta)) {
    fail(ErrorKind::kInvalidArgument, "theta must be finite");
  }
  double t = std::fmod(theta + kPi / 2.0, kPi);
  if (t < 0.0) t += kPi;
  t -= kPi / 2.0;
  // fmod can land exactly on the excluded upper bound after the shift.
  if (t >= kPi / 2.0) t -= kPi;
  if (t < -kPi / 2.0) t = -kPi / 2.0;
  return t;
}

const char* to_string(SceneSource source) {
  switch (source) {
    case SceneSource::kCornell: return "cornell";
    case SceneSource::kCustom: return "custom";
    case SceneSource::kSynthetic: return "synthetic";
  }
  return "custom";
}

SceneSource scene_source_from_string(const std::string& name) {
  if (name == "cornell") return SceneSource::kCornell;
  if (name == "custom") return SceneSource::kCustom;
  if (name == "synthetic") return SceneSource::kSynthetic;
  fail(ErrorKind::kInvalidArgument, "unknown scene source '" + name + "'");
}

void validate(Scene& scene) {
  if (scene.rgb.channels() != 3) {
    fail(ErrorKind::kInvalidArgument, "scene " + scene.id + ": rgb must have 3 channels");
  }
  if (!scene.depth.same_shape(scene.rgb.width(), scene.rgb.height())) {
    fail(ErrorKind::kInvalidArgument, "scene " + scene.id + ": rgb/depth size mismatch");
  }
  if (scene.width() < kMinSceneSide || scene.height() < kMinSceneSide) {
    fail(ErrorKind::kInvalidArgument, "scene " + scene.id + ": image smaller than 128x128");
  }
  scene.has_missing_depth = false;
  for (double d : scene.depth.data()) {
    if (!std::isfinite(d) || d < 0.0) {
      fail(ErrorKind::kInvalidArgument, "scene " + scene.id + ": depth must be finite and >= 0");
    }
    if (d == 0.0) scene.has_missing_depth = true;
  }
}

GraspPose::GraspPose(double x_, double y_, double theta_, std::optional<double> width_)
    : x(x_), y(y_), theta(normalize_theta(theta_)), width(width_) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    fail(ErrorKind::kInvalidArgument, "grasp position must be finite");
  }
  if (width && !(*width > 0.0 && std::isfinite(*width))) {
    fail(ErrorKind::kInvalidArgument, "grasp width must be positive");
  }
}

GraspRect::GraspRect(const GraspPose& pose, double height) : pose_(pose), height_(height) {
  if (!pose_.width) {
    fail(ErrorKind::kInvalidArgument, "grasp rectangle requires a width");
  }
  if (!(height_ > 0.0 && std::isfinite(height_))) {
    fail(ErrorKind::kInvalidArgument, "grasp rectangle height must be positive");
  }
}

std::array<Point2, 4> rect_corners(const GraspRect& rect) {
  const double c = std::cos(rect.pose().theta);
  const double s = std::sin(rect.pose().theta);
  const double hw = rect.width() / 2.0;
  const double hh = rect.height() / 2.0;
  const Point2 center{rect.pose().x, rect.pose().y};
  const std::array<Point2, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  std::array<Point2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = center + Point2{c * local[i].x - s * local[i].y, s * local[i].x + c * local[i].y};
  }
  return out;
}

Label make_label(std::string scene_id, GraspPose pose, Polarity polarity) {
  if (polarity == Polarity::kPositive && !pose.width) {
    fail(ErrorKind::kInvalidArgument, "positive label requires a width");
  }
  if (polarity == Polarity::kNegative) pose.width.reset();
  return Label{std::move(scene_id), pose, polarity};
}

void to_json(nlohmann::json& j, const Point2& p) { j = nlohmann::json{{"x", p.x}, {"y", p.y}}; }

void to_json(nlohmann::json& j, const GraspPose& pose) {
  j = nlohmann::json{{"x", pose.x}, {"y", pose.y}, {"theta", pose.theta}};
  if (pose.width) j["width"] = *pose.width;
}

void from_json(const nlohmann::json& j, GraspPose& pose) {
  std::optional<double> width;
  if (j.contains("width") && !j.at("width").is_null()) width = j.at("width").get<double>();
  pose = GraspPose(j.at("x").get<double>(), j.at("y").get<double>(),
                   j.at("theta").get<double>(), width);
}

nlohmann::json to_json(const GraspRect& rect) {
  return nlohmann::json{{"pose", rect.pose()}, {"height", rect.height()}};
}

GraspRect grasp_rect_from_json(const nlohmann::json& j) {
  return GraspRect(j.at("pose").get<GraspPose>(), j.value("height", kDefaultRectHeight));
}

void to_json(nlohmann::json& j, const Label& label) {
  j = nlohmann::json{{"scene_id", label.scene_id},
                     {"pose", label.pose},
                     {"polarity", label.positive() ? "positive" : "negative"}};
  if (label.width()) j["width"] = *label.width();
}

void from_json(const nlohmann::json& j, Label& label) {
  const std::string polarity = j.at("polarity").get<std::string>();
  if (polarity != "positive" && polarity != "negative") {
    fail(ErrorKind::kInvalidArgument, "label polarity must be 'positive' or 'negative'");
  }
  GraspPose pose = j.at("pose").get<GraspPose>();
  if (j.contains("width") && !j.at("width").is_null()) {
    pose = GraspPose(pose.x, pose.y, pose.theta, j.at("width").get<double>());
  }
  label = make_label(j.at("scene_id").get<std::string>(), pose,
                     polarity == "positive" ? Polarity::kPositive : Polarity::kNegative);
}

nlohmann::json scene_metadata(const Scene& scene) {
  return nlohmann::json{{"id", scene.id},
                        {"object_id", scene.object_id},
                        {"source", to_string(scene.source)},
                        {"width", scene.width()},
                        {"height", scene.height()},
                        {"has_missing_depth", scene.has_missing_depth}};
}

}  // namespace lgps
