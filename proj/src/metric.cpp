#include "lgps/metric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include <spdlog/spdlog.h>

namespace lgps::metric {
namespace {

std::vector<Point2> polygon(const GraspRect& r) {
  const auto c = rect_corners(r);
  return {c.begin(), c.end()};
}

}  // namespace

double shoelace_area(const std::vector<Point2>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * twice;
}

std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip) {
  std::vector<Point2> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Point2 a = clip[e];
    const Point2 b = clip[(e + 1) % clip.size()];
    const Point2 edge = b - a;
    auto side = [&](Point2 p) { return cross(edge, p - a); };  // >= 0 inside for CCW clip
    std::vector<Point2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2 p = in[i];
      const Point2 q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

double intersection_area(const GraspRect& a, const GraspRect& b) {
  const auto clipped = clip_convex(polygon(a), polygon(b));
  if (clipped.size() < 3) return 0.0;
  return std::max(0.0, shoelace_area(clipped));
}

double rect_iou(const GraspRect& a, const GraspRect& b) {
  // Clip the same way regardless of argument order so iou(a,b) == iou(b,a) bitwise.
  const bool swap = std::make_tuple(a.pose().x, a.pose().y, a.pose().theta, a.width(), a.height()) >
                    std::make_tuple(b.pose().x, b.pose().y, b.pose().theta, b.width(), b.height());
  const double inter = swap ? intersection_area(b, a) : intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double angle_difference(double a, double b) {
  const double d = std::abs(normalize_theta(a) - normalize_theta(b));
  return std::min(d, kPi - d);
}

MatchResult rectangle_metric(const GraspRect& gt, const GraspRect& gc) {
  MatchResult r;
  r.iou = rect_iou(gt, gc);
  r.angle_diff = angle_difference(gt.pose().theta, gc.pose().theta);
  r.rm = r.iou > kIouThreshold && r.angle_diff <= kAngleThreshold + kAngleTolerance;
  return r;
}

SceneScore score_scene(const std::string& scene_id, const std::optional<GraspRect>& selected,
                       const std::vector<GraspRect>& positives) {
  SceneScore s;
  s.scene_id = scene_id;
  s.selected = selected;
  if (positives.empty()) return s;
  s.scored = true;
  if (!selected) return s;
  bool first = true;
  for (const auto& gt : positives) {
    const MatchResult m = rectangle_metric(gt, *selected);
    const bool better = first || (m.rm && !s.best.rm) || (m.rm == s.best.rm && m.iou > s.best.iou);
    if (better) s.best = m;
    first = false;
  }
  s.success = s.best.rm;
  return s;
}

Summary aggregate(const std::vector<SceneScore>& scores) {
  Summary out;
  for (const auto& s : scores) {
    if (!s.scored) {
      ++out.excluded;
      spdlog::warn("scene {} has no positive grasps; excluded from the score", s.scene_id);
      continue;
    }
    ++out.scenes;
    if (s.success) ++out.successes;
  }
  out.percentage = out.scenes > 0 ? 100.0 * out.successes / out.scenes : 0.0;
  return out;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<SceneScore>& scores) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "scene_id,x,y,theta,width,best_iou,angle_diff,rm\n";
  for (const auto& s : scores) {
    out << s.scene_id << ',';
    if (s.selected) {
      const auto& p = s.selected->pose();
      out << p.x << ',' << p.y << ',' << p.theta << ',' << s.selected->width() << ',';
    } else {
      out << ",,,,";
    }
    if (s.scored) {
      out << s.best.iou << ',' << s.best.angle_diff << ',' << (s.success ? 1 : 0) << '\n';
    } else {
      out << ",,\n";
    }
  }
}

nlohmann::json summary_json(const Summary& summary) {
  return {{"scenes", summary.scenes},
          {"excluded", summary.excluded},
          {"successes", summary.successes},
          {"percentage", summary.percentage}};
}

}  // namespace lgps::metric
