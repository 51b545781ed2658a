#include "lgps/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace lgps::dataset {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- regions

double distance_to_segment(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + t * ab));
}

bool in_region(const Region& region, const GraspPose& pose, double slack, double angle_tolerance) {
  if (distance_to_segment({pose.x, pose.y}, region.a, region.b) > region.half_width + slack) return false;
  const Point2 d = region.b - region.a;
  const double cross_dir = std::atan2(d.y, d.x) + kPi / 2.0;
  double gap = std::fmod(std::abs(normalize_theta(cross_dir) - pose.theta), kPi);
  gap = std::min(gap, kPi - gap);
  return gap <= angle_tolerance;
}

bool in_preferred(const RegionTruth& truth, const GraspPose& pose) {
  return std::any_of(truth.preferred.begin(), truth.preferred.end(),
                     [&](const Region& r) { return in_region(r, pose); });
}

namespace {

nlohmann::json region_json(const Region& r) {
  return {{"a", r.a}, {"b", r.b}, {"half_width", r.half_width}};
}

Region region_from(const nlohmann::json& j) {
  return {{j.at("a").at("x").get<double>(), j.at("a").at("y").get<double>()},
          {j.at("b").at("x").get<double>(), j.at("b").at("y").get<double>()},
          j.at("half_width").get<double>()};
}

nlohmann::json truth_json(const RegionTruth& t) {
  nlohmann::json pref = nlohmann::json::array(), forb = nlohmann::json::array();
  for (const auto& r : t.preferred) pref.push_back(region_json(r));
  for (const auto& r : t.forbidden) forb.push_back(region_json(r));
  return {{"preferred", pref}, {"forbidden", forb}};
}

RegionTruth truth_from(const nlohmann::json& j) {
  RegionTruth t;
  for (const auto& r : j.at("preferred")) t.preferred.push_back(region_from(r));
  for (const auto& r : j.at("forbidden")) t.forbidden.push_back(region_from(r));
  return t;
}

}  // namespace

// ---------------------------------------------------------------- index

void DatasetIndex::add_scene(SceneEntry entry) {
  if (by_id_.count(entry.id)) fail(ErrorKind::kData, "duplicate scene id '" + entry.id + "'");
  by_id_[entry.id] = entries.size();
  entries.push_back(std::move(entry));
}

void DatasetIndex::add_label(const Label& label, double height) {
  labels.push_back(label);
  heights.push_back(height);
}

long DatasetIndex::find(const std::string& scene_id) const {
  const auto it = by_id_.find(scene_id);
  return it == by_id_.end() ? -1 : static_cast<long>(it->second);
}

std::shared_ptr<const Scene> DatasetIndex::load(std::size_t i) const {
  const SceneEntry& e = entries.at(i);
  if (e.scene) return e.scene;
  if (!e.loader) fail(ErrorKind::kData, "scene " + e.id + " has no data");
  return std::make_shared<const Scene>(e.loader());
}

std::shared_ptr<const Scene> DatasetIndex::load(const std::string& scene_id) const {
  const long i = find(scene_id);
  if (i < 0) fail(ErrorKind::kData, "unknown scene '" + scene_id + "'");
  return load(static_cast<std::size_t>(i));
}

std::map<std::string, std::vector<std::size_t>> DatasetIndex::objects() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < entries.size(); ++i) out[entries[i].object_id].push_back(i);
  return out;
}

std::vector<std::size_t> DatasetIndex::labels_of(const std::string& scene_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i].scene_id == scene_id) out.push_back(i);
  return out;
}

std::vector<GraspRect> DatasetIndex::positives(const std::string& scene_id) const {
  std::vector<GraspRect> out;
  for (std::size_t i : labels_of(scene_id)) {
    if (labels[i].positive()) out.emplace_back(labels[i].pose, heights[i]);
  }
  return out;
}

void DatasetIndex::check() const {
  if (heights.size() != labels.size()) fail(ErrorKind::kData, "label heights out of sync");
  for (const Label& l : labels) {
    if (find(l.scene_id) < 0) fail(ErrorKind::kData, "label references unknown scene '" + l.scene_id + "'");
    if (l.positive() && !(l.width() && *l.width() > 0.0)) {
      fail(ErrorKind::kData, "positive label without width in scene '" + l.scene_id + "'");
    }
  }
}

std::size_t DatasetIndex::positive_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const Label& l) { return l.positive(); }));
}

std::size_t DatasetIndex::negative_count() const { return labels.size() - positive_count(); }

// ---------------------------------------------------------------- Cornell

GraspRect rect_from_corners(const std::array<Point2, 4>& c) {
  Point2 center{0.0, 0.0};
  for (const auto& p : c) center = center + 0.25 * p;
  const Point2 opening = c[1] - c[0];
  const double width = norm(opening);
  const double height = norm(c[2] - c[1]);
  if (!(width > 0.0) || !(height > 0.0)) fail(ErrorKind::kData, "degenerate rectangle");
  return GraspRect(GraspPose(center.x, center.y, std::atan2(opening.y, opening.x), width), height);
}

std::vector<GraspRect> read_cornell_rects(const fs::path& path, std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<Point2> points;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string sx, sy;
    if (!(ls >> sx >> sy)) continue;
    // stod handles "NaN" spellings that operator>> rejects.
    double x = NAN, y = NAN;
    try {
      x = std::stod(sx);
      y = std::stod(sy);
    } catch (const std::exception&) {
    }
    points.push_back({x, y});
  }
  std::vector<GraspRect> out;
  std::size_t bad = 0;
  for (std::size_t i = 0; i + 3 < points.size(); i += 4) {
    const std::array<Point2, 4> c{points[i], points[i + 1], points[i + 2], points[i + 3]};
    const bool finite = std::all_of(c.begin(), c.end(), [](Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); });
    if (!finite) {
      ++bad;
      continue;
    }
    try {
      out.push_back(rect_from_corners(c));
    } catch (const Error&) {
      ++bad;
    }
  }
  if (points.size() % 4 != 0) ++bad;
  if (skipped) *skipped += bad;
  return out;
}

void inpaint_nearest(GrayImage& depth) {
  const int w = depth.width(), h = depth.height();
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (depth.at(x, y) > 0.0) queue.emplace_back(x, y);
  if (queue.empty()) return;
  static constexpr int dx[4] = {1, -1, 0, 0};
  static constexpr int dy[4] = {0, 0, 1, -1};
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k], ny = y + dy[k];
      if (depth.contains(nx, ny) && depth.at(nx, ny) <= 0.0) {
        depth.at(nx, ny) = depth.at(x, y);
        queue.emplace_back(nx, ny);
      }
    }
  }
}

GrayImage read_cornell_depth(const fs::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  GrayImage depth(width, height);
  std::string line;
  bool data = false;
  std::vector<double> ranges;
  std::vector<long> where;
  while (std::getline(in, line)) {
    if (!data) {
      if (line.rfind("DATA", 0) == 0) data = true;
      continue;
    }
    std::istringstream ls(line);
    double x, y, z, rgb, index;
    if (!(ls >> x >> y >> z >> rgb >> index)) continue;
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) continue;
    ranges.push_back(std::sqrt(x * x + y * y + z * z));
    where.push_back(static_cast<long>(index));
  }
  if (ranges.empty()) fail(ErrorKind::kData, path.string() + " has no points");
  // Millimeters in the published files; fall back to meters for small values.
  std::vector<double> sorted = ranges;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  const double unit = sorted[sorted.size() / 2] > 10.0 ? 1e-3 : 1.0;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const long idx = where[i];
    const int r = static_cast<int>(idx / width), c = static_cast<int>(idx % width);
    if (idx >= 0 && depth.contains(c, r)) depth.at(c, r) = ranges[i] * unit;
  }
  inpaint_nearest(depth);
  return depth;
}

namespace {

// First two tokens of each line: scene number, object id.
std::map<std::string, std::string> read_object_map(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string scene, object;
    if (!(ls >> scene >> object)) continue;
    try {
      out[std::to_string(std::stol(scene))] = object;
    } catch (const std::exception&) {
    }
  }
  return out;
}

}  // namespace

DatasetIndex load_cornell(const fs::path& root, CornellStats* stats_out) {
  DatasetIndex index;
  CornellStats stats;
  if (!fs::is_directory(root)) fail(ErrorKind::kIo, root.string() + " is not a directory");
  const std::regex image_name(R"(pcd(\d+)r\.png)");
  std::vector<std::pair<std::string, fs::path>> images;
  std::map<std::string, std::string> object_of;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, image_name)) images.emplace_back(m[1].str(), e.path());
    if (name == "z.txt") {
      object_of = read_object_map(e.path());
      stats.object_map = true;
    }
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) spdlog::warn("no Cornell scenes found under {}", root.string());
  if (!images.empty() && !stats.object_map) {
    spdlog::warn("no z.txt object map under {}; every scene is its own object", root.string());
  }

  std::vector<std::string> failures;
  for (const auto& [number, png] : images) {
    const fs::path dir = png.parent_path();
    const std::string stem = "pcd" + number;
    const fs::path cloud = dir / (stem + ".txt");
    const fs::path cpos = dir / (stem + "cpos.txt");
    const fs::path cneg = dir / (stem + "cneg.txt");
    try {
      if (!fs::exists(cloud) || !fs::exists(cpos)) fail(ErrorKind::kIo, "missing point cloud or cpos file");
      std::size_t bad_pos = 0, bad_neg = 0;
      const auto pos = read_cornell_rects(cpos, &bad_pos);
      const auto neg = fs::exists(cneg) ? read_cornell_rects(cneg, &bad_neg) : std::vector<GraspRect>{};
      SceneEntry entry;
      entry.id = stem;
      const auto obj = object_of.find(std::to_string(std::stol(number)));
      entry.object_id = obj != object_of.end() ? obj->second : stem;
      entry.source = SceneSource::kCornell;
      entry.rgb_path = png;
      entry.loader = [png, cloud, stem, object = entry.object_id]() {
        Scene s;
        s.id = stem;
        s.object_id = object;
        s.source = SceneSource::kCornell;
        s.rgb = read_png_rgb(png);
        s.depth = read_cornell_depth(cloud, s.rgb.width(), s.rgb.height());
        validate(s);
        return s;
      };
      index.add_scene(std::move(entry));
      for (const auto& r : pos) index.add_label(make_label(stem, r.pose(), Polarity::kPositive), r.height());
      for (const auto& r : neg) index.add_label(make_label(stem, r.pose(), Polarity::kNegative), r.height());
      stats.positive += pos.size();
      stats.negative += neg.size();
      stats.skipped_positive += bad_pos;
      stats.skipped_negative += bad_neg;
    } catch (const Error& e) {
      ++stats.skipped_scenes;
      failures.push_back(stem + ": " + e.what());
    }
  }
  stats.scenes = index.size();
  for (const auto& f : failures) spdlog::warn("skipped Cornell scene {}", f);
  spdlog::info("Cornell: {} scenes ({} skipped), {} positive / {} negative labels, {} / {} malformed rectangles skipped",
               stats.scenes, stats.skipped_scenes, stats.positive, stats.negative, stats.skipped_positive,
               stats.skipped_negative);
  if (stats_out) *stats_out = stats;
  return index;
}

// ---------------------------------------------------------------- custom format

namespace {

Image<std::uint16_t> depth_to_mm(const GrayImage& depth) {
  Image<std::uint16_t> out(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    out.data()[i] = static_cast<std::uint16_t>(std::clamp(std::lround(depth.data()[i] * 1000.0), 0L, 65535L));
  }
  return out;
}

GrayImage depth_from_mm(const Image<std::uint16_t>& mm) {
  GrayImage out(mm.width(), mm.height());
  for (std::size_t i = 0; i < mm.size(); ++i) out.data()[i] = mm.data()[i] / 1000.0;
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

void write_custom(const fs::path& root, const DatasetIndex& index) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const SceneEntry& e = index.entries[i];
    const fs::path dir = root / e.id;
    fs::create_directories(dir);
    const auto scene = index.load(i);
    write_png_rgb(dir / "rgb.png", scene->rgb);
    write_png_gray16(dir / "depth.png", depth_to_mm(scene->depth));
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t k : index.labels_of(e.id)) {
      nlohmann::json l = index.labels[k];
      l["height"] = index.heights[k];
      labels.push_back(std::move(l));
    }
    write_json(dir / "labels.json", labels);
    nlohmann::json meta = {{"id", e.id}, {"object_id", e.object_id}, {"source", to_string(e.source)}};
    if (e.truth) meta["truth"] = truth_json(*e.truth);
    write_json(dir / "meta.json", meta);
  }
}

DatasetIndex load_custom(const fs::path& root) {
  DatasetIndex index;
  if (!fs::is_directory(root)) fail(ErrorKind::kIo, root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) spdlog::warn("no scenes found under {}", root.string());
  std::size_t skipped = 0;
  for (const fs::path& dir : dirs) {
    try {
      const nlohmann::json meta = read_json(dir / "meta.json");
      SceneEntry entry;
      entry.id = meta.value("id", dir.filename().string());
      entry.object_id = meta.value("object_id", entry.id);
      entry.source = scene_source_from_string(meta.value("source", "custom"));
      if (meta.contains("truth")) entry.truth = truth_from(meta.at("truth"));
      if (!fs::exists(dir / "rgb.png") || !fs::exists(dir / "depth.png")) {
        fail(ErrorKind::kIo, "missing rgb.png or depth.png");
      }
      entry.rgb_path = dir / "rgb.png";
      entry.loader = [dir, id = entry.id, object = entry.object_id, source = entry.source]() {
        Scene s;
        s.id = id;
        s.object_id = object;
        s.source = source;
        s.rgb = read_png_rgb(dir / "rgb.png");
        s.depth = depth_from_mm(read_png_gray16(dir / "depth.png"));
        validate(s);
        return s;
      };
      std::vector<std::pair<Label, double>> labels;
      if (fs::exists(dir / "labels.json")) {
        for (const auto& j : read_json(dir / "labels.json")) {
          Label l = j.get<Label>();
          if (l.scene_id != entry.id) fail(ErrorKind::kData, "label scene id does not match its directory");
          labels.emplace_back(l, j.value("height", kDefaultRectHeight));
        }
      }
      index.add_scene(std::move(entry));
      for (const auto& [l, h] : labels) index.add_label(l, h);
    } catch (const Error& e) {
      ++skipped;
      spdlog::warn("skipped scene {}: {}", dir.filename().string(), e.what());
    } catch (const nlohmann::json::exception& e) {
      ++skipped;
      spdlog::warn("skipped scene {}: {}", dir.filename().string(), e.what());
    }
  }
  if (skipped) spdlog::warn("{} scene(s) skipped under {}", skipped, root.string());
  index.check();
  return index;
}

DatasetIndex load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorKind::kIo, root.string() + " is not a directory");
  const std::regex image_name(R"(pcd\d+r\.png)");
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), image_name)) return load_cornell(root);
  }
  return load_custom(root);
}

// ---------------------------------------------------------------- protocol

bool SplitSpec::is_test(const std::string& scene_id) const {
  return std::find(test.begin(), test.end(), scene_id) != test.end();
}

SplitSpec make_split(const DatasetIndex& index, std::uint64_t seed) {
  SplitSpec split;
  split.seed = seed;
  Rng rng(seed);
  std::set<std::size_t> test;
  for (const auto& [object, scenes] : index.objects()) test.insert(scenes[rng.below(scenes.size())]);
  for (std::size_t i = 0; i < index.size(); ++i) {
    (test.count(i) ? split.test : split.train).push_back(index.entries[i].id);
  }
  return split;
}

namespace {

std::vector<std::size_t> train_label_ids(const DatasetIndex& index, const SplitSpec& split,
                                         const std::set<std::string>& scenes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < index.labels.size(); ++i) {
    const std::string& s = index.labels[i].scene_id;
    if (scenes.count(s) && !split.is_test(s)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  // Partial Fisher-Yates, then restore index order for stable output.
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

std::vector<Label> subsample_labels(const DatasetIndex& index, const SplitSpec& split, std::size_t count,
                                    std::uint64_t seed) {
  const std::set<std::string> train(split.train.begin(), split.train.end());
  const auto pool = train_label_ids(index, split, train);
  if (count > pool.size()) {
    spdlog::warn("requested {} labels but only {} training labels exist; using all", count, pool.size());
  }
  Rng rng(seed);
  std::vector<Label> out;
  for (std::size_t i : draw(pool, count, rng)) out.push_back(index.labels[i]);
  return out;
}

std::vector<Label> subsample_labels_per_object(const DatasetIndex& index, const SplitSpec& split,
                                               std::size_t per_object, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Label> out;
  std::uint64_t stream = 0;
  for (const auto& [object, scenes] : index.objects()) {
    std::set<std::string> ids;
    for (std::size_t s : scenes) ids.insert(index.entries[s].id);
    const auto pool = train_label_ids(index, split, ids);
    Rng sub = rng.split(stream++);
    for (std::size_t i : draw(pool, per_object, sub)) out.push_back(index.labels[i]);
  }
  return out;
}

// ---------------------------------------------------------------- synthetic

const char* to_string(Shape shape) {
  switch (shape) {
    case Shape::kBar: return "bar";
    case Shape::kTBar: return "tbar";
    case Shape::kLBar: return "lbar";
    case Shape::kHammer: return "hammer";
  }
  return "bar";
}

Shape shape_from_string(const std::string& name) {
  if (name == "bar") return Shape::kBar;
  if (name == "tbar") return Shape::kTBar;
  if (name == "lbar") return Shape::kLBar;
  if (name == "hammer") return Shape::kHammer;
  fail(ErrorKind::kInvalidArgument, "unknown shape '" + name + "'");
}

nlohmann::json to_json(const SyntheticObjectSpec& s) {
  return {{"name", s.name},
          {"shape", to_string(s.shape)},
          {"length", s.length},
          {"thickness", s.thickness},
          {"cross_length", s.cross_length},
          {"cross_thickness", s.cross_thickness},
          {"color", s.color},
          {"cross_color", s.cross_color},
          {"preferred_from", s.preferred_from},
          {"preferred_to", s.preferred_to},
          {"preferred_on_cross", s.preferred_on_cross}};
}

SyntheticObjectSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticObjectSpec s;
  s.name = j.at("name").get<std::string>();
  s.shape = shape_from_string(j.at("shape").get<std::string>());
  s.length = j.value("length", s.length);
  s.thickness = j.value("thickness", s.thickness);
  s.cross_length = j.value("cross_length", s.cross_length);
  s.cross_thickness = j.value("cross_thickness", s.cross_thickness);
  if (j.contains("color")) s.color = j.at("color").get<std::array<std::uint8_t, 3>>();
  if (j.contains("cross_color")) s.cross_color = j.at("cross_color").get<std::array<std::uint8_t, 3>>();
  s.preferred_from = j.value("preferred_from", s.preferred_from);
  s.preferred_to = j.value("preferred_to", s.preferred_to);
  s.preferred_on_cross = j.value("preferred_on_cross", s.preferred_on_cross);
  validate(s);
  return s;
}

namespace {

// Axis-aligned box in the object frame.
struct Part {
  double x0, y0, x1, y1;
  std::array<std::uint8_t, 3> color;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct Layout {
  std::vector<Part> parts;
  RegionTruth truth;  // object frame
};

// Gap kept between preferred and forbidden regions, px. Wider than the
// acceptance band of a region so forbidden labels never score as preferred.
constexpr double kRegionGap = 10.0;
double region_gap(double half) { return std::max(kRegionGap, half + 5.0); }

// Splits the main axis [0, L] into the preferred span and forbidden remainders.
void main_regions(const SyntheticObjectSpec& s, double start, double end, bool main_preferred, RegionTruth& t) {
  const double half = s.thickness / 2.0;
  const double gap = region_gap(half);
  const double len = end - start;
  if (main_preferred) {
    // Inset like the forbidden spans so end labels stay on the object.
    const double a = std::max(start + 2.0, start + s.preferred_from * len);
    const double b = std::min(end - 2.0, start + s.preferred_to * len);
    t.preferred.push_back({{a, 0.0}, {b, 0.0}, half});
    if (a - gap - start > 4.0) t.forbidden.push_back({{start + 2.0, 0.0}, {a - gap, 0.0}, half});
    if (end - (b + gap) > 4.0) t.forbidden.push_back({{b + gap, 0.0}, {end - 2.0, 0.0}, half});
  } else {
    t.forbidden.push_back({{start + 2.0, 0.0}, {end - 2.0, 0.0}, half});
  }
}

Layout layout(const SyntheticObjectSpec& s) {
  Layout out;
  const double L = s.length, T = s.thickness, CL = s.cross_length, CT = s.cross_thickness;
  const bool main_pref = !s.preferred_on_cross;
  auto cross_regions = [&](Point2 a, Point2 b, double half) {
    const Point2 d = b - a;
    const double len = norm(d);
    const Point2 u = (1.0 / len) * d;
    if (main_pref) {
      out.truth.forbidden.push_back({a + 2.0 * u, b - 2.0 * u, half});
    } else {
      out.truth.preferred.push_back({a + s.preferred_from * d, a + s.preferred_to * d, half});
    }
  };
  switch (s.shape) {
    case Shape::kBar:
      out.parts.push_back({0, -T / 2, L, T / 2, s.color});
      main_regions(s, 0.0, L, true, out.truth);
      break;
    case Shape::kTBar:
    case Shape::kHammer:
      out.parts.push_back({0, -T / 2, L, T / 2, s.color});
      out.parts.push_back({L, -CL / 2, L + CT, CL / 2, s.cross_color});
      main_regions(s, 0.0, L - (main_pref ? 0.0 : kRegionGap), main_pref, out.truth);
      cross_regions({L + CT / 2, -CL / 2}, {L + CT / 2, CL / 2}, CT / 2);
      break;
    case Shape::kLBar:
      out.parts.push_back({0, -T / 2, L, T / 2, s.color});
      out.parts.push_back({0, T / 2, CT, T / 2 + CL, s.cross_color});
      main_regions(s, main_pref ? 0.0 : CT + kRegionGap, L, main_pref, out.truth);
      cross_regions({CT / 2, main_pref ? T / 2 + kRegionGap : T / 2}, {CT / 2, T / 2 + CL}, CT / 2);
      break;
  }
  return out;
}

Point2 transform(Point2 p, double c, double s, Point2 t) { return {c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y}; }

std::uint8_t noisy(std::uint8_t v, int amp, Rng& rng) {
  if (amp <= 0) return v;
  const int n = static_cast<int>(rng.below(2 * amp + 1)) - amp;
  return static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + n, 0, 255));
}

}  // namespace

void validate(const SyntheticObjectSpec& s) {
  if (s.name.empty()) fail(ErrorKind::kInvalidArgument, "synthetic object needs a name");
  if (!(s.length > 0 && s.thickness > 0 && s.cross_length > 0 && s.cross_thickness > 0)) {
    fail(ErrorKind::kInvalidArgument, "synthetic object dimensions must be positive");
  }
  if (!(s.preferred_from >= 0.0 && s.preferred_from < s.preferred_to && s.preferred_to <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "preferred region must satisfy 0 <= from < to <= 1");
  }
  if (s.shape == Shape::kBar && s.preferred_on_cross) {
    fail(ErrorKind::kInvalidArgument, "a bar has no second part");
  }
  const Layout l = layout(s);
  for (const Region& p : l.truth.preferred) {
    for (const Region& f : l.truth.forbidden) {
      // Sample the forbidden axis; no point may fall in the preferred acceptance band.
      for (int k = 0; k <= 40; ++k) {
        const Point2 q = f.a + (k / 40.0) * (f.b - f.a);
        if (distance_to_segment(q, p.a, p.b) <= p.half_width + 2.0) {
          fail(ErrorKind::kInvalidArgument, "preferred and forbidden regions overlap in " + s.name);
        }
      }
    }
  }
}

std::vector<SyntheticObjectSpec> default_suite() {
  std::vector<SyntheticObjectSpec> v;
  auto add = [&](std::string name, Shape shape, double L, double T, double CL, double CT,
                 std::array<std::uint8_t, 3> c, std::array<std::uint8_t, 3> cc, double from, double to,
                 bool on_cross) {
    SyntheticObjectSpec s;
    s.name = std::move(name);
    s.shape = shape;
    s.length = L;
    s.thickness = T;
    s.cross_length = CL;
    s.cross_thickness = CT;
    s.color = c;
    s.cross_color = cc;
    s.preferred_from = from;
    s.preferred_to = to;
    s.preferred_on_cross = on_cross;
    v.push_back(s);
  };
  // Objects sharing a shape share the rule, as shape-driven labels do; only
  // the hammer family needs the head to tell its handle ends apart.
  add("bar", Shape::kBar, 150, 14, 1, 1, {40, 90, 160}, {0, 0, 0}, 0.0, 1.0, false);
  add("tbar", Shape::kTBar, 110, 14, 70, 14, {60, 140, 60}, {60, 140, 60}, 0.1, 0.45, false);
  add("tbar_wide", Shape::kTBar, 100, 16, 90, 14, {150, 120, 40}, {150, 120, 40}, 0.1, 0.5, false);
  add("lbar", Shape::kLBar, 130, 14, 60, 14, {110, 60, 150}, {110, 60, 150}, 0.55, 0.9, false);
  add("lbar_wide", Shape::kLBar, 120, 16, 70, 16, {40, 140, 140}, {40, 140, 140}, 0.55, 0.9, false);
  v.push_back(hammer_spec());
  add("mallet", Shape::kHammer, 100, 16, 50, 34, {180, 140, 90}, {90, 70, 50}, 0.5, 0.8, false);
  add("hatchet", Shape::kHammer, 110, 14, 40, 30, {120, 80, 60}, {160, 160, 170}, 0.5, 0.85, false);
  return v;
}

SyntheticObjectSpec hammer_spec() {
  SyntheticObjectSpec s;
  s.name = "hammer";
  s.shape = Shape::kHammer;
  s.length = 120;
  s.thickness = 12;
  s.cross_length = 64;
  s.cross_thickness = 22;
  s.color = {150, 100, 50};
  s.cross_color = {70, 70, 80};
  // Upper handle, next to the head.
  s.preferred_from = 0.55;
  s.preferred_to = 0.9;
  return s;
}

DatasetIndex generate_synthetic(const std::vector<SyntheticObjectSpec>& specs, int scenes_per_object,
                                std::uint64_t seed, const SyntheticConfig& cfg) {
  if (specs.empty()) fail(ErrorKind::kInvalidArgument, "at least one synthetic object spec is required");
  if (scenes_per_object < 1) fail(ErrorKind::kInvalidArgument, "scenes_per_object must be >= 1");
  if (cfg.width < kMinSceneSide || cfg.height < kMinSceneSide) {
    fail(ErrorKind::kInvalidArgument, "synthetic scenes must be at least 128x128");
  }
  // Depths are quantized to millimeters so the PNG16 format round-trips exactly.
  const double table = std::round(cfg.table_depth * 1000.0) / 1000.0;
  const double top = std::round(cfg.object_depth * 1000.0) / 1000.0;
  DatasetIndex index;
  const Rng root(seed);
  for (std::size_t o = 0; o < specs.size(); ++o) {
    const SyntheticObjectSpec& spec = specs[o];
    validate(spec);
    const Layout lay = layout(spec);
    double bx0 = 1e300, by0 = 1e300, bx1 = -1e300, by1 = -1e300;
    for (const Part& p : lay.parts) {
      bx0 = std::min(bx0, p.x0);
      by0 = std::min(by0, p.y0);
      bx1 = std::max(bx1, p.x1);
      by1 = std::max(by1, p.y1);
    }
    const Point2 mid{(bx0 + bx1) / 2, (by0 + by1) / 2};
    const double radius = 0.5 * std::hypot(bx1 - bx0, by1 - by0);
    const double margin = 6.0;
    if (2.0 * (radius + margin) > std::min(cfg.width, cfg.height)) {
      fail(ErrorKind::kInvalidArgument, "object " + spec.name + " does not fit in the scene");
    }
    for (int k = 0; k < scenes_per_object; ++k) {
      Rng rng = root.split(o * 100003ULL + static_cast<std::uint64_t>(k));
      const double phi = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
      const double cx = rng.uniform(radius + margin, cfg.width - 1 - radius - margin);
      const double cy = rng.uniform(radius + margin, cfg.height - 1 - radius - margin);
      const double c = std::cos(phi), s = std::sin(phi);
      // Object-frame midpoint lands on (cx, cy).
      const Point2 t{cx - (c * mid.x - s * mid.y), cy - (s * mid.x + c * mid.y)};

      auto scene = std::make_shared<Scene>();
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03d", spec.name.c_str(), k);
      scene->id = id;
      scene->object_id = spec.name;
      scene->source = SceneSource::kSynthetic;
      scene->rgb = RgbImage(cfg.width, cfg.height, 3);
      scene->depth = GrayImage(cfg.width, cfg.height, 1, table);
      for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          // Inverse transform into the object frame.
          const double dx = x - t.x, dy = y - t.y;
          const double ox = c * dx + s * dy, oy = -s * dx + c * dy;
          const Part* hit = nullptr;
          for (const Part& p : lay.parts)
            if (p.contains(ox, oy)) hit = &p;
          const auto& col = hit ? hit->color : cfg.background;
          for (int ch = 0; ch < 3; ++ch) scene->rgb.at(x, y, ch) = noisy(col[ch], cfg.color_noise, rng);
          if (hit) scene->depth.at(x, y) = top;
        }
      }
      validate(*scene);

      SceneEntry entry;
      entry.id = scene->id;
      entry.object_id = spec.name;
      entry.source = SceneSource::kSynthetic;
      RegionTruth truth;
      auto place = [&](const Region& r) {
        return Region{transform(r.a, c, s, t), transform(r.b, c, s, t), r.half_width};
      };
      for (const Region& r : lay.truth.preferred) truth.preferred.push_back(place(r));
      for (const Region& r : lay.truth.forbidden) truth.forbidden.push_back(place(r));
      entry.truth = truth;
      entry.scene = scene;
      index.add_scene(std::move(entry));

      // Exhaustive ground truth: perpendicular grasps along each region,
      // plus axis-parallel negatives on the preferred span.
      auto along = [&](const Region& r, double spacing, auto&& emit) {
        const Point2 d = r.b - r.a;
        const double len = norm(d);
        const int steps = std::max(0, static_cast<int>(std::floor(len / spacing)));
        for (int i = 0; i <= steps; ++i) {
          const double f = steps == 0 ? 0.5 : static_cast<double>(i) / steps;
          emit(r.a + f * d, std::atan2(d.y, d.x));
        }
      };
      for (const Region& r : truth.preferred) {
        along(r, cfg.label_spacing, [&](Point2 p, double axis) {
          index.add_label(make_label(scene->id, GraspPose(p.x, p.y, axis + kPi / 2, 2 * r.half_width + cfg.width_margin),
                                     Polarity::kPositive),
                          cfg.label_height);
        });
        along(r, 3 * cfg.label_spacing, [&](Point2 p, double axis) {
          index.add_label(make_label(scene->id, GraspPose(p.x, p.y, axis), Polarity::kNegative), cfg.label_height);
        });
      }
      for (const Region& r : truth.forbidden) {
        along(r, 1.5 * cfg.label_spacing, [&](Point2 p, double axis) {
          index.add_label(make_label(scene->id, GraspPose(p.x, p.y, axis + kPi / 2), Polarity::kNegative),
                        cfg.label_height);
        });
      }
    }
  }
  index.check();
  return index;
}

}  // namespace lgps::dataset
