#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgps/core.hpp"
#include "lgps/image.hpp"
#include "lgps/rng.hpp"

namespace lgps::dataset {

// Axis segment with a half-width; used for the synthetic preferred/forbidden regions.
struct Region {
  Point2 a;
  Point2 b;
  double half_width = 0.0;
};

// Ground truth the synthetic generator knows about each scene.
struct RegionTruth {
  std::vector<Region> preferred;
  std::vector<Region> forbidden;
};

double distance_to_segment(Point2 p, Point2 a, Point2 b);

// True if the grasp center lies in the region and its axis is within
// `angle_tolerance` of the region's cross direction.
bool in_region(const Region& region, const GraspPose& pose, double slack = 2.0, double angle_tolerance = kPi / 6.0);
bool in_preferred(const RegionTruth& truth, const GraspPose& pose);

struct SceneEntry {
  std::string id;
  std::string object_id;
  SceneSource source = SceneSource::kCustom;
  // Either an in-memory scene or a loader that reads it from disk on demand.
  std::shared_ptr<const Scene> scene;
  std::function<Scene()> loader;
  // On-disk RGB image, when there is one.
  std::filesystem::path rgb_path;
  std::optional<RegionTruth> truth;
};

class DatasetIndex {
 public:
  std::vector<SceneEntry> entries;
  std::vector<Label> labels;
  // Rectangle height per label (ground-truth tolerance), aligned with `labels`.
  std::vector<double> heights;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  void add_scene(SceneEntry entry);
  void add_label(const Label& label, double height = kDefaultRectHeight);

  // Index of the scene with this id, or -1.
  long find(const std::string& scene_id) const;
  std::shared_ptr<const Scene> load(std::size_t i) const;
  std::shared_ptr<const Scene> load(const std::string& scene_id) const;

  // object_id -> scene positions, in index order.
  std::map<std::string, std::vector<std::size_t>> objects() const;
  std::vector<std::size_t> labels_of(const std::string& scene_id) const;
  // Positive labels of a scene as rectangles with their ground-truth heights.
  std::vector<GraspRect> positives(const std::string& scene_id) const;

  // Every label references a scene; positives carry widths. Throws kData.
  void check() const;
  std::size_t positive_count() const;
  std::size_t negative_count() const;

 private:
  std::map<std::string, std::size_t> by_id_;
};

// ---- Cornell ----

struct CornellStats {
  std::size_t scenes = 0;
  std::size_t skipped_scenes = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t skipped_positive = 0;
  std::size_t skipped_negative = 0;
  bool object_map = false;
};

// Four corners in file order; corners 0->1 run along the gripper opening.
GraspRect rect_from_corners(const std::array<Point2, 4>& c);

// Parses a cpos/cneg file. Rectangles with non-finite corners are skipped and counted.
std::vector<GraspRect> read_cornell_rects(const std::filesystem::path& path, std::size_t* skipped = nullptr);

// Depth image (meters) from a Cornell point-cloud text file, holes inpainted
// from the nearest valid pixel.
GrayImage read_cornell_depth(const std::filesystem::path& path, int width, int height);

// Fills zero pixels with the value of the nearest non-zero pixel (breadth-first).
void inpaint_nearest(GrayImage& depth);

DatasetIndex load_cornell(const std::filesystem::path& root, CornellStats* stats = nullptr);

// ---- custom on-disk format ----
//
// root/<scene>/rgb.png        8-bit RGB
// root/<scene>/depth.png      16-bit depth in millimeters, 0 = missing
// root/<scene>/labels.json    array of labels (optional "height" per label)
// root/<scene>/meta.json      {"id", "object_id", "source", "truth"?}

void write_custom(const std::filesystem::path& root, const DatasetIndex& index);
DatasetIndex load_custom(const std::filesystem::path& root);

// Dispatches on content: Cornell if pcd*r.png files are present, custom otherwise.
DatasetIndex load_dataset(const std::filesystem::path& root);

// ---- protocol ----

struct SplitSpec {
  std::vector<std::string> test;
  std::vector<std::string> train;
  std::uint64_t seed = 0;

  bool is_test(const std::string& scene_id) const;
};

// One random test scene per object; the rest is training data.
SplitSpec make_split(const DatasetIndex& index, std::uint64_t seed);

// Uniform subset of the training-scene labels (capped with a warning).
std::vector<Label> subsample_labels(const DatasetIndex& index, const SplitSpec& split, std::size_t count,
                                    std::uint64_t seed);

// Up to `per_object` uniform labels from each object's training scenes.
std::vector<Label> subsample_labels_per_object(const DatasetIndex& index, const SplitSpec& split,
                                               std::size_t per_object, std::uint64_t seed);

// ---- synthetic scenes ----

enum class Shape { kBar, kTBar, kLBar, kHammer };

const char* to_string(Shape shape);
Shape shape_from_string(const std::string& name);

// Dimensions are in pixels. Region parameters are fractions along the part
// they refer to (see the generator for the part layout of each shape).
struct SyntheticObjectSpec {
  std::string name;
  Shape shape = Shape::kBar;
  double length = 120.0;      // main part length
  double thickness = 14.0;    // main part thickness
  double cross_length = 60.0; // second part length (tbar/lbar arm, hammer head)
  double cross_thickness = 14.0;
  std::array<std::uint8_t, 3> color{90, 60, 40};
  std::array<std::uint8_t, 3> cross_color{60, 60, 70};
  // Preferred region on the main part, as fractions [from, to] of its length.
  double preferred_from = 0.05;
  double preferred_to = 0.95;
  // If true the preferred region is on the second part instead of the main part.
  bool preferred_on_cross = false;
};

nlohmann::json to_json(const SyntheticObjectSpec& spec);
SyntheticObjectSpec synthetic_spec_from_json(const nlohmann::json& j);

// Preferred region and forbidden region never overlap (the forbidden region
// is the rest of the object with a margin). Throws kInvalidArgument otherwise.
void validate(const SyntheticObjectSpec& spec);

struct SyntheticConfig {
  int width = 256;
  int height = 256;
  double table_depth = 0.65;
  double object_depth = 0.62;
  // Spacing of ground-truth rectangles along the regions.
  double label_spacing = 4.0;
  // Gripper opening is part thickness plus this margin.
  double width_margin = 20.0;
  // Rectangle height stored with every synthetic label.
  double label_height = 20.0;
  int color_noise = 3;
  std::array<std::uint8_t, 3> background{235, 235, 230};
  // Rotation is drawn from [-max_rotation, max_rotation].
  double max_rotation = kPi;
};

// Desk-scale eight-object suite.
std::vector<SyntheticObjectSpec> default_suite();
SyntheticObjectSpec hammer_spec();

DatasetIndex generate_synthetic(const std::vector<SyntheticObjectSpec>& specs, int scenes_per_object,
                                std::uint64_t seed, const SyntheticConfig& config = {});

}  // namespace lgps::dataset
