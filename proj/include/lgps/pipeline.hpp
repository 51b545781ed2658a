#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lgps/candgen.hpp"
#include "lgps/dataset.hpp"
#include "lgps/encoder.hpp"
#include "lgps/gp.hpp"
#include "lgps/patch.hpp"

namespace lgps::pipeline {

enum class ClassifierKind { kGp, kLogistic };

const char* to_string(ClassifierKind kind);
ClassifierKind classifier_kind_from_string(const std::string& name);

struct SelectionConfig {
  candgen::CandidateConfig candidates;
  patch::PatchConfig patch{32, 3.0};
  // theta and theta + pi are the same grasp: encode both half-turns and
  // average, so a grasp's code does not depend on which jaw comes first.
  bool symmetric_codes = true;
  double min_width = 10.0;
  double max_width = 150.0;
  // Used when no positive label exists yet.
  double default_width = 40.0;
  // Height of the oriented strip searched for the grasp depth.
  double depth_band = 5.0;
};

nlohmann::json to_json(const SelectionConfig& config);
SelectionConfig selection_config_from_json(const nlohmann::json& j);

// Preference classifier plus the width regressor, both on latent codes.
struct PreferenceModel {
  ClassifierKind kind = ClassifierKind::kGp;
  gp::Classifier classifier;
  gp::LogisticModel logistic;
  gp::Regressor regressor;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  bool fitted() const;
  Eigen::VectorXd score(const Eigen::MatrixXd& codes) const;

  void save(const std::filesystem::path& path) const;
  static PreferenceModel load(const std::filesystem::path& path);
};

// Codes of the label poses (rows aligned with `labels`).
struct EncodedLabels {
  std::vector<Label> labels;
  Eigen::MatrixXd codes;
};

// Latent codes of poses in one scene, one row per pose.
Eigen::MatrixXd encode_poses(const patch::PatchExtractor& extractor, const Encoder& encoder,
                             const std::vector<GraspPose>& poses, bool symmetric);

EncodedLabels encode_labels(const dataset::DatasetIndex& index, const std::vector<Label>& labels,
                            const patch::NormalizationStats& stats, const Encoder& encoder,
                            const SelectionConfig& config);

// Empty input gives an unfitted model (uniform 0.5 scores, no regressor).
PreferenceModel fit_model(const EncodedLabels& data, ClassifierKind kind, const gp::ClassifierConfig& config,
                          Rng& rng);

// Candidates of one scene with their latent codes.
struct PreparedScene {
  std::string scene_id;
  candgen::CandidateSet candidates;
  Eigen::MatrixXd codes;
};

PreparedScene prepare_scene(const Scene& scene, const patch::NormalizationStats& stats, const Encoder& encoder,
                            Rng& rng, const SelectionConfig& config);

struct SelectionResult {
  std::string scene_id;
  std::size_t index = 0;
  GraspPose pose;  // with the opening width
  double score = 0.5;
  std::optional<double> depth;  // g_d, meters
  std::vector<double> scores;
  bool random = false;
  bool default_width = false;
  // Predictive standard deviation of the width, px (0 with the default width).
  double width_std = 0.0;
};

nlohmann::json to_json(const SelectionResult& result);

// Argmax over candidate scores, lowest index on ties; a uniformly random
// candidate when the model is unfitted.
SelectionResult select_from(const PreparedScene& prepared, const PreferenceModel& model, Rng& rng,
                            const SelectionConfig& config);

// Closest valid depth in the oriented width x band strip around the grasp.
// Throws kDepthUnavailable when the strip holds no valid depth.
double grasp_depth(const GrayImage& depth, const GraspPose& pose, double band = 5.0);

SelectionResult select_grasp(const Scene& scene, const patch::NormalizationStats& stats, const Encoder& encoder,
                             const PreferenceModel& model, Rng& rng, const SelectionConfig& config = {});

// Candidates shaded by score (red low, green high), chosen rectangle in blue.
RgbImage render_overlay(const Scene& scene, const PreparedScene& prepared, const SelectionResult& result);

// ---- learning curves ----

struct ExperimentConfig {
  // Label counts to sweep; per object when per_object is set.
  std::vector<std::size_t> counts{0, 10, 20};
  bool per_object = false;
  int replicates = 1;
  std::uint64_t seed = 0;
  ClassifierKind classifier = ClassifierKind::kGp;
  gp::ClassifierConfig gp;
  SelectionConfig selection;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct CurveRow {
  std::size_t label_count = 0;
  int replicate = 0;
  double rm_percent = 0.0;
  std::size_t labels_used = 0;
};

struct CurvePoint {
  std::size_t label_count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct CurveReport {
  std::vector<CurveRow> rows;
  std::vector<CurvePoint> points;
  std::vector<std::string> test_scenes;
};

// Labels of the test scenes are never used for fitting. Labels are drawn
// independently for every replicate.
CurveReport run_learning_curve(const dataset::DatasetIndex& index, const dataset::SplitSpec& split,
                               const patch::NormalizationStats& stats, const Encoder& encoder,
                               const ExperimentConfig& config);

void write_curve_csv(const std::filesystem::path& path, const CurveReport& report);
nlohmann::json curve_json(const CurveReport& report);

// Scenes of the index loaded in order (for depth statistics over a dataset).
patch::NormalizationStats dataset_depth_stats(const dataset::DatasetIndex& index);

}  // namespace lgps::pipeline
