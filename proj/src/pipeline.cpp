#include "lgps/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>

#include <spdlog/spdlog.h>

#include "lgps/metric.hpp"

namespace lgps::pipeline {

const char* to_string(ClassifierKind kind) { return kind == ClassifierKind::kGp ? "gp" : "logistic"; }

ClassifierKind classifier_kind_from_string(const std::string& name) {
  if (name == "gp") return ClassifierKind::kGp;
  if (name == "logistic" || name == "lr") return ClassifierKind::kLogistic;
  fail(ErrorKind::kInvalidArgument, "unknown classifier '" + name + "' (expected gp or logistic)");
}

// ---------------------------------------------------------------- config json

namespace {

nlohmann::json candidate_json(const candgen::CandidateConfig& c) {
  return {{"min_dist", c.min_dist},
          {"jitter_sigma", c.jitter_sigma},
          {"jitter_clamp", c.jitter_clamp},
          {"duplicates_per_point", c.duplicates_per_point},
          {"tangent_radius", c.tangent_radius},
          {"canny", {{"sigma", c.canny.sigma}, {"low_ratio", c.canny.low_ratio}, {"high_ratio", c.canny.high_ratio}}},
          {"segmenter",
           {{"color_threshold", c.segmenter.color_threshold},
            {"depth_threshold", c.segmenter.depth_threshold},
            {"border", c.segmenter.border},
            {"use_color", c.segmenter.use_color},
            {"use_depth", c.segmenter.use_depth}}}};
}

candgen::CandidateConfig candidate_from(const nlohmann::json& j) {
  candgen::CandidateConfig c;
  c.min_dist = j.value("min_dist", c.min_dist);
  c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
  c.jitter_clamp = j.value("jitter_clamp", c.jitter_clamp);
  c.duplicates_per_point = j.value("duplicates_per_point", c.duplicates_per_point);
  c.tangent_radius = j.value("tangent_radius", c.tangent_radius);
  if (j.contains("canny")) {
    const auto& k = j.at("canny");
    c.canny.sigma = k.value("sigma", c.canny.sigma);
    c.canny.low_ratio = k.value("low_ratio", c.canny.low_ratio);
    c.canny.high_ratio = k.value("high_ratio", c.canny.high_ratio);
  }
  if (j.contains("segmenter")) {
    const auto& s = j.at("segmenter");
    c.segmenter.color_threshold = s.value("color_threshold", c.segmenter.color_threshold);
    c.segmenter.depth_threshold = s.value("depth_threshold", c.segmenter.depth_threshold);
    c.segmenter.border = s.value("border", c.segmenter.border);
    c.segmenter.use_color = s.value("use_color", c.segmenter.use_color);
    c.segmenter.use_depth = s.value("use_depth", c.segmenter.use_depth);
  }
  if (!(c.min_dist > 0.0) || c.duplicates_per_point < 1 || c.jitter_sigma < 0.0) {
    fail(ErrorKind::kInvalidArgument, "invalid candidate configuration");
  }
  return c;
}

nlohmann::json gp_json(const gp::ClassifierConfig& c) {
  return {{"exact_threshold", c.exact_threshold},
          {"refine_evaluations", c.laplace.refine_evaluations},
          {"svgp_inducing", c.svgp.inducing},
          {"svgp_steps", c.svgp.steps},
          {"svgp_lr", c.svgp.lr}};
}

gp::ClassifierConfig gp_from(const nlohmann::json& j) {
  gp::ClassifierConfig c;
  c.exact_threshold = j.value("exact_threshold", c.exact_threshold);
  c.laplace.refine_evaluations = j.value("refine_evaluations", c.laplace.refine_evaluations);
  c.svgp.inducing = j.value("svgp_inducing", c.svgp.inducing);
  c.svgp.steps = j.value("svgp_steps", c.svgp.steps);
  c.svgp.lr = j.value("svgp_lr", c.svgp.lr);
  return c;
}

}  // namespace

nlohmann::json to_json(const SelectionConfig& c) {
  return {{"candidates", candidate_json(c.candidates)},
          {"patch", {{"size", c.patch.size}, {"scale", c.patch.scale}, {"normal_depth_scale", c.patch.normal_depth_scale}}},
          {"min_width", c.min_width},
          {"max_width", c.max_width},
          {"default_width", c.default_width},
          {"depth_band", c.depth_band},
          {"symmetric_codes", c.symmetric_codes}};
}

SelectionConfig selection_config_from_json(const nlohmann::json& j) {
  SelectionConfig c;
  if (j.contains("candidates")) c.candidates = candidate_from(j.at("candidates"));
  if (j.contains("patch")) {
    const auto& p = j.at("patch");
    c.patch.size = p.value("size", c.patch.size);
    c.patch.scale = p.value("scale", c.patch.scale);
    c.patch.normal_depth_scale = p.value("normal_depth_scale", c.patch.normal_depth_scale);
  }
  c.min_width = j.value("min_width", c.min_width);
  c.max_width = j.value("max_width", c.max_width);
  c.default_width = j.value("default_width", c.default_width);
  c.depth_band = j.value("depth_band", c.depth_band);
  c.symmetric_codes = j.value("symmetric_codes", c.symmetric_codes);
  if (!(c.min_width > 0.0 && c.min_width <= c.max_width)) {
    fail(ErrorKind::kInvalidArgument, "width bounds must satisfy 0 < min_width <= max_width");
  }
  if (!(c.depth_band > 0.0) || c.patch.size < 1 || !(c.patch.scale > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "invalid selection configuration");
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"counts", c.counts},
          {"per_object", c.per_object},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"classifier", to_string(c.classifier)},
          {"gp", gp_json(c.gp)},
          {"selection", to_json(c.selection)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("counts")) c.counts = j.at("counts").get<std::vector<std::size_t>>();
  c.per_object = j.value("per_object", c.per_object);
  c.replicates = j.value("replicates", c.replicates);
  c.seed = j.value("seed", c.seed);
  if (j.contains("classifier")) c.classifier = classifier_kind_from_string(j.at("classifier").get<std::string>());
  if (j.contains("gp")) c.gp = gp_from(j.at("gp"));
  if (j.contains("selection")) c.selection = selection_config_from_json(j.at("selection"));
  if (c.replicates < 1) fail(ErrorKind::kInvalidArgument, "replicates must be >= 1");
  if (c.counts.empty()) fail(ErrorKind::kInvalidArgument, "at least one label count is required");
  return c;
}

// ---------------------------------------------------------------- model

bool PreferenceModel::fitted() const {
  return kind == ClassifierKind::kGp ? classifier.fitted() : logistic.fitted;
}

Eigen::VectorXd PreferenceModel::score(const Eigen::MatrixXd& codes) const {
  if (!fitted()) return Eigen::VectorXd::Constant(codes.rows(), 0.5);
  return kind == ClassifierKind::kGp ? classifier.predict_proba(codes) : logistic.predict_proba(codes);
}

void PreferenceModel::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "preference_model";
  ckpt.metadata["classifier_kind"] = to_string(kind);
  ckpt.metadata["positives"] = positives;
  ckpt.metadata["negatives"] = negatives;
  ckpt.metadata["fitted"] = fitted();
  classifier.store(ckpt, "classifier");
  store(ckpt, "logistic", logistic);
  regressor.store(ckpt, "regressor");
  ckpt.save(path);
}

PreferenceModel PreferenceModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "preference_model") fail(ErrorKind::kData, path.string() + " is not a preference model");
  PreferenceModel m;
  m.kind = classifier_kind_from_string(ckpt.metadata.at("classifier_kind").get<std::string>());
  m.positives = ckpt.metadata.value("positives", std::size_t{0});
  m.negatives = ckpt.metadata.value("negatives", std::size_t{0});
  m.classifier = gp::Classifier::restore(ckpt, "classifier");
  m.logistic = gp::restore_logistic(ckpt, "logistic");
  m.regressor = gp::Regressor::restore(ckpt, "regressor");
  return m;
}

Eigen::MatrixXd encode_poses(const patch::PatchExtractor& extractor, const Encoder& encoder,
                             const std::vector<GraspPose>& poses, bool symmetric) {
  std::vector<patch::Patch> patches;
  patches.reserve(poses.size());
  for (const GraspPose& pose : poses) patches.push_back(extractor.extract(pose));
  Eigen::MatrixXd codes = encoder.encode(patches);
  if (!symmetric) return codes;
  for (std::size_t i = 0; i < poses.size(); ++i) patches[i] = extractor.extract(poses[i], true);
  codes += encoder.encode(patches);
  return 0.5 * codes;
}

EncodedLabels encode_labels(const dataset::DatasetIndex& index, const std::vector<Label>& labels,
                            const patch::NormalizationStats& stats, const Encoder& encoder,
                            const SelectionConfig& config) {
  if (config.patch.size != encoder.patch_size()) {
    fail(ErrorKind::kInvalidArgument, "patch size does not match the encoder");
  }
  EncodedLabels out;
  out.labels = labels;
  out.codes.resize(static_cast<Eigen::Index>(labels.size()), encoder.latent_dim());
  // Group by scene so each scene is loaded and preprocessed once.
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < labels.size(); ++i) by_scene[labels[i].scene_id].push_back(i);
  for (const auto& [scene_id, rows] : by_scene) {
    const auto scene = index.load(scene_id);
    const patch::PatchExtractor ex(*scene, stats, config.patch);
    std::vector<GraspPose> poses;
    poses.reserve(rows.size());
    for (std::size_t r : rows) poses.push_back(labels[r].pose);
    const Eigen::MatrixXd codes = encode_poses(ex, encoder, poses, config.symmetric_codes);
    for (std::size_t k = 0; k < rows.size(); ++k) out.codes.row(static_cast<Eigen::Index>(rows[k])) = codes.row(k);
  }
  return out;
}

PreferenceModel fit_model(const EncodedLabels& data, ClassifierKind kind, const gp::ClassifierConfig& config,
                          Rng& rng) {
  PreferenceModel m;
  m.kind = kind;
  const auto n = static_cast<Eigen::Index>(data.labels.size());
  if (n == 0) return m;
  Eigen::VectorXd y(n);
  std::vector<Eigen::Index> pos;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Label& l = data.labels[static_cast<std::size_t>(i)];
    y(i) = l.positive() ? 1.0 : -1.0;
    if (l.positive()) pos.push_back(i);
  }
  m.positives = pos.size();
  m.negatives = static_cast<std::size_t>(n) - pos.size();
  if (kind == ClassifierKind::kGp) {
    m.classifier = gp::fit_classifier(data.codes, y, config, rng);
  } else {
    m.logistic = gp::fit_logistic(data.codes, y);
  }
  if (!pos.empty()) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(pos.size()), data.codes.cols());
    Eigen::VectorXd w(static_cast<Eigen::Index>(pos.size()));
    for (std::size_t k = 0; k < pos.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = data.codes.row(pos[k]);
      w(static_cast<Eigen::Index>(k)) = *data.labels[static_cast<std::size_t>(pos[k])].width();
    }
    m.regressor = gp::fit_regressor(x, w);
  }
  return m;
}

// ---------------------------------------------------------------- selection

PreparedScene prepare_scene(const Scene& scene, const patch::NormalizationStats& stats, const Encoder& encoder,
                            Rng& rng, const SelectionConfig& config) {
  if (config.patch.size != encoder.patch_size()) {
    fail(ErrorKind::kInvalidArgument, "patch size does not match the encoder");
  }
  PreparedScene p;
  p.scene_id = scene.id;
  p.candidates = candgen::candidates_for_scene(scene, rng, config.candidates).candidates;
  const patch::PatchExtractor ex(scene, stats, config.patch);
  p.codes = encode_poses(ex, encoder, p.candidates.poses, config.symmetric_codes);
  return p;
}

SelectionResult select_from(const PreparedScene& prepared, const PreferenceModel& model, Rng& rng,
                            const SelectionConfig& config) {
  const std::size_t n = prepared.candidates.size();
  if (n == 0) fail(ErrorKind::kGenerationFailed, "scene " + prepared.scene_id + " has no candidates");
  SelectionResult r;
  r.scene_id = prepared.scene_id;
  const Eigen::VectorXd s = model.score(prepared.codes);
  r.scores.assign(s.data(), s.data() + s.size());
  if (!model.fitted()) {
    r.random = true;
    r.index = static_cast<std::size_t>(rng.below(n));
  } else {
    // First maximum wins ties.
    r.index = static_cast<std::size_t>(std::max_element(r.scores.begin(), r.scores.end()) - r.scores.begin());
  }
  r.score = r.scores[r.index];
  r.pose = prepared.candidates.poses[r.index];
  if (model.regressor.fitted()) {
    const auto w = model.regressor.predict(Eigen::VectorXd(prepared.codes.row(static_cast<Eigen::Index>(r.index))));
    r.pose.width = std::clamp(w.mean, config.min_width, config.max_width);
    r.width_std = std::sqrt(std::max(0.0, w.variance));
  } else {
    r.pose.width = std::clamp(config.default_width, config.min_width, config.max_width);
    r.default_width = true;
  }
  return r;
}

double grasp_depth(const GrayImage& depth, const GraspPose& pose, double band) {
  if (!pose.width || !(*pose.width > 0.0)) fail(ErrorKind::kInvalidArgument, "grasp depth needs a width");
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  const double hw = *pose.width / 2.0, hb = band / 2.0;
  const double reach = std::hypot(hw, hb);
  const int x0 = std::max(0, static_cast<int>(std::floor(pose.x - reach)));
  const int x1 = std::min(depth.width() - 1, static_cast<int>(std::ceil(pose.x + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(pose.y - reach)));
  const int y1 = std::min(depth.height() - 1, static_cast<int>(std::ceil(pose.y + reach)));
  double best = INFINITY;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - pose.x, dy = y - pose.y;
      const double u = c * dx + s * dy, v = -s * dx + c * dy;
      if (std::abs(u) > hw || std::abs(v) > hb) continue;
      const double d = depth.at(x, y);
      if (d > 0.0 && std::isfinite(d)) best = std::min(best, d);
    }
  if (!std::isfinite(best)) fail(ErrorKind::kDepthUnavailable, "no valid depth under the selected grasp");
  return best;
}

SelectionResult select_grasp(const Scene& scene, const patch::NormalizationStats& stats, const Encoder& encoder,
                             const PreferenceModel& model, Rng& rng, const SelectionConfig& config) {
  const PreparedScene prepared = prepare_scene(scene, stats, encoder, rng, config);
  SelectionResult r = select_from(prepared, model, rng, config);
  r.depth = grasp_depth(scene.depth, r.pose, config.depth_band);
  return r;
}

nlohmann::json to_json(const SelectionResult& r) {
  nlohmann::json j = {{"scene_id", r.scene_id},
                      {"index", r.index},
                      {"pose", r.pose},
                      {"score", r.score},
                      {"scores", r.scores},
                      {"random", r.random},
                      {"default_width", r.default_width},
                      {"width_std", r.width_std}};
  j["depth"] = r.depth ? nlohmann::json(*r.depth) : nlohmann::json(nullptr);
  j["corners"] = nlohmann::json::array();
  for (const Point2& p : rect_corners(GraspRect(r.pose))) j["corners"].push_back(p);
  return j;
}

namespace {

void draw_line(RgbImage& img, Point2 a, Point2 b, std::array<std::uint8_t, 3> color) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::lround(a.x + t * (b.x - a.x)));
    const int y = static_cast<int>(std::lround(a.y + t * (b.y - a.y)));
    if (!img.contains(x, y)) continue;
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
  }
}

}  // namespace

RgbImage render_overlay(const Scene& scene, const PreparedScene& prepared, const SelectionResult& result) {
  RgbImage img = scene.rgb;
  for (std::size_t i = 0; i < prepared.candidates.size(); ++i) {
    const GraspPose& p = prepared.candidates.poses[i];
    const double s = i < result.scores.size() ? std::clamp(result.scores[i], 0.0, 1.0) : 0.5;
    const std::array<std::uint8_t, 3> color{static_cast<std::uint8_t>(std::lround(255 * (1 - s))),
                                            static_cast<std::uint8_t>(std::lround(255 * s)), 0};
    const Point2 d{6 * std::cos(p.theta), 6 * std::sin(p.theta)};
    draw_line(img, Point2{p.x, p.y} - d, Point2{p.x, p.y} + d, color);
  }
  const auto corners = rect_corners(GraspRect(result.pose));
  for (int k = 0; k < 4; ++k) draw_line(img, corners[k], corners[(k + 1) % 4], {0, 0, 255});
  return img;
}

// ---------------------------------------------------------------- learning curves

patch::NormalizationStats dataset_depth_stats(const dataset::DatasetIndex& index) {
  if (index.empty()) fail(ErrorKind::kData, "dataset is empty");
  // At most ~200 scenes, spread over the index, to bound memory on Cornell.
  const std::size_t stride = std::max<std::size_t>(1, index.size() / 200);
  std::vector<std::shared_ptr<const Scene>> held;
  std::vector<const Scene*> ptrs;
  for (std::size_t i = 0; i < index.size(); i += stride) {
    held.push_back(index.load(i));
    ptrs.push_back(held.back().get());
  }
  return patch::compute_depth_stats(std::span<const Scene* const>(ptrs));
}

namespace {

using LabelKey = std::tuple<std::string, double, double, double, bool>;

LabelKey key_of(const Label& l) { return {l.scene_id, l.pose.x, l.pose.y, l.pose.theta, l.positive()}; }

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(seed ^ splitmix64(a * 0x9E3779B97F4A7C15ULL + b + 1));
}

}  // namespace

CurveReport run_learning_curve(const dataset::DatasetIndex& index, const dataset::SplitSpec& split,
                               const patch::NormalizationStats& stats, const Encoder& encoder,
                               const ExperimentConfig& config) {
  if (config.replicates < 1) fail(ErrorKind::kInvalidArgument, "replicates must be >= 1");
  CurveReport report;
  report.test_scenes = split.test;

  // Test scenes: candidates and codes computed once.
  struct TestScene {
    PreparedScene prepared;
    std::vector<GraspRect> positives;
  };
  std::vector<TestScene> tests;
  const Rng root(config.seed);
  for (const std::string& id : split.test) {
    const long i = index.find(id);
    if (i < 0) fail(ErrorKind::kData, "split references unknown scene '" + id + "'");
    TestScene t;
    t.positives = index.positives(id);
    try {
      Rng rng = root.split(static_cast<std::uint64_t>(i));
      t.prepared = prepare_scene(*index.load(static_cast<std::size_t>(i)), stats, encoder, rng, config.selection);
    } catch (const Error& e) {
      spdlog::warn("test scene {} has no candidates: {}", id, e.what());
      t.prepared.scene_id = id;
    }
    tests.push_back(std::move(t));
  }

  // Codes of every training label, computed once.
  std::vector<Label> pool;
  for (const Label& l : index.labels)
    if (!split.is_test(l.scene_id)) pool.push_back(l);
  const EncodedLabels all = encode_labels(index, pool, stats, encoder, config.selection);
  std::map<LabelKey, Eigen::Index> row_of;
  for (std::size_t r = 0; r < pool.size(); ++r) row_of.emplace(key_of(pool[r]), static_cast<Eigen::Index>(r));

  for (std::size_t count : config.counts) {
    for (int rep = 0; rep < config.replicates; ++rep) {
      const std::uint64_t draw_seed = mix(config.seed, count, static_cast<std::uint64_t>(rep));
      const std::vector<Label> chosen =
          config.per_object ? dataset::subsample_labels_per_object(index, split, count, draw_seed)
                            : dataset::subsample_labels(index, split, count, draw_seed);
      EncodedLabels data;
      data.labels = chosen;
      data.codes.resize(static_cast<Eigen::Index>(chosen.size()), all.codes.cols());
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        data.codes.row(static_cast<Eigen::Index>(k)) = all.codes.row(row_of.at(key_of(chosen[k])));
      }
      Rng fit_rng(draw_seed ^ 0x5DEECE66DULL);
      const PreferenceModel model = fit_model(data, config.classifier, config.gp, fit_rng);

      std::vector<metric::SceneScore> scores;
      Rng select_rng(draw_seed ^ 0xB5297A4DULL);
      for (const TestScene& t : tests) {
        std::optional<GraspRect> chosen_rect;
        if (t.prepared.candidates.size() > 0) {
          chosen_rect = GraspRect(select_from(t.prepared, model, select_rng, config.selection).pose);
        }
        scores.push_back(metric::score_scene(t.prepared.scene_id, chosen_rect, t.positives));
      }
      const metric::Summary summary = metric::aggregate(scores);
      report.rows.push_back({count, rep, summary.percentage, chosen.size()});
      spdlog::debug("labels {} replicate {}: {:.1f}%", count, rep, summary.percentage);
    }
  }

  for (std::size_t count : config.counts) {
    std::vector<double> v;
    for (const CurveRow& r : report.rows)
      if (r.label_count == count) v.push_back(r.rm_percent);
    CurvePoint p;
    p.label_count = count;
    for (double x : v) p.mean += x / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - p.mean) * (x - p.mean);
      p.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    report.points.push_back(p);
  }
  return report;
}

void write_curve_csv(const std::filesystem::path& path, const CurveReport& report) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "label_count,replicate,rm_percent\n";
  for (const CurveRow& r : report.rows) out << r.label_count << ',' << r.replicate << ',' << r.rm_percent << '\n';
}

nlohmann::json curve_json(const CurveReport& report) {
  nlohmann::json points = nlohmann::json::array();
  for (const CurvePoint& p : report.points) {
    points.push_back({{"label_count", p.label_count}, {"mean", p.mean}, {"stddev", p.stddev}});
  }
  return {{"points", points}, {"test_scenes", report.test_scenes}, {"runs", report.rows.size()}};
}

}  // namespace lgps::pipeline
