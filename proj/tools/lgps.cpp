// lgps command-line entry point.
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lgps/dataset.hpp"
#include "lgps/encoder.hpp"
#include "lgps/pipeline.hpp"
#include "lgps/server.hpp"
#include "lgps/vae/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lgps;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDataError = 2, kNumeric = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return kUsage;
    case ErrorKind::kOptimization:
    case ErrorKind::kTrainingDiverged: return kNumeric;
    default: return kDataError;
  }
}

// JSON config files: top-level keys are global options, nested objects are
// subcommand sections. Values given on the command line win.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> out;
    collect(j, "", {}, out);
    return out;
  }

 private:
  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (name == "config" || name == "help") continue;
      if (opt->get_type_size() != 0) {
        if (opt->count() == 1) {
          j[name] = opt->results().at(0);
        } else if (opt->count() > 1) {
          j[name] = opt->results();
        } else if (default_also && !opt->get_default_str().empty()) {
          j[name] = opt->get_default_str();
        }
      } else if (opt->count() > 0 || default_also) {
        j[name] = opt->count() > 0;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      if (sub->parsed()) j[sub->get_name()] = dump(sub, default_also);
    }
    return j;
  }

  static void collect(const json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) collect(*it, it.key(), parents, out);
      return;
    }
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = name;
    auto scalar = [&](const json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
      if (v.is_number()) return v.dump();
      throw CLI::ConversionError("unsupported value for '" + name + "'");
    };
    if (j.is_array()) {
      for (const json& v : j) item.inputs.push_back(scalar(v));
    } else {
      item.inputs.push_back(scalar(j));
    }
    out.push_back(std::move(item));
  }
};

struct Globals {
  bool json = false;
  int verbose = 0;
  bool quiet = false;
};

void write_snapshot(const CLI::App& app, const fs::path& where) {
  if (where.has_parent_path()) fs::create_directories(where.parent_path());
  std::ofstream out(where);
  if (!out) fail(ErrorKind::kIo, "cannot write " + where.string());
  out << app.config_to_str(true, false) << '\n';
  spdlog::info("resolved configuration written to {}", where.string());
}

void emit(const Globals& g, const json& j, const std::string& text) {
  if (g.json) {
    std::cout << j.dump() << std::endl;
  } else {
    std::cout << text << std::endl;
  }
}

dataset::DatasetIndex load_nonempty(const fs::path& root) {
  dataset::DatasetIndex index = dataset::load_dataset(root);
  if (index.empty()) fail(ErrorKind::kData, "dataset " + root.string() + " contains no scenes");
  return index;
}

// Defaults, then the JSON file, then an explicit --patch-scale.
pipeline::SelectionConfig selection_for(const Encoder& enc, const CLI::Option* scale_opt, double patch_scale,
                                        const std::string& config_json) {
  pipeline::SelectionConfig c;
  if (!config_json.empty()) {
    std::ifstream in(config_json);
    if (!in) fail(ErrorKind::kIo, "cannot read " + config_json);
    c = pipeline::selection_config_from_json(json::parse(in));
  }
  c.patch.size = enc.patch_size();
  if (scale_opt->count() > 0) c.patch.scale = patch_scale;
  return c;
}

std::vector<dataset::SyntheticObjectSpec> specs_from(const std::string& objects) {
  if (objects == "suite") return dataset::default_suite();
  if (objects == "hammer") return {dataset::hammer_spec()};
  std::ifstream in(objects);
  if (!in) fail(ErrorKind::kInvalidArgument, "--objects must be 'suite', 'hammer' or a JSON file");
  std::vector<dataset::SyntheticObjectSpec> specs;
  for (const json& j : json::parse(in)) specs.push_back(dataset::synthetic_spec_from_json(j));
  return specs;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("lgps"));

  CLI::App app{"Label-efficient grasp preference selection"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (flags override it)");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_flag("--json", g.json, "Machine-readable output on stdout");
  app.add_flag("-v,--verbose", g.verbose, "More logging (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "Only warnings and errors");
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  // generate-synthetic
  auto* gen = app.add_subcommand("generate-synthetic", "Write a synthetic dataset in the custom format");
  std::string gen_out, gen_objects = "suite";
  int gen_scenes = 10;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--objects", gen_objects, "suite, hammer, or a JSON file of object specs")->capture_default_str();
  gen->add_option("--scenes-per-object", gen_scenes, "Scenes per object")->capture_default_str()->check(CLI::PositiveNumber);

  // extract-patches
  auto* ext = app.add_subcommand("extract-patches", "Candidate patches of every scene into a corpus file");
  std::string ext_dataset, ext_out;
  int ext_size = 32;
  double ext_scale = 3.0;
  std::size_t ext_max = 0;
  ext->add_option("--dataset", ext_dataset, "Dataset root")->required();
  ext->add_option("--out", ext_out, "Corpus file")->required();
  ext->add_option("--patch-size", ext_size, "Patch side P")->capture_default_str()->check(CLI::PositiveNumber);
  ext->add_option("--patch-scale", ext_scale, "Source pixels per patch pixel")->capture_default_str();
  ext->add_option("--max-patches", ext_max, "Uniform subsample cap (0 = keep all)")->capture_default_str();

  // train-vae
  auto* tv = app.add_subcommand("train-vae", "Train the VAE encoder on a patch corpus");
  std::string tv_corpus, tv_out;
  vae::VaeConfig vc = vae::VaeConfig::desk();
  tv->add_option("--corpus", tv_corpus, "Corpus file")->required();
  tv->add_option("--out", tv_out, "Encoder checkpoint")->required();
  tv->add_option("--epochs", vc.epochs, "Epochs")->capture_default_str();
  tv->add_option("--latent", vc.latent_dim, "Latent dimension")->capture_default_str();
  tv->add_option("--batch", vc.batch, "Mini-batch size")->capture_default_str();
  tv->add_option("--lr", vc.lr, "Adam learning rate")->capture_default_str();
  tv->add_option("--beta", vc.beta, "KL weight")->capture_default_str();
  tv->add_option("--widths", vc.widths, "Encoder channel widths")->capture_default_str()->delimiter(',');
  tv->add_option("--max-seconds", vc.max_seconds, "Wall-clock budget (0 = none)")->capture_default_str();

  // fit-pca
  auto* fp = app.add_subcommand("fit-pca", "Fit the PCA baseline encoder on a patch corpus");
  std::string fp_corpus, fp_out;
  int fp_latent = 32;
  fp->add_option("--corpus", fp_corpus, "Corpus file")->required();
  fp->add_option("--out", fp_out, "Encoder checkpoint")->required();
  fp->add_option("--latent", fp_latent, "Components")->capture_default_str();

  // fit-gp
  auto* fg = app.add_subcommand("fit-gp", "Fit the preference classifier and width regressor");
  std::string fg_dataset, fg_encoder, fg_out, fg_labels, fg_classifier = "gp", fg_selection;
  long fg_count = -1;
  bool fg_per_object = false;
  double fg_scale = 3.0;
  fg->add_option("--dataset", fg_dataset, "Dataset root")->required();
  fg->add_option("--encoder", fg_encoder, "Encoder checkpoint")->required();
  fg->add_option("--out", fg_out, "Model file")->required();
  fg->add_option("--labels", fg_labels, "JSON array of labels to use instead of the dataset's");
  fg->add_option("--count", fg_count, "Labels drawn from the training split (-1 = all)")->capture_default_str();
  fg->add_flag("--per-object", fg_per_object, "--count is per object");
  fg->add_option("--classifier", fg_classifier, "gp or logistic")->capture_default_str();
  fg->add_option("--selection-config", fg_selection, "JSON selection settings");
  auto* fg_scale_opt =
      fg->add_option("--patch-scale", fg_scale, "Source pixels per patch pixel")->capture_default_str();

  // select
  auto* sel = app.add_subcommand("select", "Select a grasp on one scene");
  std::string sel_dataset, sel_scene, sel_encoder, sel_model, sel_out, sel_selection;
  double sel_scale = 3.0;
  sel->add_option("--dataset", sel_dataset, "Dataset root")->required();
  sel->add_option("--scene", sel_scene, "Scene id")->required();
  sel->add_option("--encoder", sel_encoder, "Encoder checkpoint")->required();
  sel->add_option("--model", sel_model, "Model file (omit for a random choice)");
  sel->add_option("--out-dir", sel_out, "Writes <scene>.selection.json and <scene>.overlay.png");
  auto* sel_scale_opt =
      sel->add_option("--patch-scale", sel_scale, "Source pixels per patch pixel")->capture_default_str();
  sel->add_option("--selection-config", sel_selection, "JSON selection settings");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Learning curve over label counts");
  std::string ev_dataset, ev_encoder, ev_out, ev_classifier = "gp", ev_selection;
  std::vector<std::size_t> ev_counts{0, 10, 20};
  int ev_reps = 1;
  bool ev_per_object = false;
  std::uint64_t ev_split = 0;
  double ev_scale = 3.0;
  ev->add_option("--dataset", ev_dataset, "Dataset root")->required();
  ev->add_option("--encoder", ev_encoder, "Encoder checkpoint")->required();
  ev->add_option("--out-dir", ev_out, "Writes curve.csv and curve.json")->required();
  ev->add_option("--counts", ev_counts, "Label counts")->delimiter(',')->capture_default_str();
  ev->add_flag("--per-object", ev_per_object, "Counts are per object");
  ev->add_option("--replicates", ev_reps, "Replicates per count")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--classifier", ev_classifier, "gp or logistic")->capture_default_str();
  ev->add_option("--split-seed", ev_split, "Seed of the test-scene split")->capture_default_str();
  auto* ev_scale_opt =
      ev->add_option("--patch-scale", ev_scale, "Source pixels per patch pixel")->capture_default_str();
  ev->add_option("--selection-config", ev_selection, "JSON selection settings");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP labeling service");
  std::string sv_dataset, sv_encoder, sv_host = "127.0.0.1", sv_log, sv_classifier = "gp", sv_selection;
  int sv_port = 8080;
  double sv_scale = 3.0, sv_debounce = 0.5;
  sv->add_option("--dataset", sv_dataset, "Dataset root")->required();
  sv->add_option("--encoder", sv_encoder, "Encoder checkpoint")->required();
  sv->add_option("--port", sv_port, "Port")->capture_default_str();
  sv->add_option("--host", sv_host, "Bind address")->capture_default_str();
  sv->add_option("--label-log", sv_log, "Append-only JSON-lines label log (replayed at start)");
  sv->add_option("--classifier", sv_classifier, "gp or logistic")->capture_default_str();
  sv->add_option("--selection-config", sv_selection, "JSON selection settings");
  auto* sv_scale_opt =
      sv->add_option("--patch-scale", sv_scale, "Source pixels per patch pixel")->capture_default_str();
  sv->add_option("--debounce", sv_debounce, "Seconds to wait for more labels before refitting")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(g.quiet ? spdlog::level::warn
                            : g.verbose >= 1 ? spdlog::level::debug
                                             : spdlog::level::info);

  try {
    if (gen->parsed()) {
      const auto specs = specs_from(gen_objects);
      const auto index = dataset::generate_synthetic(specs, gen_scenes, seed);
      dataset::write_custom(gen_out, index);
      write_snapshot(app, fs::path(gen_out) / "generate-synthetic.config.json");
      emit(g, {{"scenes", index.size()}, {"labels", index.labels.size()}, {"out", gen_out}},
           "wrote " + std::to_string(index.size()) + " scenes and " + std::to_string(index.labels.size()) +
               " labels to " + gen_out);
    } else if (ext->parsed()) {
      const auto index = load_nonempty(ext_dataset);
      const auto stats = pipeline::dataset_depth_stats(index);
      patch::PatchConfig pc{ext_size, ext_scale};
      candgen::CandidateConfig cc;
      const Rng root(seed);
      std::vector<patch::Patch> patches;
      std::size_t failed = 0;
      for (std::size_t i = 0; i < index.size(); ++i) {
        try {
          const auto scene = index.load(i);
          Rng rng = root.split(i);
          const auto cands = candgen::candidates_for_scene(*scene, rng, cc).candidates;
          const patch::PatchExtractor ex(*scene, stats, pc);
          for (const GraspPose& p : cands.poses) patches.push_back(ex.extract(p));
        } catch (const Error& e) {
          ++failed;
          spdlog::warn("scene {}: {}", index.entries[i].id, e.what());
        }
      }
      if (patches.empty()) fail(ErrorKind::kData, "no patches could be extracted");
      std::vector<std::size_t> keep(patches.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
      if (ext_max > 0 && ext_max < patches.size()) {
        Rng pick = root.split(~0ULL);
        pick.shuffle(keep);
        keep.resize(ext_max);
        std::sort(keep.begin(), keep.end());
      }
      patch::PatchCorpus corpus;
      for (std::size_t i : keep) corpus.add(patches[i]);
      patch::write_corpus(ext_out, corpus);
      write_snapshot(app, ext_out + ".config.json");
      emit(g,
           {{"patches", corpus.count()}, {"scenes", index.size()}, {"failed_scenes", failed}, {"out", ext_out},
            {"depth_min", stats.depth_min}, {"depth_max", stats.depth_max}},
           "wrote " + std::to_string(corpus.count()) + " patches to " + ext_out);
    } else if (tv->parsed()) {
      const auto corpus = patch::read_corpus(tv_corpus);
      vc.patch_size = corpus.size;
      vc.seed = seed;
      Rng rng(seed);
      const auto result = vae::train(corpus, vc, rng);
      VaeEncoder(result.model).save(tv_out);
      vae::write_history_csv(tv_out + ".history.csv", result.history);
      write_snapshot(app, tv_out + ".config.json");
      const auto& last = result.history.back();
      emit(g,
           {{"out", tv_out},
            {"epochs", result.history.size() - 1},
            {"train_loss", last.train.loss},
            {"validation_loss", last.validation.loss},
            {"seconds", last.seconds},
            {"hit_time_budget", result.hit_time_budget}},
           "trained " + std::to_string(result.history.size() - 1) + " epochs, validation loss " +
               std::to_string(last.validation.loss));
    } else if (fp->parsed()) {
      const auto corpus = patch::read_corpus(fp_corpus);
      Rng rng(seed);
      const PcaEncoder enc = PcaEncoder::fit(corpus, fp_latent, rng);
      enc.save(fp_out);
      write_snapshot(app, fp_out + ".config.json");
      emit(g, {{"out", fp_out}, {"components", enc.latent_dim()}},
           "fitted " + std::to_string(enc.latent_dim()) + " components");
    } else if (fg->parsed()) {
      const auto index = load_nonempty(fg_dataset);
      const auto enc = load_encoder(fg_encoder);
      const auto stats = pipeline::dataset_depth_stats(index);
      const auto sc = selection_for(*enc, fg_scale_opt, fg_scale, fg_selection);
      std::vector<Label> labels;
      if (!fg_labels.empty()) {
        std::ifstream in(fg_labels);
        if (!in) fail(ErrorKind::kIo, "cannot read " + fg_labels);
        for (const json& j : json::parse(in)) labels.push_back(j.get<Label>());
      } else {
        const auto split = dataset::make_split(index, seed);
        if (fg_count < 0) {
          for (const Label& l : index.labels)
            if (!split.is_test(l.scene_id)) labels.push_back(l);
        } else if (fg_per_object) {
          labels = dataset::subsample_labels_per_object(index, split, static_cast<std::size_t>(fg_count), seed);
        } else {
          labels = dataset::subsample_labels(index, split, static_cast<std::size_t>(fg_count), seed);
        }
      }
      const auto data = pipeline::encode_labels(index, labels, stats, *enc, sc);
      Rng rng(seed);
      const auto model =
          pipeline::fit_model(data, pipeline::classifier_kind_from_string(fg_classifier), {}, rng);
      model.save(fg_out);
      write_snapshot(app, fg_out + ".config.json");
      json out = {{"out", fg_out},
                  {"fitted", model.fitted()},
                  {"labels", labels.size()},
                  {"positives", model.positives},
                  {"negatives", model.negatives}};
      if (model.kind == pipeline::ClassifierKind::kGp && model.classifier.fitted()) {
        out["mode"] = gp::to_string(model.classifier.mode());
        out["lengthscale"] = model.classifier.kernel().lengthscale;
        out["variance"] = model.classifier.kernel().variance;
      }
      emit(g, out,
           model.fitted() ? "fitted on " + std::to_string(labels.size()) + " labels"
                          : "no labels: wrote an unfitted model");
    } else if (sel->parsed()) {
      const auto index = load_nonempty(sel_dataset);
      const auto enc = load_encoder(sel_encoder);
      const auto stats = pipeline::dataset_depth_stats(index);
      const auto sc = selection_for(*enc, sel_scale_opt, sel_scale, sel_selection);
      const pipeline::PreferenceModel model =
          sel_model.empty() ? pipeline::PreferenceModel{} : pipeline::PreferenceModel::load(sel_model);
      const auto scene = index.load(sel_scene);
      Rng rng(seed);
      const auto prepared = pipeline::prepare_scene(*scene, stats, *enc, rng, sc);
      auto result = pipeline::select_from(prepared, model, rng, sc);
      result.depth = pipeline::grasp_depth(scene->depth, result.pose, sc.depth_band);
      json out = pipeline::to_json(result);
      if (!sel_out.empty()) {
        fs::create_directories(sel_out);
        const fs::path base = fs::path(sel_out) / sel_scene;
        std::ofstream(base.string() + ".selection.json") << out.dump(2) << '\n';
        write_png_rgb(base.string() + ".overlay.png", pipeline::render_overlay(*scene, prepared, result));
        write_snapshot(app, base.string() + ".select.config.json");
      }
      char text[256];
      std::snprintf(text, sizeof(text), "scene %s: candidate %zu of %zu at (%.1f, %.1f) theta %.3f width %.1f score %.3f depth %.3f m%s",
                    sel_scene.c_str(), result.index, prepared.candidates.size(), result.pose.x, result.pose.y,
                    result.pose.theta, *result.pose.width, result.score, *result.depth, result.random ? " (random)" : "");
      emit(g, out, text);
    } else if (ev->parsed()) {
      const auto index = load_nonempty(ev_dataset);
      const auto enc = load_encoder(ev_encoder);
      const auto stats = pipeline::dataset_depth_stats(index);
      pipeline::ExperimentConfig cfg;
      cfg.counts = ev_counts;
      cfg.per_object = ev_per_object;
      cfg.replicates = ev_reps;
      cfg.seed = seed;
      cfg.classifier = pipeline::classifier_kind_from_string(ev_classifier);
      cfg.selection = selection_for(*enc, ev_scale_opt, ev_scale, ev_selection);
      const auto split = dataset::make_split(index, ev_split);
      const auto report = pipeline::run_learning_curve(index, split, stats, *enc, cfg);
      fs::create_directories(ev_out);
      pipeline::write_curve_csv(fs::path(ev_out) / "curve.csv", report);
      json summary = pipeline::curve_json(report);
      summary["config"] = pipeline::to_json(cfg);
      std::ofstream(fs::path(ev_out) / "curve.json") << summary.dump(2) << '\n';
      write_snapshot(app, fs::path(ev_out) / "evaluate.config.json");
      std::ostringstream text;
      for (const auto& p : report.points) {
        text << "labels " << p.label_count << ": " << p.mean << "% +/- " << p.stddev << '\n';
      }
      emit(g, summary, text.str());
    } else if (sv->parsed()) {
      server::ServiceConfig cfg;
      cfg.label_log = sv_log;
      cfg.seed = seed;
      cfg.debounce = std::chrono::milliseconds(static_cast<long>(sv_debounce * 1000));
      cfg.classifier = pipeline::classifier_kind_from_string(sv_classifier);
      auto index = std::make_shared<dataset::DatasetIndex>(load_nonempty(sv_dataset));
      const auto enc = load_encoder(sv_encoder);
      cfg.selection = selection_for(*enc, sv_scale_opt, sv_scale, sv_selection);
      if (!sv_log.empty()) write_snapshot(app, sv_log + ".config.json");
      server::Service service(index, enc, cfg);
      server::HttpServer http(service);
      spdlog::info("listening on http://{}:{}", sv_host, sv_port);
      if (!http.listen(sv_host, sv_port)) fail(ErrorKind::kIo, "cannot listen on port " + std::to_string(sv_port));
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    if (g.json) std::cout << json{{"error", e.what()}, {"kind", to_string(e.kind())}}.dump() << std::endl;
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kOk;
}
