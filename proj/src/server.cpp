#include "lgps/server.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace lgps::server {

using nlohmann::json;

Service::Service(std::shared_ptr<const dataset::DatasetIndex> index, std::shared_ptr<const Encoder> encoder,
                 ServiceConfig config)
    : index_(std::move(index)), encoder_(std::move(encoder)), config_(std::move(config)) {
  if (!index_ || index_->empty()) fail(ErrorKind::kData, "the labeling service needs a non-empty dataset");
  if (!encoder_) fail(ErrorKind::kInvalidArgument, "the labeling service needs an encoder");
  config_.selection.patch.size = encoder_->patch_size();
  stats_ = pipeline::dataset_depth_stats(*index_);
  snapshot_ = std::make_shared<const ModelSnapshot>();
  codes_.resize(0, encoder_->latent_dim());

  if (!config_.label_log.empty() && std::filesystem::exists(config_.label_log)) {
    std::ifstream in(config_.label_log);
    std::string line;
    std::size_t lineno = 0, skipped = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        Label l = j.at("label").get<Label>();
        if (index_->find(l.scene_id) < 0) fail(ErrorKind::kData, "unknown scene " + l.scene_id);
        labels_.push_back(std::move(l));
      } catch (const std::exception& e) {
        ++skipped;
        spdlog::warn("label log line {} skipped: {}", lineno, e.what());
      }
    }
    spdlog::info("replayed {} labels from {} ({} skipped)", labels_.size(), config_.label_log.string(), skipped);
    if (!labels_.empty()) refit(labels_);
  }
  worker_ = std::thread([this] { refit_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::shared_ptr<const ModelSnapshot> Service::snapshot() const {
  std::lock_guard lk(snap_mu_);
  return snapshot_;
}

std::vector<Label> Service::labels() const {
  std::lock_guard lk(mu_);
  return labels_;
}

void Service::wait_idle() {
  std::unique_lock lk(mu_);
  idle_cv_.wait(lk, [&] { return !dirty_ && !refitting_; });
}

pipeline::PreferenceModel Service::fit(const std::vector<Label>& labels, const Eigen::MatrixXd& codes,
                                       const ServiceConfig& config) {
  pipeline::EncodedLabels data{labels, codes};
  Rng rng(splitmix64(config.seed ^ static_cast<std::uint64_t>(labels.size())));
  return pipeline::fit_model(data, config.classifier, config.gp, rng);
}

void Service::refit(const std::vector<Label>& labels) {
  // Only the constructor and the worker thread get here, one at a time.
  const auto have = static_cast<std::size_t>(codes_.rows());
  if (labels.size() > have) {
    Eigen::MatrixXd grown(static_cast<Eigen::Index>(labels.size()), codes_.cols());
    grown.topRows(codes_.rows()) = codes_;
    // One label per encoder call: batched products round differently, and a
    // replayed log must give bit-identical codes.
    for (std::size_t k = have; k < labels.size(); ++k) {
      const auto enc = pipeline::encode_labels(*index_, {labels[k]}, stats_, *encoder_, config_.selection);
      grown.row(static_cast<Eigen::Index>(k)) = enc.codes.row(0);
    }
    codes_ = std::move(grown);
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto next = std::make_shared<ModelSnapshot>();
  next->model = fit(labels, codes_.topRows(static_cast<Eigen::Index>(labels.size())), config_);
  next->label_count = labels.size();
  {
    std::lock_guard lk(snap_mu_);
    next->version = snapshot_->version + 1;
    snapshot_ = std::move(next);
  }
  spdlog::info("model version {} fitted on {} labels in {:.3f} s", version(), labels.size(),
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void Service::refit_loop() {
  std::unique_lock lk(mu_);
  while (true) {
    cv_.wait(lk, [&] { return stop_ || dirty_; });
    if (stop_) return;
    // Debounce: wait until no label arrived for the debounce interval.
    while (!stop_ && std::chrono::steady_clock::now() < last_post_ + config_.debounce) {
      cv_.wait_until(lk, last_post_ + config_.debounce);
    }
    if (stop_) return;
    dirty_ = false;
    refitting_ = true;
    const std::vector<Label> labels = labels_;
    lk.unlock();
    try {
      refit(labels);
    } catch (const std::exception& e) {
      spdlog::error("refit failed, keeping model version {}: {}", version(), e.what());
    }
    lk.lock();
    refitting_ = false;
    idle_cv_.notify_all();
  }
}

std::shared_ptr<const Scene> Service::scene_ptr(const std::string& id) const {
  if (index_->find(id) < 0) throw NotFound("unknown scene '" + id + "'");
  {
    std::lock_guard lk(cache_mu_);
    const auto it = scenes_.find(id);
    if (it != scenes_.end()) return it->second;
  }
  auto s = index_->load(id);
  std::lock_guard lk(cache_mu_);
  return scenes_.emplace(id, std::move(s)).first->second;
}

const pipeline::PreparedScene& Service::prepared(const std::string& id) {
  const long i = index_->find(id);
  if (i < 0) throw NotFound("unknown scene '" + id + "'");
  std::lock_guard lk(cache_mu_);
  if (const auto it = prepared_.find(id); it != prepared_.end()) return *it->second;
  if (const auto it = prepare_errors_.find(id); it != prepare_errors_.end()) {
    fail(ErrorKind::kSegmentationFailed, it->second);
  }
  // Generated once per scene with a per-scene stream of the session seed.
  auto scene = scenes_.count(id) ? scenes_.at(id) : index_->load(id);
  scenes_.emplace(id, scene);
  Rng rng = Rng(config_.seed).split(static_cast<std::uint64_t>(i));
  try {
    auto p = std::make_shared<const pipeline::PreparedScene>(
        pipeline::prepare_scene(*scene, stats_, *encoder_, rng, config_.selection));
    return *prepared_.emplace(id, std::move(p)).first->second;
  } catch (const Error& e) {
    prepare_errors_[id] = e.what();
    throw;
  }
}

json Service::scenes() const {
  json list = json::array();
  for (const auto& e : index_->entries) {
    list.push_back({{"id", e.id},
                    {"object_id", e.object_id},
                    {"source", to_string(e.source)},
                    {"rgb_url", "/scenes/" + e.id + "/rgb.png"}});
  }
  return list;
}

json Service::scene(const std::string& id) const {
  const auto s = scene_ptr(id);
  json j = scene_metadata(*s);
  j["rgb_url"] = "/scenes/" + id + "/rgb.png";
  j["candidates_url"] = "/scenes/" + id + "/candidates";
  j["prediction_url"] = "/scenes/" + id + "/prediction";
  std::size_t session = 0;
  {
    std::lock_guard lk(mu_);
    for (const Label& l : labels_) session += l.scene_id == id ? 1 : 0;
  }
  j["session_labels"] = session;
  j["dataset_labels"] = index_->labels_of(id).size();
  return j;
}

std::string Service::rgb_png(const std::string& id) const {
  const long i = index_->find(id);
  if (i < 0) throw NotFound("unknown scene '" + id + "'");
  const auto& path = index_->entries[static_cast<std::size_t>(i)].rgb_path;
  if (!path.empty() && std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  const auto bytes = encode_png_rgb(scene_ptr(id)->rgb);
  return std::string(bytes.begin(), bytes.end());
}

json Service::candidates(const std::string& id) {
  const pipeline::PreparedScene& p = prepared(id);
  const auto snap = snapshot();
  const Eigen::VectorXd s = snap->model.score(p.codes);
  json list = json::array();
  for (std::size_t k = 0; k < p.candidates.size(); ++k) {
    const GraspPose& pose = p.candidates.poses[k];
    list.push_back({{"index", k},
                    {"x", pose.x},
                    {"y", pose.y},
                    {"theta", pose.theta},
                    {"provenance", candgen::to_string(p.candidates.provenance[k])},
                    {"score", s(static_cast<Eigen::Index>(k))}});
  }
  return {{"scene_id", id}, {"model_version", snap->version}, {"count", p.candidates.size()}, {"candidates", list}};
}

json Service::prediction(const std::string& id) {
  const pipeline::PreparedScene& p = prepared(id);
  const auto snap = snapshot();
  const auto i = static_cast<std::uint64_t>(index_->find(id));
  // Same scene and version give the same answer, random choices included.
  Rng rng(splitmix64(config_.seed ^ splitmix64(i * 1315423911ULL + static_cast<std::uint64_t>(snap->version))));
  pipeline::SelectionResult r = pipeline::select_from(p, snap->model, rng, config_.selection);
  try {
    r.depth = pipeline::grasp_depth(scene_ptr(id)->depth, r.pose, config_.selection.depth_band);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDepthUnavailable) throw;
  }
  json j = pipeline::to_json(r);
  j["model_version"] = snap->version;
  return j;
}

json Service::model_info() const {
  const auto snap = snapshot();
  const auto& m = snap->model;
  json j = {{"version", snap->version},
            {"fitted", m.fitted()},
            {"classifier", pipeline::to_string(m.kind)},
            {"labels", snap->label_count},
            {"positives", m.positives},
            {"negatives", m.negatives},
            {"encoder", encoder_->kind()},
            {"latent_dim", encoder_->latent_dim()}};
  if (m.kind == pipeline::ClassifierKind::kGp && m.classifier.fitted()) {
    j["mode"] = gp::to_string(m.classifier.mode());
    j["degenerate"] = m.classifier.degenerate();
    j["kernel"] = {{"lengthscale", m.classifier.kernel().lengthscale}, {"variance", m.classifier.kernel().variance}};
  }
  {
    std::lock_guard lk(mu_);
    j["pending"] = dirty_ || refitting_;
    j["session_labels"] = labels_.size();
  }
  return j;
}

Service::Accepted Service::add_label(const json& body) {
  if (!body.is_object()) fail(ErrorKind::kInvalidArgument, "label body must be a JSON object");
  Label label;
  try {
    label = body.get<Label>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed label: ") + e.what());
  }
  const auto scene = scene_ptr(label.scene_id);
  const GraspPose& p = label.pose;
  if (!(p.x >= 0.0 && p.x < scene->width() && p.y >= 0.0 && p.y < scene->height())) {
    fail(ErrorKind::kInvalidPose, "pose center lies outside the scene image");
  }
  Accepted a;
  a.label = label;
  {
    std::lock_guard lk(mu_);
    if (!config_.label_log.empty()) {
      std::ofstream log(config_.label_log, std::ios::app);
      if (!log) fail(ErrorKind::kIo, "cannot append to " + config_.label_log.string());
      log << json{{"id", labels_.size()}, {"label", label}}.dump() << '\n';
    }
    a.label_id = static_cast<long>(labels_.size());
    labels_.push_back(label);
    dirty_ = true;
    last_post_ = std::chrono::steady_clock::now();
    a.pending_version = version() + (refitting_ ? 2 : 1);
  }
  cv_.notify_all();
  return a;
}

json corners_json(const GraspPose& pose, double height) {
  json c = json::array();
  for (const Point2& p : rect_corners(GraspRect(pose, height))) c.push_back({p.x, p.y});
  return c;
}

// ---------------------------------------------------------------- HTTP

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

int status_for(const Error& e) {
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  switch (e.kind()) {
    case ErrorKind::kInvalidArgument: return 400;
    case ErrorKind::kInvalidPose:
    case ErrorKind::kSegmentationFailed:
    case ErrorKind::kGenerationFailed:
    case ErrorKind::kNoTangent: return 422;
    default: return 500;
  }
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_json(res, {{"error", e.what()}, {"kind", to_string(e.kind())}}, status_for(e));
  } catch (const std::exception& e) {
    send_json(res, {{"error", e.what()}}, 500);
  }
}

double query_number(const httplib::Request& req, const std::string& name, std::optional<double> fallback = {}) {
  if (!req.has_param(name)) {
    if (fallback) return *fallback;
    fail(ErrorKind::kInvalidArgument, "missing query parameter '" + name + "'");
  }
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(ErrorKind::kInvalidArgument, "query parameter '" + name + "' is not a number");
  }
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), http_(std::make_unique<httplib::Server>()) {
  auto& s = *http_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/scenes", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.scenes()); });
  });
  s.Get(R"(/scenes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.scene(req.matches[1])); });
  });
  s.Get(R"(/scenes/([^/]+)/rgb\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(service_.rgb_png(req.matches[1]), "image/png"); });
  });
  s.Get(R"(/scenes/([^/]+)/candidates)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.candidates(req.matches[1])); });
  });
  s.Get(R"(/scenes/([^/]+)/prediction)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.prediction(req.matches[1])); });
  });
  s.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.model_info()); });
  });
  s.Get("/labels", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service_.labels()); });
  });
  s.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        fail(ErrorKind::kInvalidArgument, std::string("body is not JSON: ") + e.what());
      }
      const auto a = service_.add_label(body);
      send_json(res, {{"label_id", a.label_id}, {"pending_version", a.pending_version}, {"label", a.label}}, 202);
    });
  });
  s.Get("/geometry/corners", [](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const double w = query_number(req, "width");
      const double h = query_number(req, "height", kDefaultRectHeight);
      if (!(w > 0.0 && h > 0.0)) fail(ErrorKind::kInvalidArgument, "width and height must be positive");
      const GraspPose pose(query_number(req, "x"), query_number(req, "y"), query_number(req, "theta"), w);
      send_json(res, {{"pose", pose}, {"height", h}, {"corners", corners_json(pose, h)}});
    });
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return http_->listen(host, port); }

int HttpServer::bind_any(const std::string& host) { return http_->bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return http_->listen_after_bind(); }

void HttpServer::stop() {
  if (http_->is_running()) http_->stop();
}

bool HttpServer::running() const { return http_->is_running(); }

}  // namespace lgps::server
