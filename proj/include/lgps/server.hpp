#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgps/dataset.hpp"
#include "lgps/encoder.hpp"
#include "lgps/pipeline.hpp"

namespace httplib {
class Server;
}

namespace lgps::server {

struct ServiceConfig {
  pipeline::SelectionConfig selection;
  pipeline::ClassifierKind classifier = pipeline::ClassifierKind::kGp;
  gp::ClassifierConfig gp;
  // Append-only JSON-lines log; replayed at startup. Empty = memory only.
  std::filesystem::path label_log;
  std::uint64_t seed = 0;
  std::chrono::milliseconds debounce{500};
};

// A fully fitted model together with the labels it was fitted on.
struct ModelSnapshot {
  long version = 0;
  std::size_t label_count = 0;
  pipeline::PreferenceModel model;
};

// Unknown scene id.
class NotFound : public Error {
 public:
  explicit NotFound(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Labeling session: scenes, cached candidates, accumulated labels and the
// current model. Labels are refitted by one background thread; readers see
// whole snapshots only.
class Service {
 public:
  Service(std::shared_ptr<const dataset::DatasetIndex> index, std::shared_ptr<const Encoder> encoder,
          ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  nlohmann::json scenes() const;
  nlohmann::json scene(const std::string& id) const;
  // PNG bytes: the on-disk file when there is one, otherwise encoded.
  std::string rgb_png(const std::string& id) const;
  nlohmann::json candidates(const std::string& id);
  nlohmann::json prediction(const std::string& id);
  nlohmann::json model_info() const;

  struct Accepted {
    long label_id = 0;
    long pending_version = 0;
    Label label;
  };
  // Throws kInvalidArgument for malformed input, NotFound for unknown scenes
  // and kInvalidPose for poses outside the image.
  Accepted add_label(const nlohmann::json& body);

  std::shared_ptr<const ModelSnapshot> snapshot() const;
  long version() const { return snapshot()->version; }
  std::vector<Label> labels() const;
  // Blocks until every posted label is reflected in the current snapshot.
  void wait_idle();

  // Fit used for every refit; deterministic in (labels, seed).
  static pipeline::PreferenceModel fit(const std::vector<Label>& labels, const Eigen::MatrixXd& codes,
                                       const ServiceConfig& config);

 private:
  std::shared_ptr<const Scene> scene_ptr(const std::string& id) const;
  const pipeline::PreparedScene& prepared(const std::string& id);
  void refit_loop();
  void refit(const std::vector<Label>& labels);

  std::shared_ptr<const dataset::DatasetIndex> index_;
  std::shared_ptr<const Encoder> encoder_;
  ServiceConfig config_;
  patch::NormalizationStats stats_;

  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::shared_ptr<const Scene>> scenes_;
  std::map<std::string, std::shared_ptr<const pipeline::PreparedScene>> prepared_;
  std::map<std::string, std::string> prepare_errors_;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const ModelSnapshot> snapshot_;

  // Label queue and refit scheduling.
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::vector<Label> labels_;
  bool dirty_ = false;
  bool refitting_ = false;
  bool stop_ = false;
  std::chrono::steady_clock::time_point last_post_;
  // Codes of labels already encoded, aligned with labels_ prefix.
  Eigen::MatrixXd codes_;
  std::thread worker_;
};

// Corners of a grasp rectangle, as drawn by the UI.
nlohmann::json corners_json(const GraspPose& pose, double height);

// HTTP/JSON routes over a Service, CORS enabled.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  bool listen(const std::string& host, int port);
  // Binds to a free port and returns it; serve with listen_after_bind().
  int bind_any(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace lgps::server
