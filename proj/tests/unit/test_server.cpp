#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "lgps/server.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace lgps;
using namespace lgps::server;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Six hammer scenes on disk (so rgb.png has file bytes) and a PCA encoder.
struct World {
  fs::path root;
  std::shared_ptr<const dataset::DatasetIndex> index;
  std::shared_ptr<const Encoder> encoder;
  std::shared_ptr<const dataset::DatasetIndex> truth;  // same scenes, with region truth

  World() {
    root = fs::temp_directory_path() / "lgps_server_world";
    fs::remove_all(root);
    auto generated = std::make_shared<dataset::DatasetIndex>(dataset::generate_synthetic({dataset::hammer_spec()}, 6, 31));
    dataset::write_custom(root, *generated);
    index = std::make_shared<dataset::DatasetIndex>(dataset::load_dataset(root));
    truth = generated;
    const auto stats = pipeline::dataset_depth_stats(*index);
    pipeline::SelectionConfig sc;
    patch::PatchCorpus corpus;
    for (std::size_t i = 0; i < index->size(); ++i) {
      const auto s = index->load(i);
      Rng r(i);
      const auto c = candgen::candidates_for_scene(*s, r, sc.candidates).candidates;
      const patch::PatchExtractor ex(*s, stats, sc.patch);
      for (const GraspPose& p : c.poses) corpus.add(ex.extract(p));
    }
    Rng rng(4);
    encoder = std::make_shared<PcaEncoder>(PcaEncoder::fit(corpus, 8, rng));
  }

  // Positive near the middle of the upper handle, negative on the lower handle, both from scene 0.
  std::pair<Label, Label> hammer_labels() const {
    const auto& e = truth->entries[0];
    const auto& t = *e.truth;
    const auto mid = [](const dataset::Region& r) { return Point2{(r.a.x + r.b.x) / 2, (r.a.y + r.b.y) / 2}; };
    Label pos, neg;
    double bp = 1e300, bn = 1e300;
    for (std::size_t k : truth->labels_of(e.id)) {
      const Label& l = truth->labels[k];
      const Point2 p{l.pose.x, l.pose.y};
      if (l.positive()) {
        const double d = norm(p - mid(t.preferred[0]));
        if (d < bp) bp = d, pos = l;
      } else if (dataset::in_region(t.forbidden[0], l.pose)) {
        const double d = norm(p - mid(t.forbidden[0]));
        if (d < bn) bn = d, neg = l;
      }
    }
    REQUIRE(bp < 1e300);
    REQUIRE(bn < 1e300);
    return {pos, neg};
  }
};

const World& world() {
  static const World w;
  return w;
}

ServiceConfig quick_config(fs::path log = {}) {
  ServiceConfig c;
  c.seed = 3;
  c.debounce = std::chrono::milliseconds(30);
  c.label_log = std::move(log);
  return c;
}

// Serves a Service on a free local port for the lifetime of the object.
struct Running {
  HttpServer http;
  int port;
  std::thread thread;
  httplib::Client client;

  explicit Running(Service& s) : http(s), port(http.bind_any("127.0.0.1")), client("127.0.0.1", port) {
    REQUIRE(port > 0);
    thread = std::thread([this] { http.listen_after_bind(); });
    for (int i = 0; i < 200 && !http.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    REQUIRE(http.running());
  }
  ~Running() {
    http.stop();
    thread.join();
  }

  json get(const std::string& path, int expect = 200) {
    auto r = client.Get(path);
    REQUIRE(r);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
  json post(const std::string& path, const std::string& body, int expect) {
    auto r = client.Post(path, body, "application/json");
    REQUIRE(r);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("scene listing, metadata and rgb bytes") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);

  const json scenes = run.get("/scenes");
  REQUIRE(scenes.size() == 6);
  const std::string id = scenes[0]["id"];
  CHECK(scenes[0]["rgb_url"] == "/scenes/" + id + "/rgb.png");

  const json meta = run.get("/scenes/" + id);
  CHECK(meta["session_labels"] == 0);
  CHECK(meta["dataset_labels"] == w.index->labels_of(id).size());

  auto png = run.client.Get("/scenes/" + id + "/rgb.png");
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(png->get_header_value("Content-Type") == "image/png");
  CHECK(png->body == read_file(w.index->entries[0].rgb_path));

  run.get("/scenes/nope", 404);
  run.get("/scenes/nope/candidates", 404);
  run.get("/scenes/nope/prediction", 404);
  auto missing = run.client.Get("/scenes/nope/rgb.png");
  REQUIRE(missing);
  CHECK(missing->status == 404);
}

TEST_CASE("CORS headers and preflight") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);
  auto r = run.client.Get("/model");
  REQUIRE(r);
  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
  auto pre = run.client.Options("/labels");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("label validation errors") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);
  const std::string id = w.index->entries[0].id;
  const auto sw = w.index->load(0)->width();

  run.post("/labels", "{not json", 400);
  run.post("/labels", "[1,2]", 400);
  run.post("/labels", json{{"scene_id", id}}.dump(), 400);
  // Positive labels need a width and negative ones must not have one.
  run.post("/labels", json{{"scene_id", id}, {"pose", {{"x", 5}, {"y", 5}, {"theta", 0}}}, {"polarity", "positive"}}.dump(),
           400);
  run.post("/labels", json{{"scene_id", "nope"}, {"pose", {{"x", 5}, {"y", 5}, {"theta", 0}}}, {"polarity", "negative"}}.dump(),
           404);
  const json err = run.post(
      "/labels",
      json{{"scene_id", id}, {"pose", {{"x", sw + 3}, {"y", 5}, {"theta", 0}}}, {"polarity", "negative"}}.dump(), 422);
  CHECK(err["kind"] == to_string(ErrorKind::kInvalidPose));
  CHECK(svc.labels().empty());
  CHECK(run.get("/model")["version"] == 0);
}

TEST_CASE("corner endpoint matches a rotation-matrix oracle") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);
  Rng rng(77);
  for (int k = 0; k < 20; ++k) {
    const double x = rng.uniform(0, 200), y = rng.uniform(0, 200), th = rng.uniform(-1.5, 1.5);
    const double wd = rng.uniform(5, 80), h = rng.uniform(5, 50);
    std::ostringstream q;
    q.precision(17);
    q << "/geometry/corners?x=" << x << "&y=" << y << "&theta=" << th << "&width=" << wd << "&height=" << h;
    const json j = run.get(q.str());
    REQUIRE(j["corners"].size() == 4);
    // Oracle: every corner is (x, y) + R(theta) (+-w/2, +-h/2).
    std::multiset<std::pair<long, long>> want, got;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1}) {
        const double du = sx * wd / 2, dv = sy * h / 2;
        const double cx = x + std::cos(th) * du - std::sin(th) * dv;
        const double cy = y + std::sin(th) * du + std::cos(th) * dv;
        want.insert({std::lround(cx * 1e6), std::lround(cy * 1e6)});
      }
    for (const auto& c : j["corners"]) got.insert({std::lround(c[0].get<double>() * 1e6), std::lround(c[1].get<double>() * 1e6)});
    CHECK(want == got);
  }
  const json d = run.get("/geometry/corners?x=10&y=10&theta=0&width=20");
  CHECK(d["height"] == kDefaultRectHeight);
  run.get("/geometry/corners?x=10&y=10&theta=0", 400);
  run.get("/geometry/corners?x=10&y=abc&theta=0&width=3", 400);
  run.get("/geometry/corners?x=10&y=1&theta=0&width=-3", 400);
}

TEST_CASE("no labels gives uniform scores and a random, stable prediction") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);
  const std::string id = w.index->entries[2].id;
  const json c1 = run.get("/scenes/" + id + "/candidates");
  const json c2 = run.get("/scenes/" + id + "/candidates");
  CHECK(c1 == c2);
  CHECK(c1["model_version"] == 0);
  REQUIRE(c1["count"].get<int>() > 0);
  for (const auto& c : c1["candidates"]) CHECK(c["score"] == 0.5);
  const json p1 = run.get("/scenes/" + id + "/prediction");
  const json p2 = run.get("/scenes/" + id + "/prediction");
  CHECK(p1["random"] == true);
  CHECK(p1 == p2);
  CHECK(p1["model_version"] == 0);
  CHECK(p1.contains("depth"));
}

TEST_CASE("hammer labels move the prediction into the upper handle") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  Running run(svc);
  const auto [pos, neg] = w.hammer_labels();

  // Posted back to back: debounced into one refit.
  const json a = run.post("/labels", json(pos).dump(), 202);
  const json b = run.post("/labels", json(neg).dump(), 202);
  CHECK(a["label_id"] == 0);
  CHECK(b["label_id"] == 1);
  svc.wait_idle();
  CHECK(svc.version() == 1);
  CHECK(b["pending_version"] == 1);
  const json model = run.get("/model");
  CHECK(model["fitted"] == true);
  CHECK(model["labels"] == 2);
  CHECK(model["positives"] == 1);
  CHECK(model["negatives"] == 1);
  CHECK(model["pending"] == false);

  int good = 0;
  for (std::size_t i = 1; i < w.index->size(); ++i) {
    const std::string id = w.index->entries[i].id;
    const json c = run.get("/scenes/" + id + "/candidates");
    CHECK(c["model_version"] == 1);
    CHECK(c == run.get("/scenes/" + id + "/candidates"));
    const json p = run.get("/scenes/" + id + "/prediction");
    CHECK(p["random"] == false);
    CHECK(p["model_version"] == 1);
    CHECK(p["pose"].contains("width"));
    good += dataset::in_preferred(*w.truth->entries[i].truth, p["pose"].get<GraspPose>());
  }
  CHECK(good >= 4);
  CHECK(run.get("/scenes/" + w.index->entries[0].id)["session_labels"] == 2);
  CHECK(run.get("/labels").size() == 2);
}

TEST_CASE("each refit bumps the version exactly once") {
  const World& w = world();
  Service svc(w.index, w.encoder, quick_config());
  const auto [pos, neg] = w.hammer_labels();
  const std::string id = w.index->entries[1].id;
  json before = svc.candidates(id);
  for (int k = 1; k <= 3; ++k) {
    const auto acc = svc.add_label(json(k % 2 ? pos : neg));
    CHECK(acc.pending_version == k);
    svc.wait_idle();
    CHECK(svc.version() == k);
    CHECK(svc.snapshot()->label_count == static_cast<std::size_t>(k));
    const json after = svc.candidates(id);
    CHECK(after["model_version"] == k);
    bool changed = false;
    for (std::size_t i = 0; i < after["candidates"].size(); ++i)
      changed |= after["candidates"][i]["score"] != before["candidates"][i]["score"];
    CHECK(changed);
    before = after;
  }
}

TEST_CASE("concurrent posts are all kept and refits stay consistent") {
  const World& w = world();
  const fs::path log = fs::temp_directory_path() / "lgps_server_concurrent.jsonl";
  fs::remove(log);
  Service svc(w.index, w.encoder, quick_config(log));
  Running run(svc);
  const auto [pos, neg] = w.hammer_labels();
  std::vector<std::thread> threads;
  std::atomic<int> accepted{0};
  std::mutex ids_mu;
  std::set<long> ids;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      httplib::Client cli("127.0.0.1", run.port);
      for (int k = 0; k < 5; ++k) {
        auto r = cli.Post("/labels", json((t + k) % 2 ? pos : neg).dump(), "application/json");
        if (r && r->status == 202) {
          ++accepted;
          std::lock_guard lk(ids_mu);
          ids.insert(json::parse(r->body)["label_id"].get<long>());
        }
        // Readers always see a whole snapshot.
        auto m = cli.Get("/model");
        if (m) {
          const json j = json::parse(m->body);
          if (j["fitted"] == true) CHECK(j["positives"].get<int>() + j["negatives"].get<int>() == j["labels"].get<int>());
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(accepted == 20);
  CHECK(ids.size() == 20);
  CHECK(*ids.rbegin() == 19);
  svc.wait_idle();
  CHECK(svc.snapshot()->label_count == 20);
  std::ifstream in(log);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 20);
  fs::remove(log);
}

TEST_CASE("replaying the label log reproduces the model") {
  const World& w = world();
  const fs::path log = fs::temp_directory_path() / "lgps_server_replay.jsonl";
  fs::remove(log);
  const auto [pos, neg] = w.hammer_labels();
  const std::string id = w.index->entries[3].id;
  json live;
  {
    Service svc(w.index, w.encoder, quick_config(log));
    svc.add_label(json(pos));
    svc.wait_idle();
    svc.add_label(json(neg));
    svc.wait_idle();
    Label extra = neg;
    extra.pose.x += 3;
    svc.add_label(json(extra));
    svc.wait_idle();
    CHECK(svc.version() == 3);
    live = svc.candidates(id);
  }
  // A malformed trailing line is skipped, not fatal.
  std::ofstream(log, std::ios::app) << "{broken\n";
  Service again(w.index, w.encoder, quick_config(log));
  CHECK(again.version() == 1);
  CHECK(again.labels().size() == 3);
  const json replay = again.candidates(id);
  REQUIRE(replay["candidates"].size() == live["candidates"].size());
  for (std::size_t i = 0; i < live["candidates"].size(); ++i)
    CHECK(replay["candidates"][i]["score"].get<double>() == live["candidates"][i]["score"].get<double>());
  fs::remove(log);
}

TEST_CASE("service construction errors") {
  const World& w = world();
  CHECK_THROWS_AS(Service(std::make_shared<dataset::DatasetIndex>(), w.encoder, quick_config()), Error);
  CHECK_THROWS_AS(Service(w.index, nullptr, quick_config()), Error);
}
