#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "incdet/pipeline.hpp"

namespace incdet {

/// Remote trainer: an HTTP/JSON task API. Submit a learning task, poll its
/// status, fetch the finished snapshot (SHA-256 verified by the client).
///
///   POST /tasks                {"classes":[...], "seed":N?} -> {"task_id":...}
///   GET  /tasks/<id>           status + stage timings
///   GET  /tasks/<id>/snapshot  snapshot bytes + X-Snapshot-Sha256 header
///
/// With test hooks enabled, POST /debug/corrupt_next_fetch flips one byte of
/// the next snapshot response (mode "once") or of every response ("always").
class TrainerService {
 public:
  explicit TrainerService(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.registry_dir.empty())
      throw std::invalid_argument("TrainerService: registry_dir required");
  }

  ~TrainerService() { stop(); }

  int start(const std::string& host = "127.0.0.1", int port = 0) {
    server_.Post("/tasks", [this](const httplib::Request& req, httplib::Response& res) {
      handle_submit(req, res);
    });
    server_.Get(R"(/tasks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle_status(req, res);
    });
    server_.Get(R"(/tasks/([^/]+)/snapshot)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle_snapshot(req, res);
                });
    if (cfg_.enable_test_hooks) {
      server_.Post("/debug/corrupt_next_fetch",
                   [this](const httplib::Request& req, httplib::Response& res) {
                     nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
                     const std::string mode =
                         j.is_object() ? j.value("mode", std::string("once")) : "once";
                     corrupt_mode_ = mode == "always" ? 2 : 1;
                     res.set_content("{\"ok\":true}", "application/json");
                   });
    }
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      if (!server_.bind_to_port(host, port)) throw std::runtime_error("trainer: cannot bind port");
      port_ = port;
    }
    http_thread_ = std::thread([this] { server_.listen_after_bind(); });
    worker_thread_ = std::thread([this] { worker_loop(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    server_.stop();
    {
      std::lock_guard<std::mutex> lk(mu_);
      queue_cv_.notify_all();
    }
    if (http_thread_.joinable()) http_thread_.join();
    if (worker_thread_.joinable()) worker_thread_.join();
  }

  int port() const { return port_; }

 private:
  struct Task {
    std::string id;
    std::vector<std::string> classes;
    std::uint64_t seed = 0;
    std::string status = "queued";  // queued|building|training|done|failed
    std::string error;
    double download_s = 0.0, build_s = 0.0, train_s = 0.0;
    nlohmann::json build_reports = nlohmann::json::array();
    std::vector<std::uint8_t> snapshot;
    std::string hash;
  };

  void handle_submit(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.contains("classes") || !j["classes"].is_array() ||
        j["classes"].empty()) {
      res.status = 400;
      res.set_content("{\"error\":\"body must carry a non-empty classes array\"}",
                      "application/json");
      return;
    }
    std::lock_guard<std::mutex> lk(mu_);
    const std::string id = "t" + std::to_string(++task_counter_);
    Task t;
    t.id = id;
    t.classes = j["classes"].get<std::vector<std::string>>();
    t.seed = j.value("seed", cfg_.seed);
    tasks_[id] = std::move(t);
    queue_.push_back(id);
    queue_cv_.notify_one();
    res.set_content(nlohmann::json{{"task_id", id}}.dump(), "application/json");
  }

  void handle_status(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lk(mu_);
    const auto it = tasks_.find(req.matches[1].str());
    if (it == tasks_.end()) {
      res.status = 404;
      res.set_content("{\"error\":\"unknown task id\"}", "application/json");
      return;
    }
    const Task& t = it->second;
    nlohmann::json j = {{"task_id", t.id},
                        {"status", t.status},
                        {"stage_seconds",
                         {{"download_images", t.download_s},
                          {"build_dataset", t.build_s},
                          {"train_model", t.train_s}}}};
    if (!t.error.empty()) j["error"] = t.error;
    if (t.status == "done") j["build_reports"] = t.build_reports;
    res.set_content(j.dump(), "application/json");
  }

  void handle_snapshot(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lk(mu_);
    const auto it = tasks_.find(req.matches[1].str());
    if (it == tasks_.end()) {
      res.status = 404;
      res.set_content("{\"error\":\"unknown task id\"}", "application/json");
      return;
    }
    const Task& t = it->second;
    if (t.status != "done") {
      res.status = 409;
      res.set_content("{\"error\":\"task is not done\"}", "application/json");
      return;
    }
    std::string body(t.snapshot.begin(), t.snapshot.end());
    if (corrupt_mode_ != 0 && !body.empty()) {
      body[body.size() / 2] ^= 0x01;  // injected fault: one flipped byte
      if (corrupt_mode_ == 1) corrupt_mode_ = 0;
    }
    res.set_header("X-Snapshot-Sha256", t.hash);
    res.set_content(body, "application/octet-stream");
  }

  void worker_loop() {
    while (true) {
      std::string id;
      {
        std::unique_lock<std::mutex> lk(mu_);
        queue_cv_.wait(lk, [this] { return stopped_ || !queue_.empty(); });
        if (stopped_ && queue_.empty()) return;
        id = queue_.front();
        queue_.pop_front();
      }
      run_task(id);
    }
  }

  void run_task(const std::string& id) {
    std::vector<std::string> classes;
    std::uint64_t seed = 0;
    {
      std::lock_guard<std::mutex> lk(mu_);
      Task& t = tasks_[id];
      t.status = "building";
      classes = t.classes;
      seed = t.seed;
    }
    try {
      ModelRegistry registry(cfg_.registry_dir);
      const auto current = registry.current();
      if (!current) throw std::runtime_error("trainer registry has no current model");
      PipelineConfig cfg = cfg_;
      cfg.seed = seed;
      const BuiltDataset built = pipeline_build_dataset(classes, cfg, *current);
      {
        std::lock_guard<std::mutex> lk(mu_);
        Task& t = tasks_[id];
        t.status = "training";
        t.download_s = built.download_s;
        t.build_s = built.build_s;
      }
      const TrainedIncrement trained = pipeline_train(*current, built, cfg);
      std::vector<std::uint8_t> bytes = trained.model.serialize();
      std::string hash = sha256_hex(bytes);
      registry.put(bytes);  // server keeps its own copy
      registry.set_current(hash);
      nlohmann::json reports = nlohmann::json::array();
      for (const BuildReport& r : built.per_class) reports.push_back(r.to_json());
      std::lock_guard<std::mutex> lk(mu_);
      Task& t = tasks_[id];
      t.snapshot = std::move(bytes);
      t.hash = std::move(hash);
      t.train_s = trained.train_s;
      t.build_reports = std::move(reports);
      t.status = "done";
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lk(mu_);
      Task& t = tasks_[id];
      t.status = "failed";
      t.error = e.what();
    }
  }

  PipelineConfig cfg_;
  httplib::Server server_;
  std::thread http_thread_;
  std::thread worker_thread_;
  std::atomic<bool> stopped_{false};
  std::mutex mu_;
  std::condition_variable queue_cv_;
  std::deque<std::string> queue_;
  std::map<std::string, Task> tasks_;
  int task_counter_ = 0;
  int port_ = 0;
  int corrupt_mode_ = 0;  // 0 off, 1 once, 2 always
};

/// Client side of the trainer protocol.
class TrainerClient {
 public:
  explicit TrainerClient(const std::string& endpoint) : client_(endpoint.c_str()) {
    client_.set_read_timeout(600, 0);
  }

  std::string submit(const std::vector<std::string>& classes, std::uint64_t seed) {
    const nlohmann::json body = {{"classes", classes}, {"seed", seed}};
    const auto res = client_.Post("/tasks", body.dump(), "application/json");
    if (!res || res->status != 200)
      throw std::runtime_error("trainer submit failed: " + status_of(res));
    return nlohmann::json::parse(res->body).at("task_id").get<std::string>();
  }

  struct Status {
    std::string status;
    std::string error;
    double download_s = 0.0, build_s = 0.0, train_s = 0.0;
    std::vector<BuildReport> build_reports;
  };

  Status poll(const std::string& task_id) {
    const auto res = client_.Get(("/tasks/" + task_id).c_str());
    if (!res || res->status != 200)
      throw std::runtime_error("trainer poll failed: " + status_of(res));
    const nlohmann::json j = nlohmann::json::parse(res->body);
    Status s;
    s.status = j.at("status").get<std::string>();
    s.error = j.value("error", std::string());
    const auto& st = j.at("stage_seconds");
    s.download_s = st.value("download_images", 0.0);
    s.build_s = st.value("build_dataset", 0.0);
    s.train_s = st.value("train_model", 0.0);
    if (j.contains("build_reports"))
      for (const auto& r : j["build_reports"]) s.build_reports.push_back(BuildReport::from_json(r));
    return s;
  }

  /// Fetches and hash-verifies the snapshot. On a hash mismatch the fetch is
  /// retried once; a second mismatch fails the task.
  std::vector<std::uint8_t> fetch_snapshot(const std::string& task_id) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const auto res = client_.Get(("/tasks/" + task_id + "/snapshot").c_str());
      if (!res || res->status != 200)
        throw std::runtime_error("trainer fetch failed: " + status_of(res));
      const std::string expected = res->get_header_value("X-Snapshot-Sha256");
      const std::string actual = sha256_hex(res->body);
      if (actual == expected)
        return std::vector<std::uint8_t>(res->body.begin(), res->body.end());
    }
    throw std::runtime_error("trainer fetch: content hash mismatch after retry");
  }

 private:
  static std::string status_of(const httplib::Result& res) {
    return res ? ("http " + std::to_string(res->status)) : "no response";
  }
  httplib::Client client_;
};

/// Full learning task in either topology. Edge-cloud submits to the trainer
/// service, polls, then transfers the snapshot back; edge-only runs
/// everything in-process. Approval must already be recorded by the caller.
inline LearnResult run_learning_task(const std::vector<std::string>& classes,
                                     const PipelineConfig& cfg, bool approved) {
  if (!approved) throw std::runtime_error("learning task requires recorded user approval");
  if (classes.empty()) throw std::invalid_argument("learning task: no classes given");
  if (cfg.mode == PipelineMode::edge_only) return run_learning_task_local(classes, cfg);

  if (cfg.trainer_endpoint.empty())
    throw std::invalid_argument("edge_cloud mode requires trainer_endpoint");
  using clock = std::chrono::steady_clock;
  ModelRegistry registry(cfg.registry_dir);
  if (!registry.current())
    throw std::runtime_error("pipeline: registry has no current model; train a base model first");

  LearnResult out;
  out.task_dir = allocate_task_dir(cfg);
  const auto t0 = clock::now();
  TrainerClient client(cfg.trainer_endpoint);
  const std::string task_id = client.submit(classes, cfg.seed);
  TrainerClient::Status st;
  while (true) {
    st = client.poll(task_id);
    if (st.status == "done" || st.status == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
  }
  if (st.status == "failed")
    throw std::runtime_error("remote learning task failed: " + st.error);

  const auto t1 = clock::now();
  const std::vector<std::uint8_t> bytes = client.fetch_snapshot(task_id);
  const double transfer_s = std::chrono::duration<double>(clock::now() - t1).count();

  const std::string hash = registry.put(bytes);
  registry.set_current(hash);
  out.snapshot_hash = hash;
  out.timing.download_images_s = st.download_s;
  out.timing.build_dataset_s = st.build_s;
  out.timing.train_model_s = st.train_s;
  out.timing.transfer_model_s = transfer_s;
  out.timing.transfer_applicable = true;
  out.timing.total_s = std::chrono::duration<double>(clock::now() - t0).count();

  if (!cfg.eval.manifests.empty()) {
    const DetectorModel model = DetectorModel::deserialize(bytes);
    DatasetManifest merged;
    for (const std::string& mp : cfg.eval.manifests) {
      DatasetManifest m = load_manifest(mp);
      merged.classes.insert(merged.classes.end(), m.classes.begin(), m.classes.end());
      for (ManifestImage& im : m.images) {
        const std::string base = cfg.eval.root.empty()
                                     ? std::filesystem::path(mp).parent_path().string()
                                     : cfg.eval.root;
        im.path = resolve_path(base, im.path);
        merged.images.push_back(im);
      }
    }
    const int old_count = static_cast<int>(model.labels.size()) - static_cast<int>(classes.size());
    out.eval = evaluate_model(model, merged, "", cfg.eval.score_thr, cfg.eval.nms_thr, old_count,
                              "learn");
  }
  return out;
}

}  // namespace incdet
