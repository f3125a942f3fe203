#pragma once

// Annotation and orchestration service. Runs live under
// <data_dir>/runs/<id>/ as config.json, an append-only events.jsonl and a
// snapshot.json checkpoint; a run restarts from snapshot + event tail.
// Training happens on one background worker; the HTTP handlers only read
// state or apply cheap label/bookkeeping events.

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include "anneal/runlog.hpp"
#include "httplib.h"

namespace anneal {

namespace fs = std::filesystem;

class NotFound : public Error {
 public:
  using Error::Error;
};

class Forbidden : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Persistence

class RunStore {
 public:
  explicit RunStore(fs::path data_dir) : root_(std::move(data_dir)) { fs::create_directories(root_ / "runs"); }

  fs::path dir(const std::string& id) const { return root_ / "runs" / id; }
  bool exists(const std::string& id) const { return fs::exists(dir(id) / "config.json"); }

  std::vector<std::string> list() const {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root_ / "runs"))
      if (e.is_directory() && fs::exists(e.path() / "config.json")) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  void write_config(const std::string& id, const json& cfg) const {
    fs::create_directories(dir(id));
    atomic_write(dir(id) / "config.json", cfg.dump(1) + "\n");
  }

  json read_config(const std::string& id) const { return parse_file(dir(id) / "config.json"); }

  void append_events(const std::string& id, std::span<const json> events) const {
    if (events.empty()) return;
    std::string text;
    for (const auto& e : events) text += e.dump() + "\n";
    const auto path = dir(id) / "events.jsonl";
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw IoError("cannot open '" + path.string() + "'");
    const char* p = text.data();
    std::size_t left = text.size();
    while (left > 0) {
      const auto n = ::write(fd, p, left);
      if (n <= 0) {
        ::close(fd);
        throw IoError("write to '" + path.string() + "' failed");
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }

  std::vector<json> read_events(const std::string& id) const {
    std::vector<json> out;
    const auto path = dir(id) / "events.jsonl";
    if (!fs::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error&) {
        throw FormatError("corrupt event log '" + path.string() + "' at line " + std::to_string(n));
      }
    }
    return out;
  }

  void write_snapshot(const std::string& id, const std::string& text) const {
    atomic_write(dir(id) / "snapshot.json", text);
  }

  std::optional<json> read_snapshot(const std::string& id) const {
    const auto path = dir(id) / "snapshot.json";
    if (!fs::exists(path)) return std::nullopt;
    return parse_file(path);
  }

 private:
  static void atomic_write(const fs::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
      if (!out) throw IoError("cannot write '" + tmp + "'");
      out << text;
      out.flush();
      if (!out) throw IoError("cannot write '" + tmp + "'");
    }
    const int fd = ::open(tmp.c_str(), O_RDONLY);
    if (fd >= 0) {
      ::fsync(fd);
      ::close(fd);
    }
    fs::rename(tmp, path);
  }

  static json parse_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw FormatError("corrupt file '" + path.string() + "': " + e.what());
    }
  }

  fs::path root_;
};

// ---------------------------------------------------------------------------
// Service

struct RunSpec {
  LoopConfig loop;
  std::uint64_t seed = 0;
  OracleMode oracle = OracleMode::human;
  bool auto_advance = true;
};

inline json run_spec_to_json(const RunSpec& s) {
  return json{{"schema_version", kConfigSchemaVersion},
              {"config", loop_config_to_json(s.loop)},
              {"seed", s.seed},
              {"oracle", std::string(to_string(s.oracle))},
              {"auto_advance", s.auto_advance}};
}

inline RunSpec run_spec_from_json(const json& j) {
  detail::check_keys(j, {"schema_version", "config", "seed", "oracle", "auto_advance", "id"}, "run request");
  RunSpec s;
  int version = kConfigSchemaVersion;
  detail::read(j, "schema_version", version, "run request");
  if (version != kConfigSchemaVersion) throw ConfigError("unsupported schema_version " + std::to_string(version));
  s.loop = loop_config_from_json(j.contains("config") ? j["config"] : json::object());
  detail::read(j, "seed", s.seed, "run request");
  if (j.contains("oracle")) {
    std::string o;
    detail::read(j, "oracle", o, "run request");
    s.oracle = parse_oracle_mode(o);
  }
  detail::read(j, "auto_advance", s.auto_advance, "run request");
  if (s.loop.strategy == Strategy::cal) throw ConfigError("the classification baseline cannot be served");
  return s;
}

inline std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

class Service {
 public:
  /// `image_root` resolves relative image URIs (normally the manifest directory).
  Service(Dataset ds, fs::path data_dir, fs::path image_root = {})
      : ds_(std::move(ds)), store_(std::move(data_dir)), image_root_(std::move(image_root)) {
    for (const auto& id : store_.list()) load_run(id);
    worker_ = std::thread([this] { work(); });
    for (auto& [id, slot] : runs_) resume(id, *slot);
  }

  ~Service() {
    stop();
    {
      std::lock_guard lk(qm_);
      quit_ = true;
    }
    qcv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const Dataset& dataset() const { return ds_; }

  // --- operations (HTTP handlers are thin wrappers) -----------------------

  json list_runs() {
    json out = json::array();
    std::lock_guard lk(runs_m_);
    for (auto& [id, slot] : runs_) {
      std::lock_guard sl(slot->m);
      out.push_back(summary(id, *slot));
    }
    return json{{"runs", out}};
  }

  json create_run(const json& body) {
    const RunSpec spec = run_spec_from_json(body);
    std::string id;
    if (body.contains("id")) {
      id = body["id"].get<std::string>();
      if (!std::regex_match(id, std::regex("[A-Za-z0-9_-]{1,64}"))) throw ConfigError("run id must match [A-Za-z0-9_-]{1,64}");
    }
    std::lock_guard lk(runs_m_);
    if (id.empty()) {
      for (int n = static_cast<int>(runs_.size()) + 1;; ++n) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "run-%04d", n);
        if (!runs_.contains(buf)) {
          id = buf;
          break;
        }
      }
    }
    if (runs_.contains(id)) throw StateError("run '" + id + "' already exists");
    auto slot = std::make_unique<Slot>();
    slot->run = std::make_unique<ALRun>(ALRun::create(ds_, spec.loop, spec.seed, spec.oracle));
    slot->auto_advance = spec.auto_advance;
    store_.write_config(id, run_spec_to_json(spec));
    persist(id, *slot, true);
    auto& ref = *slot;
    runs_[id] = std::move(slot);
    std::lock_guard sl(ref.m);
    schedule(id, ref);
    return summary(id, ref);
  }

  json state(const std::string& id) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    auto j = summary(id, slot);
    const auto& st = slot.run->state();
    j["training_size"] = st.training_set.size();
    j["pool_size"] = st.pool.size();
    j["seed"] = st.seed;
    j["config"] = loop_config_to_json(slot.run->config());
    return j;
  }

  json batch(const std::string& id) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    const auto& run = *slot.run;
    json pairs = json::array();
    for (const auto& p : run.unlabeled_pending()) {
      json e{{"lo", ds_.item(p.key.lo).id}, {"hi", ds_.item(p.key.hi).id}, {"value", p.value}, {"score", p.score},
             {"cluster", p.cluster}};
      e["lo_image"] = image_url(p.key.lo);
      e["hi_image"] = image_url(p.key.hi);
      pairs.push_back(std::move(e));
    }
    const std::size_t h = run.pending() ? run.pending()->batch.pairs.size() : 0;
    return json{{"id", id},
                {"status", std::string(to_string(slot.status))},
                {"iteration", run.state().iteration},
                {"iterations", run.config().iterations},
                {"batch_size", h},
                {"labeled", run.pending_labels().size()},
                {"remaining", pairs.size()},
                {"bits_spent", run.state().bits_spent},
                {"pairs", pairs}};
  }

  json open_session(const std::string& id) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    static thread_local std::mt19937_64 gen(std::random_device{}());
    char buf[40];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(gen()),
                  static_cast<unsigned long long>(gen()));
    slot.token = buf;
    return json{{"id", id}, {"token", slot.token}};
  }

  json post_labels(const std::string& id, const json& body) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    if (slot.token.empty() || body.value("token", std::string()) != slot.token)
      throw Forbidden("a valid session token is required; open one with POST /runs/" + id + "/session");
    if (slot.status != RunStatus::awaiting_labels) throw StateError("run is " + std::string(to_string(slot.status)));
    if (!body.contains("labels") || !body["labels"].is_array()) throw ConfigError("body needs a 'labels' array");
    // Validate everything before recording anything.
    std::vector<std::pair<PairKey, Label>> parsed;
    for (const auto& l : body["labels"]) {
      const auto lo = ds_.find(l.at("lo").get<std::string>()), hi = ds_.find(l.at("hi").get<std::string>());
      if (!lo || !hi) throw NotFound("unknown item id in label");
      parsed.emplace_back(PairKey(*lo, *hi), parse_label(l.at("label").get<std::string>()));
    }
    json results = json::array();
    for (const auto& [k, l] : parsed) {
      const auto ack = slot.run->label(k, l);
      results.push_back(json{{"lo", ds_.item(k.lo).id},
                             {"hi", ds_.item(k.hi).id},
                             {"label", std::string(to_string(ack.label))},
                             {"recorded", ack.recorded}});
    }
    persist(id, slot, false);
    if (slot.run->batch_complete() && slot.auto_advance) advance_locked(id, slot);
    return json{{"results", results},
                {"remaining", slot.run->unlabeled_pending().size()},
                {"status", std::string(to_string(slot.status))}};
  }

  json advance(const std::string& id) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    if (slot.status == RunStatus::training) throw StateError("run is training");
    if (slot.status == RunStatus::done) throw StateError("run is done");
    if (slot.run->pending() && !slot.run->batch_complete())
      throw StateError(std::to_string(slot.run->unlabeled_pending().size()) + " pairs still need labels");
    advance_locked(id, slot);
    return summary(id, slot);
  }

  json metrics(const std::string& id) {
    auto& slot = get(id);
    std::lock_guard sl(slot.m);
    json points = json::array();
    for (const auto& r : slot.run->state().history) {
      points.push_back(json{{"iteration", r.iteration},
                            {"bits", r.bits},
                            {"map", detail::opt_json(r.map)},
                            {"alpha", r.threshold ? json(r.threshold->alpha) : json(nullptr)},
                            {"batch_size", r.batch.pairs.size()},
                            {"transitive_count", r.transitive_count},
                            {"conflicts", r.conflicts}});
    }
    return json{{"id", id},
                {"strategy", std::string(to_string(slot.run->config().strategy))},
                {"eval_k", slot.run->config().eval_k},
                {"points", points}};
  }

  /// Resolved local path of an item's image.
  fs::path image_path(const std::string& item_id) const {
    const auto idx = ds_.find(item_id);
    if (!idx) throw NotFound("unknown item '" + item_id + "'");
    const auto& uri = ds_.item(*idx).image_uri;
    if (!uri) throw NotFound("item '" + item_id + "' has no image");
    std::string p = *uri;
    if (p.rfind("file://", 0) == 0) p = p.substr(7);
    fs::path path(p);
    if (path.is_relative()) path = image_root_ / path;
    if (!fs::is_regular_file(path)) throw NotFound("image file for '" + item_id + "' is missing");
    return path;
  }

  /// Blocks until the worker has nothing queued or running.
  void wait_idle() {
    std::unique_lock lk(qm_);
    idle_cv_.wait(lk, [&] { return queue_.empty() && !busy_; });
  }

  // --- HTTP ---------------------------------------------------------------

  /// Binds and serves until stop(); returns false if the port cannot be bound.
  bool listen(const std::string& host, int port) {
    setup_routes();
    return server_.listen(host, port);
  }

  int bind_any_port(const std::string& host) {
    setup_routes();
    return server_.bind_to_any_port(host);
  }

  bool listen_after_bind() { return server_.listen_after_bind(); }

  void stop() {
    if (server_.is_running()) server_.stop();
  }

 private:
  struct Slot {
    std::mutex m;
    std::unique_ptr<ALRun> run;
    RunStatus status = RunStatus::idle;
    bool auto_advance = true;
    std::string token;
    std::string error;
    std::size_t persisted = 0;  // entries of run->events() already on disk
  };

  Slot& get(const std::string& id) {
    std::lock_guard lk(runs_m_);
    auto it = runs_.find(id);
    if (it == runs_.end()) throw NotFound("unknown run '" + id + "'");
    return *it->second;
  }

  json summary(const std::string& id, const Slot& slot) const {
    const auto& run = *slot.run;
    json j{{"id", id},
           {"status", std::string(to_string(slot.status))},
           {"strategy", std::string(to_string(run.config().strategy))},
           {"oracle", std::string(to_string(run.oracle_mode()))},
           {"iteration", run.state().iteration},
           {"iterations", run.config().iterations},
           {"bits_spent", run.state().bits_spent},
           {"pending", run.unlabeled_pending().size()},
           {"batch_complete", run.batch_complete()}};
    if (!slot.error.empty()) j["error"] = slot.error;
    return j;
  }

  std::string image_url(ItemIndex i) const {
    if (!ds_.item(i).image_uri) return {};
    return "/items/" + url_encode(ds_.item(i).id) + "/image";
  }

  /// Writes unsaved events; snapshots at iteration boundaries.
  void persist(const std::string& id, Slot& slot, bool snapshot) {
    const auto& ev = slot.run->events();
    store_.append_events(id, std::span<const json>(ev).subspan(slot.persisted));
    slot.persisted = ev.size();
    if (snapshot) store_.write_snapshot(id, slot.run->checkpoint_text());
  }

  void load_run(const std::string& id) {
    const auto cfg_path = store_.dir(id) / "config.json";
    RunSpec spec;
    try {
      spec = run_spec_from_json(store_.read_config(id));
    } catch (const Error& e) {
      throw FormatError("cannot load run config '" + cfg_path.string() + "': " + e.what());
    }
    auto events = store_.read_events(id);
    auto slot = std::make_unique<Slot>();
    slot->auto_advance = spec.auto_advance;
    const auto snap_path = store_.dir(id) / "snapshot.json";
    try {
      if (auto snap = store_.read_snapshot(id)) {
        const auto from = snap->at("events").get<std::size_t>();
        if (from > events.size()) throw FormatError("snapshot is ahead of the event log");
        slot->run = std::make_unique<ALRun>(
            ALRun::restore(ds_, *snap, std::span<const json>(events).subspan(from)));
      } else {
        slot->run = std::make_unique<ALRun>(ALRun::replay(ds_, events));
      }
    } catch (const std::exception& e) {
      throw FormatError("corrupt checkpoint '" + snap_path.string() + "': " + e.what());
    }
    slot->persisted = slot->run->events().size();
    runs_[id] = std::move(slot);
  }

  /// Picks the status of a loaded run and queues any work it was doing.
  void resume(const std::string& id, Slot& slot) {
    std::lock_guard sl(slot.m);
    if (slot.run->finished()) {
      slot.status = RunStatus::done;
    } else if (slot.run->pending()) {
      slot.status = RunStatus::awaiting_labels;
      if (slot.run->batch_complete() && slot.auto_advance) advance_locked(id, slot);
    } else {
      schedule(id, slot);
    }
  }

  void advance_locked(const std::string& id, Slot& slot) {
    if (slot.run->pending()) {
      slot.run->apply();
      persist(id, slot, true);
    }
    schedule(id, slot);
  }

  void schedule(const std::string& id, Slot& slot) {
    slot.status = RunStatus::training;
    {
      std::lock_guard lk(qm_);
      queue_.push_back(id);
    }
    qcv_.notify_one();
  }

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lk(qm_);
        qcv_.wait(lk, [&] { return quit_ || !queue_.empty(); });
        if (quit_) return;
        id = queue_.front();
        queue_.pop_front();
        busy_ = true;
      }
      try {
        process(id);
      } catch (const std::exception& e) {
        auto& slot = get(id);
        std::lock_guard sl(slot.m);
        slot.error = e.what();
        slot.status = slot.run->pending() ? RunStatus::awaiting_labels : RunStatus::idle;
      }
      {
        std::lock_guard lk(qm_);
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  /// Trains for the next proposal (or the final point). Simulated runs keep
  /// going until they finish.
  void process(const std::string& id) {
    auto& slot = get(id);
    for (;;) {
      std::unique_ptr<ALRun> snapshot;
      {
        std::lock_guard sl(slot.m);
        if (slot.run->finished()) {
          slot.status = RunStatus::done;
          return;
        }
        snapshot = std::make_unique<ALRun>(*slot.run);
      }
      // Training runs on a private copy; the live run only changes under the lock.
      const bool final = !snapshot->rounds_left();
      const auto rec = final ? snapshot->compute_final() : snapshot->compute_proposal();
      std::lock_guard sl(slot.m);
      if (final) {
        slot.run->accept_final(rec);
        persist(id, slot, true);
        slot.status = RunStatus::done;
        return;
      }
      slot.run->accept_proposal(rec);
      slot.error.clear();
      if (slot.run->oracle_mode() == OracleMode::human) {
        persist(id, slot, true);
        slot.status = RunStatus::awaiting_labels;
        return;
      }
      const SimulatedOracle oracle(ds_);
      for (const auto& p : slot.run->unlabeled_pending()) slot.run->label(p.key, oracle.label(p.key));
      slot.run->apply();
      persist(id, slot, true);
    }
  }

  static int http_status(const std::exception& e) {
    if (dynamic_cast<const NotFound*>(&e)) return 404;
    if (dynamic_cast<const Forbidden*>(&e)) return 403;
    if (dynamic_cast<const StateError*>(&e)) return 409;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const json::exception*>(&e) || dynamic_cast<const Error*>(&e))
      return 400;
    return 500;
  }

  template <class F>
  static void respond(httplib::Response& res, int ok_status, F&& f) {
    try {
      const json body = f();
      res.status = ok_status;
      res.set_content(body.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = http_status(e);
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("request body is not JSON: ") + e.what());
    }
  }

  void setup_routes() {
    if (routes_ready_) return;
    routes_ready_ = true;
    // SO_REUSEADDR only: a second server on a busy port must fail to bind.
    server_.set_socket_options([](auto sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    const std::string rid = "/runs/([A-Za-z0-9_-]+)";
    server_.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, 200, [&] { return list_runs(); });
    });
    server_.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 201, [&] { return create_run(parse_body(req)); });
    });
    server_.Get(rid + "/state", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return state(req.matches[1]); });
    });
    server_.Get(rid + "/batch", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return batch(req.matches[1]); });
    });
    server_.Post(rid + "/session", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return open_session(req.matches[1]); });
    });
    server_.Post(rid + "/labels", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return post_labels(req.matches[1], parse_body(req)); });
    });
    server_.Post(rid + "/advance", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return advance(req.matches[1]); });
    });
    server_.Get(rid + "/metrics", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, 200, [&] { return metrics(req.matches[1]); });
    });
    server_.Get("/items/([^/]+)/image", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto path = image_path(httplib::detail::decode_url(req.matches[1], false));
        std::ifstream in(path, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        res.set_content(ss.str(), content_type(path));
      } catch (const std::exception& e) {
        res.status = http_status(e);
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  static std::string content_type(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".tif" || ext == ".tiff") return "image/tiff";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "application/octet-stream";
  }

  Dataset ds_;
  RunStore store_;
  fs::path image_root_;
  std::mutex runs_m_;
  std::map<std::string, std::unique_ptr<Slot>> runs_;

  std::mutex qm_;
  std::condition_variable qcv_, idle_cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool quit_ = false;
  std::thread worker_;

  httplib::Server server_;
  bool routes_ready_ = false;
};

}  // namespace anneal
