#include "shadowsteer/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <regex>
#include <sstream>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/log.hpp"

namespace shadowsteer::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Reply error_reply(int status, const std::string& message) {
  Reply r;
  r.status = status;
  r.body = {{"error", {{"status", status}, {"message", message}}}};
  return r;
}

Reply json_reply(json body, int status = 200) {
  Reply r;
  r.status = status;
  r.body = std::move(body);
  return r;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw HttpError(422, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError(422, std::string("request body is not valid JSON: ") + e.what());
  }
}

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
    if (!out) throw IoError("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

std::uint64_t id_number(const std::string& id) {
  if (id.size() < 2) return 0;
  try {
    return std::stoull(id.substr(1));
  } catch (const std::exception&) {
    return 0;
  }
}

json request_json(const RunRequest& r) {
  return {{"label", r.label},
          {"seed", r.seed},
          {"control", to_json(r.control)},
          {"guidance", to_json(r.guidance)},
          {"sampler", to_json(r.sampler)}};
}

Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.label = j.at("label").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("control") && !j["control"].is_null()) s.control = shadow_control_from_json(j["control"]);
  s.guidance = j.value("guidance", json::object());
  s.created_at = j.value("created_at", "");
  s.updated_at = j.value("updated_at", "");
  return s;
}

Job job_from_json(const json& j) {
  Job job;
  job.id = j.at("id").get<std::string>();
  job.session_id = j.at("session_id").get<std::string>();
  job.state = job_state_from_string(j.at("state").get<std::string>());
  job.step = j.at("progress").at("step").get<int>();
  job.total = j.at("progress").at("total").get<int>();
  if (j.contains("error") && j["error"].is_string()) job.error = j["error"].get<std::string>();
  job.created_at = j.value("created_at", "");
  job.updated_at = j.value("updated_at", "");
  job.request = run_request_from_json(j.at("request"));
  return job;
}

const std::regex kSafeName("^[A-Za-z0-9_][A-Za-z0-9_.-]*$");

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw InputError(std::string(name) + " must be an integer, got '" + v + "'");
  }
}

}  // namespace

Options options_from_env(Options base) {
  auto path_env = [](const char* name, fs::path& target) {
    if (const char* v = std::getenv(name); v && *v) target = v;
  };
  path_env("SD_DIRECTOR_DIFFUSION_CKPT", base.diffusion_checkpoint);
  path_env("SD_DIRECTOR_SD_CKPT", base.sd_checkpoint);
  path_env("SD_DIRECTOR_ID_CKPT", base.id_checkpoint);
  path_env("SD_DIRECTOR_RUN_STORE", base.run_store);
  if (const char* v = std::getenv("SD_DIRECTOR_HOST"); v && *v) base.host = v;
  base.port = env_int("SD_DIRECTOR_PORT", base.port);
  base.pool_size = env_int("SD_DIRECTOR_POOL_SIZE", base.pool_size);
  base.queue_limit = env_int("SD_DIRECTOR_QUEUE_LIMIT", base.queue_limit);
  return base;
}

std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

JobState job_state_from_string(const std::string& s) {
  if (s == "queued") return JobState::queued;
  if (s == "running") return JobState::running;
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  throw InputError("unknown job state '" + s + "'");
}

bool legal_transition(JobState from, JobState to) {
  switch (from) {
    case JobState::queued: return to == JobState::running || to == JobState::failed;
    case JobState::running: return to == JobState::done || to == JobState::failed;
    default: return false;
  }
}

json to_json(const Session& s) {
  return {{"id", s.id},
          {"label", s.label},
          {"seed", s.seed},
          {"control", s.control ? to_json(*s.control) : json(nullptr)},
          {"guidance", s.guidance},
          {"created_at", s.created_at},
          {"updated_at", s.updated_at}};
}

json to_json(const Job& j) {
  json out = {{"id", j.id},
              {"session_id", j.session_id},
              {"state", to_string(j.state)},
              {"progress", {{"step", j.step}, {"total", j.total}}},
              {"created_at", j.created_at},
              {"updated_at", j.updated_at},
              {"request", request_json(j.request)}};
  out["error"] = j.error.empty() ? json(nullptr) : json(j.error);
  return out;
}

Service::Service(Options options) : options_(std::move(options)) {
  if (options_.pool_size < 1) throw InputError("pool size must be at least 1");
  if (options_.queue_limit < 0) throw InputError("queue limit must be non-negative");
  validate(options_.sampler);
  if (options_.diffusion_checkpoint.empty()) throw InputError("a diffusion checkpoint is required");
  backend_ = DiffusionModel::load(options_.diffusion_checkpoint);
  const bool have_sd = !options_.sd_checkpoint.empty();
  const bool have_id = !options_.id_checkpoint.empty();
  if (have_sd != have_id) throw InputError("give both estimator checkpoints or neither");
  if (have_sd) {
    guide_sd_ = std::make_unique<SDEstimator>(load_sd_estimator(options_.sd_checkpoint, *backend_));
    guide_id_ = std::make_unique<IDEstimator>(load_id_estimator(options_.id_checkpoint, *backend_));
  } else {
    log::warn("no estimator checkpoints; jobs will be refused until the service restarts with them");
  }
  recover();
  for (int i = 0; i < options_.pool_size; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(mu_);
    shutting_down_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

fs::path Service::run_dir(const std::string& job_id) const { return options_.run_store / "runs" / job_id; }

std::string Service::next_id(char prefix) { return prefix + std::to_string(++counter_); }

void Service::persist(const Session& s) {
  write_atomic(options_.run_store / "sessions" / (s.id + ".json"), to_json(s).dump(2));
}

void Service::persist(const Job& j) { write_atomic(options_.run_store / "jobs" / (j.id + ".json"), to_json(j).dump(2)); }

void Service::transition(Job& job, JobState to) {
  if (!legal_transition(job.state, to)) {
    throw std::logic_error("illegal job transition " + to_string(job.state) + " -> " + to_string(to));
  }
  job.state = to;
  job.updated_at = now_iso();
  persist(job);
}

void Service::recover() {
  fs::create_directories(options_.run_store / "sessions");
  fs::create_directories(options_.run_store / "jobs");
  fs::create_directories(options_.run_store / "runs");
  for (const auto& e : fs::directory_iterator(options_.run_store / "sessions")) {
    if (e.path().extension() != ".json") continue;
    try {
      auto s = session_from_json(json::parse(read_file(e.path())));
      counter_ = std::max(counter_, id_number(s.id));
      sessions_[s.id] = std::move(s);
    } catch (const std::exception& ex) {
      log::warn("skipping unreadable session record {}: {}", e.path().string(), ex.what());
    }
  }
  for (const auto& e : fs::directory_iterator(options_.run_store / "jobs")) {
    if (e.path().extension() != ".json") continue;
    try {
      auto j = job_from_json(json::parse(read_file(e.path())));
      counter_ = std::max(counter_, id_number(j.id));
      if (j.state == JobState::queued || j.state == JobState::running) {
        j.error = "interrupted by service restart";
        transition(j, JobState::failed);
      }
      jobs_[j.id] = std::move(j);
    } catch (const std::exception& ex) {
      log::warn("skipping unreadable job record {}: {}", e.path().string(), ex.what());
    }
  }
  if (!sessions_.empty() || !jobs_.empty()) {
    log::info("recovered {} sessions and {} jobs from {}", sessions_.size(), jobs_.size(), options_.run_store.string());
  }
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return shutting_down_ || !queue_.empty(); });
      if (shutting_down_) return;
      id = queue_.front();
      queue_.pop_front();
      auto& job = jobs_.at(id);
      transition(job, JobState::running);
      ++running_;
    }
    run_job(id);
    std::lock_guard lock(mu_);
    --running_;
  }
}

void Service::run_job(const std::string& id) {
  RunRequest req;
  {
    std::lock_guard lock(mu_);
    req = jobs_.at(id).request;
  }
  try {
    ShadowGuide guide(backend_, *guide_sd_, *guide_id_, req.sampler);
    auto progress = [this, &id](int step, int total) {
      std::lock_guard lock(mu_);
      auto& job = jobs_.at(id);
      job.step = std::max(job.step, step);
      job.total = total;
    };
    const auto result = guide.generate_with_control(req.label, req.seed, req.control, req.guidance, progress);
    const auto dir = run_dir(id);
    const auto staging = dir.string() + ".partial";
    fs::remove_all(staging);
    write_run(result, staging);
    fs::remove_all(dir);
    fs::rename(staging, dir);
    std::lock_guard lock(mu_);
    auto& job = jobs_.at(id);
    job.step = job.total;
    transition(job, JobState::done);
  } catch (const std::exception& e) {
    log::error(std::string("job ") + id + " failed: " + e.what());
    std::lock_guard lock(mu_);
    auto& job = jobs_.at(id);
    job.error = e.what();
    transition(job, JobState::failed);
  }
}

Reply Service::healthz() {
  std::lock_guard lock(mu_);
  return json_reply({{"status", "ok"},
                     {"estimators_loaded", estimators_loaded()},
                     {"backbone_hash", backend_->weights_hash()},
                     {"image_size", backend_->image_size()},
                     {"num_labels", backend_->num_labels()},
                     {"pool_size", options_.pool_size},
                     {"queue_limit", options_.queue_limit},
                     {"queued", queue_.size()},
                     {"running", running_}});
}

Reply Service::schemas(const std::string& name) {
  if (name.empty()) return json_reply(schema_index());
  auto doc = schema_document(name);
  if (!doc) return error_reply(404, "no schema named '" + name + "'");
  return json_reply(*doc);
}

Reply Service::create_session(const std::string& body) {
  const auto j = parse_body(body);
  Session s;
  try {
    s.label = j.value("label", 0);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("control") && !j["control"].is_null()) {
      s.control = shadow_control_from_json(j["control"]);
      validate(*s.control, backend_->image_size());
    }
    if (j.contains("guidance")) {
      if (!j["guidance"].is_object()) throw InputError("guidance must be an object");
      s.guidance = j["guidance"];
      validate(guidance_config_from_json(s.guidance), options_.sampler);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed session: ") + e.what());
  }
  if (s.label < 0 || s.label >= backend_->num_labels()) {
    throw InputError("label must be in [0, " + std::to_string(backend_->num_labels()) + ")");
  }
  std::lock_guard lock(mu_);
  s.id = next_id('s');
  s.created_at = s.updated_at = now_iso();
  persist(s);
  sessions_[s.id] = s;
  return json_reply(to_json(s), 201);
}

Reply Service::get_session(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return error_reply(404, "no session '" + id + "'");
  return json_reply(to_json(it->second));
}

Reply Service::put_settings(const std::string& id, const std::string& body) {
  const auto j = parse_body(body);
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return error_reply(404, "no session '" + id + "'");
  Session s = it->second;
  try {
    if (j.contains("label")) s.label = j["label"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("guidance")) {
      if (!j["guidance"].is_object()) throw InputError("guidance must be an object");
      s.guidance = j["guidance"];
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed settings: ") + e.what());
  }
  if (s.label < 0 || s.label >= backend_->num_labels()) {
    throw InputError("label must be in [0, " + std::to_string(backend_->num_labels()) + ")");
  }
  validate(guidance_config_from_json(s.guidance), options_.sampler);
  s.updated_at = now_iso();
  persist(s);
  it->second = s;
  return json_reply(to_json(s));
}

Reply Service::get_control(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return error_reply(404, "no session '" + id + "'");
  if (!it->second.control) return error_reply(404, "session '" + id + "' has no control yet");
  return json_reply(to_json(*it->second.control));
}

Reply Service::put_control(const std::string& id, const std::string& body) {
  const auto j = parse_body(body);
  auto control = shadow_control_from_json(j);
  validate(control, backend_->image_size());
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return error_reply(404, "no session '" + id + "'");
  it->second.control = control;
  it->second.updated_at = now_iso();
  persist(it->second);
  return json_reply(to_json(control));
}

Reply Service::create_job(const std::string& session_id, const std::string& body) {
  const auto j = parse_body(body);
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return error_reply(404, "no session '" + session_id + "'");
  if (!estimators_loaded()) {
    return error_reply(409,
                       "estimators are not loaded; restart the service with SD_DIRECTOR_SD_CKPT and "
                       "SD_DIRECTOR_ID_CKPT pointing at trained checkpoints");
  }
  const auto& s = it->second;
  if (!s.control) return error_reply(409, "session '" + session_id + "' has no control; PUT one first");
  RunRequest req;
  req.label = s.label;
  req.seed = s.seed;
  req.control = *s.control;
  req.sampler = options_.sampler;
  json guidance = s.guidance;
  try {
    if (j.contains("seed")) req.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("label")) req.label = j["label"].get<int>();
    if (j.contains("strength")) req.control.strength = j["strength"].get<double>();
    if (j.contains("guidance")) guidance.merge_patch(j["guidance"]);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed job request: ") + e.what());
  }
  if (req.label < 0 || req.label >= backend_->num_labels()) {
    throw InputError("label must be in [0, " + std::to_string(backend_->num_labels()) + ")");
  }
  req.guidance = guidance_config_from_json(guidance);
  validate(req.control, backend_->image_size());
  validate(req.guidance, req.sampler);
  if (static_cast<int>(queue_.size()) + running_ >= options_.pool_size + options_.queue_limit) {
    return error_reply(503, "worker pool saturated (" + std::to_string(running_) + " running, " +
                                std::to_string(queue_.size()) + " waiting); retry later");
  }
  Job job;
  job.id = next_id('j');
  job.session_id = session_id;
  job.total = req.sampler.inference_steps;
  job.created_at = job.updated_at = now_iso();
  job.request = req;
  persist(job);
  jobs_[job.id] = job;
  queue_.push_back(job.id);
  cv_.notify_one();
  return json_reply(to_json(job), 202);
}

Reply Service::get_job(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_reply(404, "no job '" + id + "'");
  auto body = to_json(it->second);
  if (it->second.state == JobState::done) {
    body["result"] = {{"run_dir", run_dir(id).string()}, {"artifacts", "/jobs/" + id + "/artifacts"}};
  } else {
    body["result"] = nullptr;
  }
  return json_reply(body);
}

Reply Service::cancel_job(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_reply(404, "no job '" + id + "'");
  if (it->second.state != JobState::queued) {
    return error_reply(409, "only queued jobs can be cancelled; job is " + to_string(it->second.state));
  }
  queue_.erase(std::remove(queue_.begin(), queue_.end(), id), queue_.end());
  it->second.error = "cancelled";
  transition(it->second, JobState::failed);
  return json_reply(to_json(it->second));
}

Reply Service::list_artifacts(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_reply(404, "no job '" + id + "'");
  if (it->second.state != JobState::done) return error_reply(409, "job is " + to_string(it->second.state));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(run_dir(id))) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return json_reply({{"job", id}, {"artifacts", names}});
}

Reply Service::get_artifact(const std::string& id, const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_reply(404, "no job '" + id + "'");
  if (!std::regex_match(name, kSafeName)) return error_reply(404, "no artifact '" + name + "'");
  if (it->second.state != JobState::done) return error_reply(409, "job is " + to_string(it->second.state));
  const auto path = run_dir(id) / name;
  if (!fs::is_regular_file(path)) return error_reply(404, "no artifact '" + name + "'");
  Reply r;
  r.file = path;
  r.content_type = content_type_for(path);
  return r;
}

Reply Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex session_re("^/sessions/([^/]+)$");
  static const std::regex control_re("^/sessions/([^/]+)/control$");
  static const std::regex jobs_re("^/sessions/([^/]+)/jobs$");
  static const std::regex job_re("^/jobs/([^/]+)$");
  static const std::regex cancel_re("^/jobs/([^/]+)/cancel$");
  static const std::regex artifacts_re("^/jobs/([^/]+)/artifacts$");
  static const std::regex artifact_re("^/jobs/([^/]+)/artifacts/([^/]+)$");
  static const std::regex schema_re("^/schemas(?:/([^/]+))?$");
  std::smatch m;
  try {
    if (path == "/healthz") {
      if (method == "GET") return healthz();
    } else if (std::regex_match(path, m, schema_re)) {
      if (method == "GET") return schemas(m[1].str());
    } else if (path == "/sessions") {
      if (method == "POST") return create_session(body);
    } else if (std::regex_match(path, m, session_re)) {
      if (method == "GET") return get_session(m[1]);
      if (method == "PUT") return put_settings(m[1], body);
    } else if (std::regex_match(path, m, control_re)) {
      if (method == "GET") return get_control(m[1]);
      if (method == "PUT") return put_control(m[1], body);
    } else if (std::regex_match(path, m, jobs_re)) {
      if (method == "POST") return create_job(m[1], body);
    } else if (std::regex_match(path, m, job_re)) {
      if (method == "GET") return get_job(m[1]);
    } else if (std::regex_match(path, m, cancel_re)) {
      if (method == "POST") return cancel_job(m[1]);
    } else if (std::regex_match(path, m, artifacts_re)) {
      if (method == "GET") return list_artifacts(m[1]);
    } else if (std::regex_match(path, m, artifact_re)) {
      if (method == "GET") return get_artifact(m[1], m[2]);
    } else {
      return error_reply(404, "no route " + path);
    }
    return error_reply(405, method + " not allowed on " + path);
  } catch (const HttpError& e) {
    return error_reply(e.status, e.what());
  } catch (const InputError& e) {
    return error_reply(422, e.what());
  } catch (const PreconditionError& e) {
    return error_reply(422, e.what());
  } catch (const std::exception& e) {
    log::error(std::string("request failed: ") + e.what());
    return error_reply(500, e.what());
  }
}

void Service::register_routes(httplib::Server& server) {
  auto dispatch = [this](const std::string& method) {
    return [this, method](const httplib::Request& req, httplib::Response& res) {
      const Reply r = handle(method, req.path, req.body);
      res.status = r.status;
      if (r.file) {
        res.set_content(read_file(*r.file), r.content_type);
      } else {
        res.set_content(r.body.dump(), "application/json");
      }
    };
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Get(".*", dispatch("GET"));
  server.Post(".*", dispatch("POST"));
  server.Put(".*", dispatch("PUT"));
  server.Delete(".*", dispatch("DELETE"));
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

void Service::listen() {
  server_ = std::make_unique<httplib::Server>();
  register_routes(*server_);
  log::info("serving on {}:{}", options_.host, options_.port);
  if (!server_->listen(options_.host, options_.port)) {
    throw IoError("cannot listen on " + options_.host + ":" + std::to_string(options_.port));
  }
}

int Service::listen_background() {
  server_ = std::make_unique<httplib::Server>();
  register_routes(*server_);
  const int port = server_->bind_to_any_port(options_.host);
  if (port <= 0) throw IoError("cannot bind " + options_.host);
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

json schema_index() {
  return {{"version", 1},
          {"schemas", {"control", "session", "job", "run-config", "ablation-report", "error"}}};
}

std::optional<json> schema_document(const std::string& name) {
  const json num = {{"type", "number"}};
  const json integer = {{"type", "integer"}};
  const json str = {{"type", "string"}};
  json control = {
      {"$id", "shadowsteer/control"},
      {"version", 1},
      {"type", "object"},
      {"required", {"mode"}},
      {"properties",
       {{"mode", {{"enum", {"mask", "directional_light"}}}},
        {"mask", {{"type", {"string", "null"}}, {"contentEncoding", "base64"}, {"contentMediaType", "image/png"}}},
        {"darkness", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
        {"light", {{"type", {"array", "null"}}, {"items", num}, {"minItems", 3}, {"maxItems", 3}}},
        {"strength", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}}};
  json guidance = {{"type", "object"},
                   {"properties",
                    {{"intervention_step", integer},
                     {"lambda_shadow", num},
                     {"lambda_identity", num},
                     {"max_iterations", integer},
                     {"learning_rate", num},
                     {"divergence_factor", num},
                     {"identity_term", {{"enum", {"embedding", "input_l1", "output_l1"}}}}}}};
  if (name == "control") return control;
  if (name == "session") {
    return json{{"$id", "shadowsteer/session"},
                {"version", 1},
                {"type", "object"},
                {"required", {"id", "label", "seed", "control", "guidance"}},
                {"properties",
                 {{"id", str},
                  {"label", integer},
                  {"seed", integer},
                  {"control", {{"oneOf", {control, {{"type", "null"}}}}}},
                  {"guidance", guidance},
                  {"created_at", str},
                  {"updated_at", str}}}};
  }
  if (name == "job") {
    return json{{"$id", "shadowsteer/job"},
                {"version", 1},
                {"type", "object"},
                {"required", {"id", "session_id", "state", "progress"}},
                {"properties",
                 {{"id", str},
                  {"session_id", str},
                  {"state", {{"enum", {"queued", "running", "done", "failed"}}}},
                  {"progress",
                   {{"type", "object"}, {"properties", {{"step", integer}, {"total", integer}}}}},
                  {"error", {{"type", {"string", "null"}}}},
                  {"request", {{"type", "object"}}},
                  {"created_at", str},
                  {"updated_at", str}}}};
  }
  if (name == "run-config") {
    return json{{"$id", "shadowsteer/run-config"},
                {"version", 1},
                {"type", "object"},
                {"required", {"schema", "version", "label", "seed", "control", "guidance", "sampler"}},
                {"properties",
                 {{"schema", {{"const", "shadowsteer/run-config"}}},
                  {"version", integer},
                  {"label", integer},
                  {"seed", integer},
                  {"control", control},
                  {"guidance", guidance},
                  {"sampler", {{"type", "object"}}},
                  {"backbone_hash", str}}}};
  }
  if (name == "ablation-report") {
    return json{{"$id", "shadowsteer/ablation-report"},
                {"version", 1},
                {"type", "object"},
                {"required", {"schema", "version", "seeds", "labels", "control", "rows"}},
                {"properties",
                 {{"seeds", {{"type", "array"}, {"items", integer}}},
                  {"labels", {{"type", "array"}, {"items", integer}}},
                  {"rows",
                   {{"type", "array"},
                    {"items",
                     {{"type", "object"},
                      {"required", {"tag", "mean_shadow_compliance", "mean_toy_cvs", "mean_uncontrolled_deviation"}}}}}}}}};
  }
  if (name == "error") {
    return json{{"$id", "shadowsteer/error"},
                {"version", 1},
                {"type", "object"},
                {"required", {"error"}},
                {"properties",
                 {{"error",
                   {{"type", "object"}, {"properties", {{"status", integer}, {"message", str}}}}}}}};
  }
  return std::nullopt;
}

}  // namespace shadowsteer::service
