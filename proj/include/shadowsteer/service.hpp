#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/estimators.hpp"
#include "shadowsteer/guidance.hpp"

namespace httplib {
class Server;
}

namespace shadowsteer::service {

struct Options {
  std::filesystem::path diffusion_checkpoint;
  /// Both optional; without them the service answers but refuses jobs.
  std::filesystem::path sd_checkpoint;
  std::filesystem::path id_checkpoint;
  std::filesystem::path run_store = "runs";
  int pool_size = 1;
  /// Jobs allowed to wait beyond the ones running.
  int queue_limit = 16;
  SamplerConfig sampler;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Reads SD_DIRECTOR_DIFFUSION_CKPT, SD_DIRECTOR_SD_CKPT, SD_DIRECTOR_ID_CKPT,
/// SD_DIRECTOR_RUN_STORE, SD_DIRECTOR_HOST, SD_DIRECTOR_PORT,
/// SD_DIRECTOR_POOL_SIZE and SD_DIRECTOR_QUEUE_LIMIT over `base`.
Options options_from_env(Options base = {});

enum class JobState { queued, running, done, failed };
std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);
bool legal_transition(JobState from, JobState to);

struct Session {
  std::string id;
  int label = 0;
  std::uint64_t seed = 0;
  std::optional<ShadowControl> control;
  nlohmann::json guidance = nlohmann::json::object();  // overrides over the defaults
  std::string created_at;
  std::string updated_at;
};

struct Job {
  std::string id;
  std::string session_id;
  JobState state = JobState::queued;
  int step = 0;
  int total = 0;
  std::string error;
  std::string created_at;
  std::string updated_at;
  RunRequest request;
};

nlohmann::json to_json(const Session& s);
nlohmann::json to_json(const Job& j);

/// Result of a request, independent of the HTTP library.
struct Reply {
  int status = 200;
  nlohmann::json body;
  /// When set, the reply is a file rather than JSON.
  std::optional<std::filesystem::path> file;
  std::string content_type = "application/json";
};

class Service {
 public:
  explicit Service(Options options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request. Thread-safe.
  Reply handle(const std::string& method, const std::string& path, const std::string& body);

  void register_routes(httplib::Server& server);
  /// Blocks serving HTTP until stop() is called.
  void listen();
  /// Binds to any free port, serves in a background thread and returns the port.
  int listen_background();
  void stop();

  bool estimators_loaded() const { return guide_sd_ != nullptr; }
  const Options& options() const { return options_; }

 private:
  Reply create_session(const std::string& body);
  Reply get_session(const std::string& id);
  Reply put_settings(const std::string& id, const std::string& body);
  Reply get_control(const std::string& id);
  Reply put_control(const std::string& id, const std::string& body);
  Reply create_job(const std::string& session_id, const std::string& body);
  Reply get_job(const std::string& id);
  Reply cancel_job(const std::string& id);
  Reply list_artifacts(const std::string& id);
  Reply get_artifact(const std::string& id, const std::string& name);
  Reply healthz();
  Reply schemas(const std::string& name);

  void recover();
  void worker_loop();
  void run_job(const std::string& id);
  void persist(const Session& s);
  void persist(const Job& j);
  void transition(Job& job, JobState to);
  std::string next_id(char prefix);
  std::filesystem::path run_dir(const std::string& job_id) const;

  Options options_;
  std::shared_ptr<DiffusionModel> backend_;
  std::unique_ptr<SDEstimator> guide_sd_;
  std::unique_ptr<IDEstimator> guide_id_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  int running_ = 0;
  std::uint64_t counter_ = 0;
  bool shutting_down_ = false;
  std::vector<std::thread> workers_;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

/// JSON schema documents served under /schemas.
nlohmann::json schema_index();
std::optional<nlohmann::json> schema_document(const std::string& name);

}  // namespace shadowsteer::service
