#include "torch_doctest.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/evaluation.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/service.hpp"
#include "test_paths.hpp"
#include "tiny_stack.hpp"

using namespace shadowsteer;
using namespace shadowsteer::service;
using nlohmann::json;

namespace {

Options tiny_options(const std::string& store, bool estimators = true) {
  const auto& st = tiny::stack();
  Options o;
  o.diffusion_checkpoint = st.diffusion;
  if (estimators) {
    o.sd_checkpoint = st.sd;
    o.id_checkpoint = st.id;
  }
  o.run_store = test_paths::scratch(store);
  return o;
}

json mask_control_json(double strength = 1.0) {
  ShadowControl c;
  c.mode = ControlMode::mask;
  c.mask = half_face_mask(tiny::kStackSize);
  c.strength = strength;
  return to_json(c);
}

std::string new_session(Service& svc, const json& control) {
  auto r = svc.handle("POST", "/sessions", json{{"label", 1}, {"seed", 4}}.dump());
  REQUIRE(r.status == 201);
  const auto id = r.body["id"].get<std::string>();
  REQUIRE(svc.handle("PUT", "/sessions/" + id + "/control", control.dump()).status == 200);
  return id;
}

json wait_for(Service& svc, const std::string& job) {
  for (int i = 0; i < 2000; ++i) {
    auto r = svc.handle("GET", "/jobs/" + job, "");
    REQUIRE(r.status == 200);
    const auto state = r.body["state"].get<std::string>();
    if (state == "done" || state == "failed") return r.body;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("job state machine allows only forward transitions") {
  CHECK(legal_transition(JobState::queued, JobState::running));
  CHECK(legal_transition(JobState::queued, JobState::failed));
  CHECK(legal_transition(JobState::running, JobState::done));
  CHECK(legal_transition(JobState::running, JobState::failed));
  CHECK_FALSE(legal_transition(JobState::queued, JobState::done));
  CHECK_FALSE(legal_transition(JobState::done, JobState::running));
  CHECK_FALSE(legal_transition(JobState::failed, JobState::queued));
  CHECK_FALSE(legal_transition(JobState::running, JobState::queued));
  CHECK(job_state_from_string(to_string(JobState::done)) == JobState::done);
}

TEST_CASE("session and control endpoints") {
  Service svc(tiny_options("svc_sessions"));
  CHECK(svc.handle("GET", "/healthz", "").body["estimators_loaded"] == true);
  auto created = svc.handle("POST", "/sessions", R"({"label": 2, "seed": 9})");
  REQUIRE(created.status == 201);
  const auto id = created.body["id"].get<std::string>();
  CHECK(created.body["control"].is_null());
  CHECK(svc.handle("GET", "/sessions/" + id + "/control", "").status == 404);

  auto put = svc.handle("PUT", "/sessions/" + id + "/control",
                        R"({"mode":"directional_light","light":[-5,0.5,2],"strength":1.0})");
  CHECK(put.status == 200);
  CHECK(put.body["mode"] == "directional_light");
  CHECK(put.body["light"] == json::array({-5.0, 0.5, 2.0}));
  CHECK(put.body["strength"] == 1.0);
  CHECK(svc.handle("GET", "/sessions/" + id + "/control", "").body == put.body);

  auto both = mask_control_json();
  both["light"] = json::array({-5, 0.5, 2});
  CHECK(svc.handle("PUT", "/sessions/" + id + "/control", both.dump()).status == 422);
  CHECK(svc.handle("PUT", "/sessions/" + id + "/control", "{not json").status == 422);
  CHECK(svc.handle("PUT", "/sessions/" + id + "/control", R"({"mode":"directional_light","light":[0,0,0.5]})")
            .status == 422);
  CHECK(svc.handle("GET", "/sessions/" + id + "/control", "").body == put.body);

  CHECK(svc.handle("PUT", "/sessions/" + id, R"({"seed": 12, "guidance": {"max_iterations": 4}})").status == 200);
  CHECK(svc.handle("GET", "/sessions/" + id, "").body["seed"] == 12);
  CHECK(svc.handle("PUT", "/sessions/" + id, R"({"label": 99})").status == 422);
  CHECK(svc.handle("POST", "/sessions", R"({"label": -1})").status == 422);

  CHECK(svc.handle("GET", "/sessions/nope", "").status == 404);
  CHECK(svc.handle("PUT", "/sessions/nope/control", mask_control_json().dump()).status == 404);
  CHECK(svc.handle("GET", "/jobs/nope", "").status == 404);
  CHECK(svc.handle("GET", "/unknown", "").status == 404);
  CHECK(svc.handle("DELETE", "/sessions", "").status == 405);
  CHECK(svc.handle("GET", "/schemas", "").body["schemas"].size() >= 4);
  CHECK(svc.handle("GET", "/schemas/control", "").status == 200);
  CHECK(svc.handle("GET", "/schemas/none", "").status == 404);
}

TEST_CASE("jobs run to completion, expose artifacts and replay byte-exactly") {
  Service svc(tiny_options("svc_jobs"));
  const auto sid = new_session(svc, mask_control_json());
  auto posted = svc.handle("POST", "/sessions/" + sid + "/jobs", R"({"guidance": {"max_iterations": 4}})");
  REQUIRE(posted.status == 202);
  CHECK(posted.body["state"] == "queued");
  const auto jid = posted.body["id"].get<std::string>();
  const auto done = wait_for(svc, jid);
  REQUIRE(done["state"] == "done");
  CHECK(done["progress"]["step"] == done["progress"]["total"]);
  CHECK(done["result"]["run_dir"].is_string());

  auto listing = svc.handle("GET", "/jobs/" + jid + "/artifacts", "");
  REQUIRE(listing.status == 200);
  const auto names = listing.body["artifacts"].get<std::vector<std::string>>();
  for (const char* want : {"result.png", "target_shadow.png", "est_shadow_before.png", "est_shadow_after.png",
                           "est_depth.png", "trace.json", "config.json"}) {
    CHECK(std::find(names.begin(), names.end(), want) != names.end());
  }
  auto png = svc.handle("GET", "/jobs/" + jid + "/artifacts/result.png", "");
  REQUIRE(png.status == 200);
  CHECK(png.content_type == "image/png");
  CHECK(svc.handle("GET", "/jobs/" + jid + "/artifacts/nothing.png", "").status == 404);
  CHECK(svc.handle("GET", "/jobs/" + jid + "/artifacts/..", "").status == 404);
  CHECK(svc.handle("POST", "/jobs/" + jid + "/cancel", "").status == 409);

  const auto& st = tiny::stack();
  const auto req = run_request_from_json(json::parse(io::read_text(*svc.handle("GET", "/jobs/" + jid + "/artifacts/config.json", "").file)));
  CHECK(req.guidance.max_iterations == 4);
  CHECK(req.seed == 4);
  ShadowGuide guide(st.model, load_sd_estimator(st.sd, *st.model), load_id_estimator(st.id, *st.model), req.sampler);
  const auto replay = test_paths::scratch("svc_replay");
  write_run(guide.generate_with_control(req.label, req.seed, req.control, req.guidance), replay);
  CHECK(io::read_text(replay / "result.png") == io::read_text(*png.file));

  auto bad = svc.handle("POST", "/sessions/" + sid + "/jobs", R"({"strength": 3})");
  CHECK(bad.status == 422);
}

TEST_CASE("jobs are refused before estimators are loaded and without a control") {
  Service svc(tiny_options("svc_noest", false));
  CHECK(svc.handle("GET", "/healthz", "").body["estimators_loaded"] == false);
  const auto sid = new_session(svc, mask_control_json(0.0));
  auto r = svc.handle("POST", "/sessions/" + sid + "/jobs", "");
  CHECK(r.status == 409);
  CHECK(r.body["error"]["message"].get<std::string>().find("estimators") != std::string::npos);

  Service with(tiny_options("svc_nocontrol"));
  auto s = with.handle("POST", "/sessions", "{}");
  CHECK(with.handle("POST", "/sessions/" + s.body["id"].get<std::string>() + "/jobs", "").status == 409);
}

TEST_CASE("bounded pool: saturation, FIFO order and cancellation") {
  auto opts = tiny_options("svc_pool");
  opts.pool_size = 1;
  opts.queue_limit = 2;
  Service svc(opts);
  const auto sid = new_session(svc, mask_control_json());
  std::vector<std::string> jobs;
  for (int i = 0; i < 3; ++i) {
    auto r = svc.handle("POST", "/sessions/" + sid + "/jobs", json{{"seed", i}}.dump());
    REQUIRE(r.status == 202);
    jobs.push_back(r.body["id"]);
  }
  CHECK(svc.handle("POST", "/sessions/" + sid + "/jobs", "").status == 503);

  auto cancelled = svc.handle("POST", "/jobs/" + jobs[2] + "/cancel", "");
  REQUIRE(cancelled.status == 200);
  CHECK(cancelled.body["state"] == "failed");
  CHECK(cancelled.body["error"] == "cancelled");

  // With one worker, the second job never starts before the first has finished.
  for (int i = 0; i < 2000; ++i) {
    const auto second = svc.handle("GET", "/jobs/" + jobs[1], "").body["state"];
    if (second != "queued") {
      CHECK(svc.handle("GET", "/jobs/" + jobs[0], "").body["state"] == "done");
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  CHECK(wait_for(svc, jobs[1])["state"] == "done");
  CHECK(svc.handle("GET", "/jobs/" + jobs[2], "").body["state"] == "failed");
}

TEST_CASE("restart recovers sessions and finished jobs from the run store") {
  auto opts = tiny_options("svc_restart");
  std::string sid, jid;
  {
    Service svc(opts);
    sid = new_session(svc, mask_control_json(0.0));
    jid = svc.handle("POST", "/sessions/" + sid + "/jobs", "").body["id"];
    REQUIRE(wait_for(svc, jid)["state"] == "done");
  }
  Service again(opts);
  auto s = again.handle("GET", "/sessions/" + sid, "");
  REQUIRE(s.status == 200);
  CHECK(s.body["control"]["mode"] == "mask");
  auto j = again.handle("GET", "/jobs/" + jid, "");
  REQUIRE(j.status == 200);
  CHECK(j.body["state"] == "done");
  CHECK(again.handle("GET", "/jobs/" + jid + "/artifacts/result.png", "").status == 200);
  auto fresh = again.handle("POST", "/sessions", "{}");
  CHECK(fresh.body["id"] != sid);

  // A job left queued by a crash comes back failed.
  auto record = json::parse(io::read_text(opts.run_store / "jobs" / (jid + ".json")));
  record["id"] = "j999";
  record["state"] = "running";
  io::write_text(opts.run_store / "jobs" / "j999.json", record.dump());
  Service third(opts);
  auto orphan = third.handle("GET", "/jobs/j999", "");
  CHECK(orphan.body["state"] == "failed");
  CHECK(orphan.body["error"] == "interrupted by service restart");
}

TEST_CASE("HTTP transport serves the same routes") {
  Service svc(tiny_options("svc_http"));
  const int port = svc.listen_background();
  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");
  auto created = cli.Post("/sessions", R"({"label": 0})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = json::parse(created->body)["id"].get<std::string>();
  auto put = cli.Put("/sessions/" + id + "/control", mask_control_json(0.0).dump(), "application/json");
  REQUIRE(put);
  CHECK(put->status == 200);
  auto missing = cli.Get("/jobs/none");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  svc.stop();
}

TEST_CASE("options read SD_DIRECTOR_* variables") {
  setenv("SD_DIRECTOR_POOL_SIZE", "3", 1);
  setenv("SD_DIRECTOR_RUN_STORE", "/tmp/somewhere", 1);
  auto o = options_from_env();
  CHECK(o.pool_size == 3);
  CHECK(o.run_store == "/tmp/somewhere");
  setenv("SD_DIRECTOR_PORT", "eighty", 1);
  CHECK_THROWS_AS(options_from_env(), InputError);
  unsetenv("SD_DIRECTOR_POOL_SIZE");
  unsetenv("SD_DIRECTOR_RUN_STORE");
  unsetenv("SD_DIRECTOR_PORT");
}
