#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "service.hpp"
#include "shapesos/inventory.hpp"
#include "shapesos/model_io.hpp"
#include "shapesos/version.hpp"

// After Eigen: resolv.h defines _res, which Eigen uses as an identifier.
#include <httplib.h>
#include <json.hpp>

using namespace shapesos;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

est::FittedModel square_model() {
  est::FittedModel m;
  m.box = poly::Box::symmetric(1);
  m.scaling = est::Scaling::identity(1);
  m.degree = 2;
  const auto x = poly::Polynomial::variable(1, 0);
  m.poly = x * x;
  m.provenance.status = "hand";
  return m;
}

json post(httplib::Client& c, const std::string& path, const json& body, int* status) {
  auto res = c.Post(path, body.dump(), "application/json");
  if (!res) {
    *status = -1;
    return {};
  }
  *status = res->status;
  return json::parse(res->body, nullptr, false);
}

json poll_job(httplib::Client& c, std::uint64_t id) {
  for (int i = 0; i < 6000; ++i) {
    auto res = c.Get("/jobs/" + std::to_string(id));
    if (!res || res->status != 200) return {};
    auto j = json::parse(res->body);
    if (j["status"] == "done" || j["status"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return {};
}

struct Running {
  service::Service svc;
  int port = 0;
  std::unique_ptr<httplib::Client> http;
  httplib::Client& client() { return *http; }

  explicit Running(service::ServiceConfig cfg) : svc(std::move(cfg)) {}
  void start() {
    svc.load();
    port = svc.start_background();
    http = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
};

}  // namespace

TEST(Service, HealthReportsVersion) {
  service::ServiceConfig cfg;
  Running r(cfg);
  r.start();
  auto res = r.client().Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto j = json::parse(res->body);
  EXPECT_EQ(j["version"], kVersion);
  EXPECT_EQ(j["status"], "ok");
}

TEST(Service, PredictsPersistedToyModel) {
  const auto dir = fresh_dir("shapesos_service_toy");
  io::save_model(dir / "square.model", square_model());
  service::ServiceConfig cfg;
  cfg.model_dir = dir;
  Running r(cfg);
  r.start();

  int status = 0;
  auto j = post(r.client(), "/models/square/predict", json{{"point", {0.5}}}, &status);
  EXPECT_EQ(status, 200);
  EXPECT_NEAR(j["value"].get<double>(), 0.25, 1e-9);
  EXPECT_EQ(j["model"], "square");
  EXPECT_FALSE(j["audit"]["outside_box"].get<bool>());
  EXPECT_EQ(j["audit"]["shape"], "none");

  j = post(r.client(), "/models/square/predict", json{{"point", {3.0}}}, &status);
  EXPECT_EQ(status, 200);
  EXPECT_NEAR(j["value"].get<double>(), 9.0, 1e-9);
  EXPECT_TRUE(j["audit"]["outside_box"].get<bool>());

  auto res = r.client().Get("/models");
  ASSERT_TRUE(res);
  auto list = json::parse(res->body)["models"];
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["id"], "square");
  EXPECT_EQ(list[0]["box"]["lower"][0].get<double>(), -1.0);
  EXPECT_EQ(list[0]["box"]["upper"][0].get<double>(), 1.0);
  fs::remove_all(dir);
}

TEST(Service, ErrorCodes) {
  const auto dir = fresh_dir("shapesos_service_err");
  io::save_model(dir / "square.model", square_model());
  service::ServiceConfig cfg;
  cfg.model_dir = dir;
  Running r(cfg);
  r.start();
  int status = 0;
  post(r.client(), "/models/nope/predict", json{{"point", {0.5}}}, &status);
  EXPECT_EQ(status, 404);
  post(r.client(), "/models/square/predict", json{{"point", {0.5, 0.1}}}, &status);
  EXPECT_EQ(status, 422);
  post(r.client(), "/models/square/predict", json{{"point", {"a"}}}, &status);
  EXPECT_EQ(status, 422);
  post(r.client(), "/models/square/predict", json{{"x", {0.5}}}, &status);
  EXPECT_EQ(status, 422);
  auto res = r.client().Post("/models/square/predict", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  post(r.client(), "/inventory/square/value-exact", json{{"alpha_plus", 1}}, &status);
  EXPECT_EQ(status, 404);
  res = r.client().Get("/jobs/12345");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  fs::remove_all(dir);
}

TEST(Service, ConcurrentPredictsAgree) {
  const auto dir = fresh_dir("shapesos_service_conc");
  io::save_model(dir / "square.model", square_model());
  service::ServiceConfig cfg;
  cfg.model_dir = dir;
  Running r(cfg);
  r.start();
  std::atomic<int> mismatches{0}, failures{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      httplib::Client c("127.0.0.1", r.port);
      for (int i = 0; i < 25; ++i) {
        int status = 0;
        auto j = post(c, "/models/square/predict", json{{"point", {0.3}}}, &status);
        if (status != 200) {
          ++failures;
          continue;
        }
        if (j["value"].get<double>() != 0.3 * 0.3) ++mismatches;
      }
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(failures.load(), 0);
  EXPECT_EQ(mismatches.load(), 0);
  fs::remove_all(dir);
}

TEST(Service, ValueExactMatchesDirectSolve) {
  const auto dir = fresh_dir("shapesos_service_inv");
  const auto inst = inventory::InventoryInstance::example(3);
  {
    std::ofstream o(dir / "contract.inv");
    inventory::write_instance(o, inst);
  }
  inventory::SurrogateOptions opt;
  opt.m = 40;
  opt.d = 2;
  opt.r = 1;
  const auto sur = inventory::fit_surrogate(inst, inventory::default_sample_box(inst), opt);
  io::save_model(dir / "contract.model", sur.model);

  service::ServiceConfig cfg;
  cfg.model_dir = dir;
  Running r(cfg);
  r.start();

  inventory::ContractParams p{0.8, 0.5, 1.2, 0.9, 14.0};
  json body{{"alpha_plus", p.alpha_plus}, {"alpha_minus", p.alpha_minus}, {"beta_plus", p.beta_plus},
            {"beta_minus", p.beta_minus}, {"L", p.L}};
  int status = 0;
  auto j = post(r.client(), "/inventory/contract/value-exact", body, &status);
  ASSERT_EQ(status, 202);
  const auto done = poll_job(r.client(), j["job"].get<std::uint64_t>());
  ASSERT_EQ(done["status"], "done");
  const double direct = inventory::value(inst, p);
  EXPECT_NEAR(done["value"].get<double>(), direct, 1e-6);
  const double surrogate = est::predict(sur.model, p.to_vector());
  EXPECT_NEAR(done["surrogate"].get<double>(), surrogate, 1e-12);
  EXPECT_NEAR(done["gap"].get<double>(), surrogate - done["value"].get<double>(), 1e-12);

  auto models = json::parse(r.client().Get("/models")->body)["models"];
  ASSERT_EQ(models.size(), 1u);
  EXPECT_TRUE(models[0]["inventory"].get<bool>());
  EXPECT_EQ(models[0]["parameters"].size(), 5u);

  body.erase("L");
  post(r.client(), "/inventory/contract/value-exact", body, &status);
  EXPECT_EQ(status, 422);
  body["L"] = -1.0;
  post(r.client(), "/inventory/contract/value-exact", body, &status);
  EXPECT_EQ(status, 422);
  fs::remove_all(dir);
}

TEST(Service, FullQueueRejects) {
  service::ServiceConfig cfg;
  cfg.queue_capacity = 1;
  cfg.audit_on_load = false;
  Running r(cfg);
  r.svc.add_instance("big", inventory::InventoryInstance::example(14));
  r.start();
  json body{{"alpha_plus", 1.0}, {"alpha_minus", 1.0}, {"beta_plus", 1.0}, {"beta_minus", 1.0}, {"L", 100.0}};
  std::vector<std::uint64_t> accepted;
  int rejected = 0;
  for (int i = 0; i < 4; ++i) {
    int status = 0;
    auto j = post(r.client(), "/inventory/big/value-exact", body, &status);
    if (status == 202) accepted.push_back(j["job"].get<std::uint64_t>());
    else if (status == 503) ++rejected;
    else ADD_FAILURE() << "status " << status;
  }
  EXPECT_GE(rejected, 1);
  EXPECT_GE(accepted.size(), 1u);
  for (auto id : accepted) EXPECT_EQ(poll_job(r.client(), id)["status"], "done");
  // Room again once the worker drained the queue.
  int status = 0;
  post(r.client(), "/inventory/big/value-exact", body, &status);
  EXPECT_EQ(status, 202);
}
