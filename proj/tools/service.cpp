#include "service.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "shapesos/certify.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/model_io.hpp"
#include "shapesos/version.hpp"

namespace shapesos::service {

using json = nlohmann::json;

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

namespace {

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v(i)) ? json(v(i)) : json(nullptr));
  return a;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& msg) { reply(res, status, json{{"error", msg}}); }

// Cheaper grids than the CLI audit; startup should stay in seconds.
certify::Tolerances load_tolerances() {
  certify::Tolerances tol = certify::defaults();
  tol.density_small = 10;
  tol.density_medium = 4;
  tol.density_large = 3;
  tol.random_samples = 200;
  tol.identity_samples = 200;
  return tol;
}

json shape_json(const est::ShapeSpec& s) {
  json j{{"kind", est::to_string(s.kind)}};
  if (!s.K.empty()) {
    json K = json::array();
    for (const auto& k : s.K)
      K.push_back({std::isfinite(k.lo) ? json(k.lo) : json(nullptr), std::isfinite(k.hi) ? json(k.hi) : json(nullptr)});
    j["K"] = K;
  }
  if (s.kind == est::ShapeKind::HessianBand) j["band"] = {s.ell, s.L};
  if (!s.blocks.empty()) {
    json b = json::array();
    for (const auto& blk : s.blocks) b.push_back({{"coords", blk.coords}, {"sign", blk.sign}});
    j["blocks"] = b;
  }
  return j;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Service::load() {
  namespace fs = std::filesystem;
  if (config_.model_dir.empty()) return;
  if (!fs::is_directory(config_.model_dir))
    throw ValidationError("model directory not found: " + config_.model_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(config_.model_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (f.extension() == ".model") add_model(f.stem().string(), io::load_model(f));
    else if (f.extension() == ".inv") add_instance(f.stem().string(), inventory::read_instance(f));
  }
}

void Service::add_model(const std::string& id, est::FittedModel model) {
  ModelEntry e;
  e.id = id;
  e.model = std::move(model);
  if (config_.audit_on_load) {
    const auto tol = load_tolerances();
    const auto reports = certify::audit_model(e.model, tol);
    e.audited = true;
    e.audit_passed = certify::all_passed(reports);
    for (const auto& r : reports)
      if (r.tolerance > 0) e.audit_worst = std::max(e.audit_worst, r.worst / r.tolerance);
  }
  models_[id] = std::move(e);
}

void Service::add_instance(const std::string& id, inventory::InventoryInstance inst) {
  inst.validate();
  instances_[id] = std::move(inst);
}

std::optional<std::uint64_t> Service::submit(const std::string& instance, const inventory::ContractParams& params) {
  std::lock_guard<std::mutex> lock(mu_);
  if (queue_.size() >= config_.queue_capacity) return std::nullopt;
  Job j;
  j.id = next_job_++;
  j.instance = instance;
  j.params = params;
  jobs_[j.id] = j;
  queue_.push_back(j.id);
  cv_.notify_one();
  return j.id;
}

std::optional<Job> Service::job(std::uint64_t id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Service::worker_loop() {
  for (;;) {
    Job j;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      const auto id = queue_.front();
      queue_.pop_front();
      jobs_[id].status = JobStatus::Running;
      j = jobs_[id];
    }
    const auto& inst = instances_.at(j.instance);
    auto t0 = std::chrono::steady_clock::now();
    try {
      j.value = inventory::value(inst, j.params, config_.solver);
      auto m = models_.find(j.instance);
      if (m != models_.end() && m->second.model.num_vars() == 5)
        j.surrogate = est::predict(m->second.model, j.params.to_vector());
      j.status = JobStatus::Done;
    } catch (const std::exception& e) {
      j.status = JobStatus::Failed;
      j.error = e.what();
    }
    j.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard<std::mutex> lock(mu_);
    jobs_[j.id] = j;
  }
}

httplib::Server& Service::http() { return *server_; }

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::start_background(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw Error("could not bind " + host);
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

void Service::routes() {
  auto& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, json{{"status", "ok"}, {"version", kVersion}});
  });

  srv.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& [id, e] : models_) {
      const auto& m = e.model;
      json j{{"id", id},
             {"vars", m.num_vars()},
             {"degree", m.degree},
             {"r", m.r},
             {"gram_kind", m.gram_kind},
             {"shape", shape_json(m.shape)},
             {"box", {{"lower", vec(m.box.lower())}, {"upper", vec(m.box.upper())}}},
             {"train_sse", m.train_sse},
             {"certificates", m.certificates.size()},
             {"provenance",
              {{"created", m.provenance.created},
               {"seed", m.provenance.seed},
               {"status", m.provenance.status},
               {"extra", m.provenance.extra}}},
             {"inventory", instances_.count(id) > 0}};
      if (e.audited) j["audit"] = {{"passed", e.audit_passed}, {"worst_ratio", e.audit_worst}};
      if (instances_.count(id) && m.num_vars() == 5) j["parameters"] = inventory::param_names();
      list.push_back(j);
    }
    reply(res, 200, json{{"models", list}});
  });

  srv.Post(R"(/models/([^/]+)/predict)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto it = models_.find(id);
    if (it == models_.end()) return fail(res, 404, "unknown model '" + id + "'");
    const auto& m = it->second.model;
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("point") || !body["point"].is_array())
      return fail(res, 422, "expected {\"point\": [numbers]}");
    const auto& p = body["point"];
    if (static_cast<int>(p.size()) != m.num_vars())
      return fail(res, 422, "point has " + std::to_string(p.size()) + " coordinates, model takes " +
                                std::to_string(m.num_vars()));
    Eigen::VectorXd x(m.num_vars());
    for (int i = 0; i < m.num_vars(); ++i) {
      if (!p[i].is_number()) return fail(res, 422, "point coordinate " + std::to_string(i) + " is not a number");
      x(i) = p[i].get<double>();
      if (!std::isfinite(x(i))) return fail(res, 422, "point coordinate " + std::to_string(i) + " is not finite");
    }
    bool outside = false;
    const double v = est::predict(m, x, &outside);
    json audit{{"shape", est::to_string(m.shape.kind)},
               {"certificates", m.certificates.size()},
               {"solver_status", m.provenance.status},
               {"outside_box", outside}};
    if (it->second.audited) audit["audit_passed"] = it->second.audit_passed;
    reply(res, 200, json{{"value", v}, {"model", id}, {"audit", audit}});
  });

  srv.Post(R"(/inventory/([^/]+)/value-exact)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!instances_.count(id)) return fail(res, 404, "unknown inventory instance '" + id + "'");
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return fail(res, 422, "expected a JSON object");
    Eigen::VectorXd x(5);
    const auto& names = inventory::param_names();
    for (int i = 0; i < 5; ++i) {
      if (!body.contains(names[i]) || !body[names[i]].is_number())
        return fail(res, 422, "missing or non-numeric '" + names[i] + "'");
      x(i) = body[names[i]].get<double>();
    }
    inventory::ContractParams params;
    try {
      params = inventory::ContractParams::from_vector(x);
      params.validate();
    } catch (const ValidationError& e) {
      return fail(res, 422, e.what());
    }
    auto jid = submit(id, params);
    if (!jid) return fail(res, 503, "job queue full");
    reply(res, 202, json{{"job", *jid}, {"status", "queued"}});
  });

  srv.Get(R"(/jobs/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t id = 0;
    try {
      id = std::stoull(req.matches[1].str());
    } catch (const std::exception&) {
      return fail(res, 404, "unknown job");
    }
    auto j = job(id);
    if (!j) return fail(res, 404, "unknown job " + std::to_string(id));
    json out{{"job", j->id}, {"instance", j->instance}, {"status", to_string(j->status)}};
    if (j->status == JobStatus::Done) {
      out["value"] = j->value;
      out["solve_seconds"] = j->solve_seconds;
      if (j->surrogate) {
        out["surrogate"] = *j->surrogate;
        out["gap"] = *j->surrogate - j->value;
        out["relative_gap"] = std::abs(*j->surrogate - j->value) / std::max(1.0, std::abs(j->value));
      }
    }
    if (j->status == JobStatus::Failed) out["error"] = j->error;
    reply(res, 200, out);
  });
}

}  // namespace shapesos::service
