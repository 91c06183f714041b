#pragma once

// HTTP front end over fitted models.
//
//   GET  /health                      {"status": "ok", "version": ...}
//   GET  /models                      registry with boxes and shape metadata
//   POST /models/{id}/predict         {"point": [..]} -> {"value", "model", "audit"}
//   POST /inventory/{id}/value-exact  contract fields by name -> 202 {"job": ...}
//   GET  /jobs/{id}                   status, exact value and surrogate gap
//
// Models are "<id>.model" files; "<id>.inv" next to them is the inventory
// instance served under /inventory/<id>. The registry is fixed after start.

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

#include "shapesos/conic.hpp"
#include "shapesos/estimators.hpp"
#include "shapesos/inventory.hpp"

namespace httplib {
class Server;
}

namespace shapesos::service {

struct ServiceConfig {
  std::filesystem::path model_dir;
  std::size_t queue_capacity = 16;  // queued, not yet running
  bool audit_on_load = true;
  conic::SolverSettings solver;
};

struct ModelEntry {
  std::string id;
  est::FittedModel model;
  bool audited = false;
  bool audit_passed = false;
  double audit_worst = 0.0;  // largest violation / tolerance ratio
};

enum class JobStatus { Queued, Running, Done, Failed };
const char* to_string(JobStatus s);

struct Job {
  std::uint64_t id = 0;
  std::string instance;
  inventory::ContractParams params;
  JobStatus status = JobStatus::Queued;
  double value = 0.0;
  std::optional<double> surrogate;
  std::string error;
  double solve_seconds = 0.0;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Scans config.model_dir. Throws ValidationError on unreadable files.
  void load();
  void add_model(const std::string& id, est::FittedModel model);
  void add_instance(const std::string& id, inventory::InventoryInstance inst);

  const std::map<std::string, ModelEntry>& models() const { return models_; }

  // Returns the job id, or nullopt when the queue is full.
  std::optional<std::uint64_t> submit(const std::string& instance, const inventory::ContractParams& params);
  std::optional<Job> job(std::uint64_t id) const;

  // Route table; valid for the lifetime of the service.
  httplib::Server& http();
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  void routes();
  void worker_loop();

  ServiceConfig config_;
  std::map<std::string, ModelEntry> models_;
  std::map<std::string, inventory::InventoryInstance> instances_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::uint64_t> queue_;
  std::map<std::uint64_t, Job> jobs_;
  std::uint64_t next_job_ = 1;
  bool stopping_ = false;
  std::thread worker_;

  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
};

}  // namespace shapesos::service
