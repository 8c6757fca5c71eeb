#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "mf/service/jobs.hpp"
#include "mf/service/session.hpp"

namespace httplib {
class Server;
}

namespace mf::service {

struct Routes;

inline constexpr int kDefaultPort = 8787;
inline constexpr const char* kDataDirEnv = "MF_DATA_DIR";
inline constexpr const char* kDefaultCheckpoint = "checkpoint";
inline constexpr int kMaxSamplerSteps = 1000;

struct ServiceOptions {
  std::filesystem::path data_dir = ".";
  int workers = 1;
};

// Data directory from MF_DATA_DIR, else the working directory.
std::filesystem::path data_dir_from_env();

// Routes:
//   POST   /sessions                 {"image","depth","intrinsics"} or {"fixture":{...}}
//   POST   /sessions/{id}/select     {"rect":[x0,y0,x1,y1]} or {"mask":{...}}, "label"
//   POST   /sessions/{id}/preview    {"frames","panel"|"camera","objects"}
//   POST   /sessions/{id}/spec       {"caption","seed"}
//   POST   /jobs/generate            {"session","checkpoint","steps","seed"}
//   GET    /jobs/{id}
//   GET    /jobs/{id}/frames/{k}.png
//   DELETE /jobs/{id}
// POST bodies may carry "idempotency_key" (or an Idempotency-Key header);
// a repeated key with the same body replays the first response.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void mount(httplib::Server& server);
  const std::filesystem::path& data_dir() const { return options_.data_dir; }

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
  };
  struct Replay {
    std::mutex mutex;
    std::optional<std::string> body;
    int status = 0;
    std::string response;
  };

  std::shared_ptr<Entry> session(const std::string& id) const;
  std::shared_ptr<Replay> replay_slot(const std::string& key);
  std::string next_id(const char* prefix);
  std::filesystem::path resolve(const std::string& relative) const;

  ServiceOptions options_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex replay_mutex_;
  std::map<std::string, std::shared_ptr<Replay>> replays_;
  std::atomic<std::uint64_t> counter_{0};
  std::shared_ptr<Routes> routes_;
  JobQueue jobs_;

  friend struct Routes;
};

// Serves until the process is stopped.
void serve(const ServiceOptions& options, const std::string& host, int port);

}  // namespace mf::service
