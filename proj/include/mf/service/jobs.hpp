#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mf::service {

enum class JobState { kQueued, kRunning, kDone, kFailed };

std::string to_string(JobState s);

inline constexpr const char* kCancelledReason = "cancelled";

struct JobSnapshot {
  std::string id;
  JobState state = JobState::kQueued;
  double progress = 0;
  std::string reason;  // failed jobs only
  int frames = 0;      // done jobs only
};

// State and progress are atomics so readers never block the worker. The
// reason and frame count are written once, before the terminal state is
// published, and never change afterwards.
class Job {
 public:
  explicit Job(std::string id) : id_(std::move(id)) {}

  const std::string& id() const { return id_; }
  JobState state() const { return state_.load(std::memory_order_acquire); }
  JobSnapshot snapshot() const;

  // Progress never decreases; values outside [0, 1] are clamped.
  void report_progress(double fraction);
  bool start();
  bool finish(int frames);
  bool fail(const std::string& reason);
  bool cancel_requested() const { return cancel_.load(); }
  const std::atomic<bool>& cancel_flag() const { return cancel_; }
  // Queued and running jobs become failed(cancelled); terminal jobs are kept.
  bool cancel();

 private:
  bool finalize(JobState to, const std::string& reason, int frames);

  std::string id_;
  std::atomic<JobState> state_{JobState::kQueued};
  std::atomic<double> progress_{0};
  std::atomic<bool> cancel_{false};
  std::mutex terminal_;
  std::string reason_;
  int frames_ = 0;
};

// Fixed pool of worker threads running jobs in submission order.
class JobQueue {
 public:
  using Work = std::function<int(Job&)>;  // returns the number of frames produced

  explicit JobQueue(int workers = 1);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::shared_ptr<Job> submit(const std::string& id, Work work);
  // Registers a job that failed before it could be queued.
  std::shared_ptr<Job> reject(const std::string& id, const std::string& reason);
  std::shared_ptr<Job> find(const std::string& id) const;

 private:
  void run();

  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::pair<std::shared_ptr<Job>, Work>> pending_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace mf::service
