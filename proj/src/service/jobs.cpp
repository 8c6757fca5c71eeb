#include "mf/service/jobs.hpp"

#include <algorithm>

#include "mf/common/error.hpp"

namespace mf::service {

std::string to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

JobSnapshot Job::snapshot() const {
  JobSnapshot s;
  s.id = id_;
  s.state = state();
  s.progress = progress_.load(std::memory_order_acquire);
  if (s.state == JobState::kFailed) s.reason = reason_;
  if (s.state == JobState::kDone) s.frames = frames_;
  return s;
}

void Job::report_progress(double fraction) {
  fraction = std::clamp(fraction, 0.0, 1.0);
  double seen = progress_.load();
  while (seen < fraction && !progress_.compare_exchange_weak(seen, fraction)) {
  }
}

bool Job::start() {
  std::lock_guard lock(terminal_);
  JobState expected = JobState::kQueued;
  return state_.compare_exchange_strong(expected, JobState::kRunning, std::memory_order_acq_rel);
}

bool Job::finalize(JobState to, const std::string& reason, int frames) {
  std::lock_guard lock(terminal_);
  const auto s = state_.load();
  if (s == JobState::kDone || s == JobState::kFailed) return false;
  reason_ = reason;
  frames_ = frames;
  if (to == JobState::kDone) report_progress(1.0);
  state_.store(to, std::memory_order_release);
  return true;
}

bool Job::finish(int frames) { return finalize(JobState::kDone, "", frames); }

bool Job::fail(const std::string& reason) { return finalize(JobState::kFailed, reason, 0); }

bool Job::cancel() {
  cancel_.store(true);
  return fail(kCancelledReason);
}

JobQueue::JobQueue(int workers) {
  if (workers < 1) throw ContractError("job queue needs at least one worker");
  for (int i = 0; i < workers; ++i) workers_.emplace_back([this] { run(); });
}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
    for (auto& [job, work] : pending_) job->cancel();
    pending_.clear();
    for (auto& [id, job] : jobs_)
      if (job->state() == JobState::kRunning) job->cancel();
  }
  ready_.notify_all();
  for (auto& t : workers_) t.join();
}

std::shared_ptr<Job> JobQueue::submit(const std::string& id, Work work) {
  auto job = std::make_shared<Job>(id);
  {
    std::lock_guard lock(mutex_);
    if (stopping_) throw ContractError("job queue is shutting down");
    if (!jobs_.emplace(id, job).second) throw ContractError("duplicate job id " + id);
    pending_.emplace_back(job, std::move(work));
  }
  ready_.notify_one();
  return job;
}

std::shared_ptr<Job> JobQueue::reject(const std::string& id, const std::string& reason) {
  auto job = std::make_shared<Job>(id);
  job->fail(reason);
  std::lock_guard lock(mutex_);
  if (!jobs_.emplace(id, job).second) throw ContractError("duplicate job id " + id);
  return job;
}

std::shared_ptr<Job> JobQueue::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  return it == jobs_.end() ? nullptr : it->second;
}

void JobQueue::run() {
  for (;;) {
    std::shared_ptr<Job> job;
    Work work;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
      if (pending_.empty()) return;
      std::tie(job, work) = std::move(pending_.front());
      pending_.pop_front();
    }
    if (!job->start()) continue;  // cancelled while queued
    try {
      job->finish(work(*job));
    } catch (const CancelledError&) {
      job->fail(kCancelledReason);
    } catch (const std::exception& e) {
      job->fail(e.what());
    }
  }
}

}  // namespace mf::service
