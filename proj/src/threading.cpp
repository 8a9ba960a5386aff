#include "lptn/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace lptn {
namespace {

thread_local bool t_in_worker = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int size() {
    std::lock_guard<std::mutex> lk(control_);
    return nthreads_;
  }

  void resize(int n) {
    n = std::max(1, n);
    std::lock_guard<std::mutex> lk(control_);
    stop_workers();
    nthreads_ = n;
    start_workers();
  }

  void run(std::int64_t begin, std::int64_t end, std::int64_t grain,
           const std::function<void(std::int64_t, std::int64_t)>& body) {
    const std::int64_t range = end - begin;
    if (range <= 0) return;
    std::lock_guard<std::mutex> lk(control_);
    std::int64_t chunks = std::min<std::int64_t>(nthreads_, (range + grain - 1) / grain);
    chunks = std::max<std::int64_t>(1, chunks);
    if (chunks == 1 || workers_.empty()) {
      body(begin, end);
      return;
    }
    const std::int64_t per = (range + chunks - 1) / chunks;
    {
      std::lock_guard<std::mutex> jlk(job_mutex_);
      job_body_ = &body;
      job_begin_ = begin;
      job_end_ = end;
      job_per_ = per;
      job_chunks_ = chunks;
      pending_.store(static_cast<int>(chunks - 1), std::memory_order_relaxed);
      ++generation_;
    }
    job_cv_.notify_all();
    // chunk 0 runs on the calling thread
    body(begin, std::min(end, begin + per));
    std::unique_lock<std::mutex> dlk(done_mutex_);
    done_cv_.wait(dlk, [&] { return pending_.load(std::memory_order_acquire) == 0; });
  }

 private:
  Pool() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("LPTN_THREADS")) {
      const int parsed = std::atoi(env);
      if (parsed > 0) n = parsed;
    }
    nthreads_ = n;
    start_workers();
  }

  ~Pool() { stop_workers(); }

  void start_workers() {
    quit_ = false;
    for (int i = 1; i < nthreads_; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> jlk(job_mutex_);
      quit_ = true;
      ++generation_;
    }
    job_cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
  }

  void worker_loop(int index) {
    t_in_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
      std::int64_t lo = 0, hi = 0;
      {
        std::unique_lock<std::mutex> jlk(job_mutex_);
        job_cv_.wait(jlk, [&] { return quit_ || generation_ != seen; });
        seen = generation_;
        if (quit_) return;
        if (index >= job_chunks_) {
          continue;  // no chunk for this worker in the current job
        }
        body = job_body_;
        lo = job_begin_ + index * job_per_;
        hi = std::min(job_end_, lo + job_per_);
      }
      if (body && lo < hi) (*body)(lo, hi);
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> dlk(done_mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::mutex control_;  // serializes parallel_for callers and resize
  int nthreads_ = 1;
  std::vector<std::thread> workers_;

  std::mutex job_mutex_;
  std::condition_variable job_cv_;
  bool quit_ = false;
  std::uint64_t generation_ = 0;
  const std::function<void(std::int64_t, std::int64_t)>* job_body_ = nullptr;
  std::int64_t job_begin_ = 0, job_end_ = 0, job_per_ = 0, job_chunks_ = 0;

  std::mutex done_mutex_;
  std::condition_variable done_cv_;
  std::atomic<int> pending_{0};
};

}  // namespace

int num_threads() { return Pool::instance().size(); }

void set_num_threads(int n) { Pool::instance().resize(n); }

void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (end <= begin) return;
  if (t_in_worker) {  // no nested parallelism
    body(begin, end);
    return;
  }
  Pool::instance().run(begin, end, std::max<std::int64_t>(1, grain), body);
}

}  // namespace lptn
