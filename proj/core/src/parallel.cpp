#include "ift/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace ift {

namespace {

std::atomic<int> g_max_threads{0};  // 0 = auto

int resolve_threads() {
  int n = g_max_threads.load(std::memory_order_relaxed);
  if (n > 0) return n;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Minimal persistent pool: tasks are (range -> void) closures indexed by
// worker slot. Avoids per-call thread spawn cost in hot GEMM loops.
class Pool {
public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int workers, int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    std::unique_lock<std::mutex> lk(mu_);
    ensure_workers(workers - 1);
    job_fn_ = &fn;
    job_n_ = n;
    job_workers_ = workers;
    pending_ = workers - 1;
    ++generation_;
    cv_start_.notify_all();
    lk.unlock();

    run_slice(0);

    lk.lock();
    cv_done_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  void run_slice(int slot) {
    const int64_t chunk = (job_n_ + job_workers_ - 1) / job_workers_;
    const int64_t begin = std::min<int64_t>(job_n_, slot * chunk);
    const int64_t end = std::min<int64_t>(job_n_, begin + chunk);
    if (begin < end) (*job_fn_)(begin, end);
  }

private:
  Pool() = default;
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
      cv_start_.notify_all();
    }
    for (auto& t : threads_) t.join();
  }

  void ensure_workers(int n) {
    while (static_cast<int>(threads_.size()) < n) {
      int slot = static_cast<int>(threads_.size()) + 1;
      threads_.emplace_back([this, slot] { worker_loop(slot); });
    }
  }

  void worker_loop(int slot) {
    uint64_t seen = 0;
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      if (slot >= job_workers_) continue;
      lk.unlock();
      run_slice(slot);
      lk.lock();
      if (--pending_ == 0) cv_done_.notify_all();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_start_, cv_done_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int job_workers_ = 1;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace

int max_threads() { return resolve_threads(); }

void set_max_threads(int n) { g_max_threads.store(n, std::memory_order_relaxed); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int workers = std::min<int64_t>(resolve_threads(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  Pool::instance().run(workers, n, fn);
}

}  // namespace ift
