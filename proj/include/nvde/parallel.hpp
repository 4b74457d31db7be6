#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace nvde {

// Worker count: NVDE_THREADS caps it, hardware_concurrency is the default.
inline int max_threads() {
  static int cached = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("NVDE_THREADS")) {
      int req = std::atoi(env);
      if (req >= 1) return std::min(req, 256);
    }
    return hw;
  }();
  return cached;
}

namespace detail {

// Fork-join pool with fixed strided task assignment: invocation i of a
// generation is owned by exactly one executor, determined only by i and the
// executor count, so no work is ever shared or stolen across generations.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(max_threads() - 1);
    return pool;
  }

  int executors() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs task(0..ways-1), blocking until all complete. The calling thread
  // executes the stride starting at 0.
  void run(int ways, const std::function<void(int)>& task) {
    int ex = executors();
    if (ways <= 1 || ex == 1) {
      for (int i = 0; i < ways; ++i) task(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      task_ = &task;
      ways_ = ways;
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    for (int i = 0; i < ways; i += ex) task(i);
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    task_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  explicit ThreadPool(int n) {
    for (int i = 0; i < n; ++i) workers_.emplace_back([this, i] { worker_loop(i); });
  }

  void worker_loop(int id) {
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int)>* task = nullptr;
      int ways = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        task = task_;
        ways = ways_;
      }
      if (task) {
        int ex = executors();
        for (int i = id + 1; i < ways; i += ex) (*task)(i);
      }
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* task_ = nullptr;
  int ways_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

// Splits [0,n) into fixed chunks and runs fn(begin,end) on the pool. Chunk
// boundaries depend only on n and grain, never on the worker count, and each
// output element is written by exactly one chunk, so results are
// bit-reproducible for any NVDE_THREADS setting.
template <typename F>
void parallel_for(int64_t n, F&& fn, int64_t grain = 16384) {
  if (n <= 0) return;
  int threads = max_threads();
  if (threads <= 1 || n < 2 * grain) {
    fn(int64_t(0), n);
    return;
  }
  int64_t chunks = (n + grain - 1) / grain;
  int ways = static_cast<int>(std::min<int64_t>(chunks, threads * 4));
  int64_t per = (n + ways - 1) / ways;
  detail::ThreadPool::instance().run(ways, [&](int w) {
    int64_t b = w * per;
    int64_t e = std::min<int64_t>(n, b + per);
    if (b < e) fn(b, e);
  });
}

namespace detail {
template <typename T>
T pairwise_sum_serial(const T* p, int64_t n) {
  if (n <= 32) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  int64_t half = n / 2;
  return pairwise_sum_serial(p, half) + pairwise_sum_serial(p + half, n - half);
}
}  // namespace detail

// Deterministic reduction: pairwise tree over fixed 65536-element blocks,
// block partials combined pairwise in block order.
template <typename T>
T deterministic_sum(const T* p, int64_t n) {
  constexpr int64_t kBlock = 65536;
  if (n <= kBlock) return detail::pairwise_sum_serial(p, n);
  int64_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<T> partial(static_cast<size_t>(blocks));
  parallel_for(
      blocks,
      [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b) {
          int64_t begin = b * kBlock;
          partial[static_cast<size_t>(b)] =
              detail::pairwise_sum_serial(p + begin, std::min(kBlock, n - begin));
        }
      },
      1);
  return detail::pairwise_sum_serial(partial.data(), blocks);
}

}  // namespace nvde
