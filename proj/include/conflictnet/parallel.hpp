// Minimal fixed-size thread pool with a static-partition parallel_for.
//
// Work items are split into contiguous ranges; each output element is owned
// by exactly one range, so results never depend on the thread count.
#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace conflictnet {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(default_threads());
    return pool;
  }

  explicit ThreadPool(std::size_t n) : size_(std::max<std::size_t>(1, n)) {
    for (std::size_t i = 1; i < size_; ++i) workers_.emplace_back([this, i] { loop(i); });
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t size() const noexcept { return size_; }

  /// Calls fn(begin, end) over a static partition of [0, n).
  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t parts = std::min(size_, n);
    if (parts == 1) {
      fn(0, n);
      return;
    }
    std::unique_lock call_lock(call_mu_);
    {
      std::lock_guard lock(mu_);
      job_ = &fn;
      job_n_ = n;
      job_parts_ = parts;
      pending_ = parts - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0, chunk_end(0, n, parts));
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  static std::size_t default_threads() {
    if (const char* env = std::getenv("CONFLICTNET_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return static_cast<std::size_t>(v);
    }
    const auto hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : std::min<std::size_t>(hw, 16);
  }

  static std::size_t chunk_end(std::size_t part, std::size_t n, std::size_t parts) {
    return (part + 1) * n / parts;
  }

  void loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t, std::size_t)>* job = nullptr;
      std::size_t n = 0, parts = 0;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
        n = job_n_;
        parts = job_parts_;
      }
      if (index < parts) {
        (*job)(index * n / parts, chunk_end(index, n, parts));
        std::lock_guard lock(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::size_t size_;
  std::vector<std::thread> workers_;
  std::mutex call_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0;
  std::size_t job_parts_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::function<void(std::size_t, std::size_t)> wrapped = [&fn](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  };
  ThreadPool::instance().run(n, wrapped);
}

}  // namespace conflictnet
