#include "avword/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace avword {

namespace {

class Pool {
 public:
  Pool() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("AVWORD_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1 && static_cast<std::size_t>(v) < n)
        n = static_cast<std::size_t>(v);
    }
    workers_ = n;
    for (std::size_t i = 1; i < n; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t workers() const { return workers_; }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t nchunks = workers_ < n ? workers_ : n;
    if (nchunks <= 1 || threads_.empty()) {
      fn(0, n);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_ = &fn;
      job_n_ = n;
      job_chunks_ = nchunks;
      next_chunk_ = 0;
      pending_ = nchunks;
      ++generation_;
    }
    cv_.notify_all();
    // the submitting thread participates
    drain();
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void drain() {
    while (true) {
      std::size_t chunk;
      const std::function<void(std::size_t, std::size_t)>* fn;
      std::size_t n, chunks;
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (job_ == nullptr || next_chunk_ >= job_chunks_) return;
        chunk = next_chunk_++;
        fn = job_;
        n = job_n_;
        chunks = job_chunks_;
      }
      run_chunk(*fn, chunk, n, chunks);
      std::unique_lock<std::mutex> lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    while (true) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] {
          return stopping_ || (job_ != nullptr && generation_ != seen &&
                               next_chunk_ < job_chunks_);
        });
        if (stopping_) return;
        seen = generation_;
      }
      drain();
    }
  }

  static void run_chunk(const std::function<void(std::size_t, std::size_t)>& fn,
                        std::size_t chunk, std::size_t n, std::size_t chunks) {
    std::size_t base = n / chunks, rem = n % chunks;
    std::size_t begin = chunk * base + (chunk < rem ? chunk : rem);
    std::size_t len = base + (chunk < rem ? 1 : 0);
    fn(begin, begin + len);
  }

  std::vector<std::thread> threads_;
  std::size_t workers_ = 1;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0, job_chunks_ = 0, next_chunk_ = 0, pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stopping_ = false;
};

Pool& pool() {
  static Pool p;
  return p;
}

}  // namespace

std::size_t worker_count() { return pool().workers(); }

void parallel_for_chunked(std::size_t n,
                          const std::function<void(std::size_t, std::size_t)>& fn) {
  pool().run(n, fn);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  pool().run(n, [&fn](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace avword
