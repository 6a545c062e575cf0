#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

// Deterministic work splitting. Work of size n is cut into fixed chunks of
// `chunk_size`; each chunk is processed sequentially by whichever thread
// claims it, writing only into per-chunk storage; callers then reduce the
// chunks in index order. Because the chunk boundaries and the reduction
// order depend only on (n, chunk_size), results are bit-identical for any
// thread count, including jobs == 1.

namespace stepfill {

inline std::size_t num_chunks(std::size_t n, std::size_t chunk_size) {
  if (chunk_size == 0) chunk_size = 1;
  return (n + chunk_size - 1) / chunk_size;
}

// fn(chunk_index, begin, end) must not touch shared mutable state.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk_size, int jobs, Fn&& fn) {
  if (n == 0) return;
  if (chunk_size == 0) chunk_size = 1;
  std::size_t chunks = num_chunks(n, chunk_size);
  auto run_chunk = [&](std::size_t ci) {
    std::size_t b = ci * chunk_size;
    std::size_t e = b + chunk_size;
    if (e > n) e = n;
    fn(ci, b, e);
  };
  if (jobs <= 1 || chunks == 1) {
    for (std::size_t ci = 0; ci < chunks; ++ci) run_chunk(ci);
    return;
  }
  std::size_t workers = static_cast<std::size_t>(jobs);
  if (workers > chunks) workers = chunks;
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      for (;;) {
        std::size_t ci = next.fetch_add(1);
        if (ci >= chunks) return;
        run_chunk(ci);
      }
    });
  }
  for (auto& t : threads) t.join();
}

constexpr std::size_t kDefaultChunkSize = 64;

}  // namespace stepfill
