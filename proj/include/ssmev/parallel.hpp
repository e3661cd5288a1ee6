#pragma once

#include <cstddef>
#include <functional>

namespace ssmev::parallel {

// Number of worker threads used when a caller passes threads == 0.
// Defaults to std::thread::hardware_concurrency().
std::size_t default_threads();
void set_default_threads(std::size_t n);

// Runs body(begin, end) over [0, n) split into chunks of at most `grain`
// indices. Chunks are claimed from a shared atomic counter so idle threads
// pick up remaining work. The partition depends only on n and grain, never on
// the thread count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t threads = 0);

}  // namespace ssmev::parallel
