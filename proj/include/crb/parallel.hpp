#pragma once

#include <cstddef>
#include <functional>

namespace crb {

// Process-wide parallelism budget consumed by the parallel sections below.
// Defaults to 1; the CLI sets it from --threads / CRB_THREADS.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs body(i) for i in [0, n). Each index must write only its own output
// slot, so results never depend on scheduling. Falls back to a plain loop for
// small n or a single-thread budget.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t min_parallel = 512);

}  // namespace crb
