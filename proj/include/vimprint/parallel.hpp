#pragma once

#include <cstddef>
#include <functional>

namespace vimprint {

/// Worker count to use: `requested` when positive, else the VIMPRINT_WORKERS
/// environment variable, else 1.
int resolve_workers(int requested);

/// Runs body(i) for i in [0, count) on up to `workers` threads. Each index is
/// visited exactly once; callers write results into per-index slots and reduce
/// them in index order afterwards, so output never depends on `workers`.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

}  // namespace vimprint
