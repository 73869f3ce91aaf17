#pragma once

#include <cstddef>
#include <functional>

namespace perm {

/// Worker cap: PERM_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Overrides PERM_THREADS for the current process (0 restores the default).
void set_worker_count(std::size_t n);

/// Runs body(i) for i in [0, n), split into contiguous blocks across workers.
/// Each index must write only to its own output slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace perm
