#pragma once

#include <functional>

namespace hetpure {

/// Worker count: min(hardware_concurrency, HETPURE_THREADS when set).
int worker_count();

/// Runs fn(0..n-1) on the worker pool; blocks until done. Exceptions from
/// tasks are rethrown (first one wins). Callers must make tasks independent.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace hetpure
