#pragma once

#include <cstdint>
#include <functional>

namespace mesp {

// Upper bound on worker threads for intra-op loops. 0 or 1 means serial.
// Defaults to the MESP_THREADS environment variable (serial when unset).
int max_threads();
void set_max_threads(int n);

// Runs body(i) for i in [0, n). Each index is processed by exactly one
// thread and writes disjoint outputs, so results never depend on the
// thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace mesp
