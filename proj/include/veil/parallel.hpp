#pragma once

#include <cstdint>
#include <functional>

namespace veil {

/// Worker count for internal data parallelism. Defaults to the hardware
/// concurrency, capped by the VEIL_THREADS environment variable.
int num_threads();
void set_num_threads(int n);

/// Runs fn(i) for i in [0, n). Each index must write disjoint outputs so the
/// result does not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace veil
