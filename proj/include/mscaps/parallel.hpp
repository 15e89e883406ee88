#pragma once

#include <cstddef>
#include <functional>

namespace mscaps {

/// Splits [0, n) into contiguous chunks, one per worker, and joins. The
/// first exception thrown by a worker is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& body);

/// --threads fallback: MSCAPS_THREADS, else 1.
std::size_t threads_from_env();

}  // namespace mscaps
