#pragma once

#include <cstddef>
#include <functional>

namespace dmm {

/// fn(0..n-1), possibly on several threads. Callers own any ordering concerns:
/// results must be written to per-index slots and reduced in index order. The
/// first exception thrown by any call is rethrown after all threads join.
void run_indexed(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace dmm
