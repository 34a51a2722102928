#pragma once

#include <cstddef>
#include <functional>

namespace pf {

// 0 = auto (hardware concurrency).
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Each index writes only its own output slots, so
// results are independent of the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pf
