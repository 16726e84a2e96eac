#include "igs/parallel.hpp"

#include <sched.h>

#include <cstdlib>
#include <string>

namespace igs {

std::size_t worker_count() {
  if (const char* env = std::getenv("IGS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  // CPUs this process may run on; hardware_concurrency ignores affinity masks.
  cpu_set_t set;
  if (sched_getaffinity(0, sizeof set, &set) == 0) {
    const int n = CPU_COUNT(&set);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace igs
