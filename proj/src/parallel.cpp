// SPDX-License-Identifier: Apache-2.0
#include "denscal/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>

namespace denscal {

int thread_count() {
  int n = omp_get_max_threads();
  if (const char* env = std::getenv("DENSCAL_THREADS")) {
    try {
      int cap = std::stoi(env);
      if (cap > 0) n = std::min(n, cap);
    } catch (...) {
      // unparsable value: ignore the cap
    }
  }
  return std::max(n, 1);
}

}  // namespace denscal
