#include "pean/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>

namespace pean {

int thread_count() {
  static const int n = [] {
    if (const char* e = std::getenv("PEAN_THREADS")) {
      const int v = std::atoi(e);
      if (v > 0) return v;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
  }();
  return n;
}

void init_runtime() {
#ifdef _OPENMP
  omp_set_num_threads(thread_count());
  omp_set_dynamic(0);
#endif
}

}  // namespace pean
