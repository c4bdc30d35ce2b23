#include "snapstack/threads.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace snapstack {

int thread_cap_from_env() {
    const char* v = std::getenv("SNAPSTACK_THREADS");
    if (!v || !*v) return 0;
    try {
        const int n = std::stoi(v);
        return n >= 1 ? n : 0;
    } catch (...) {
        return 0;
    }
}

void apply_thread_cap() {
#ifdef _OPENMP
    if (const int cap = thread_cap_from_env(); cap > 0) omp_set_num_threads(cap);
#endif
}

}  // namespace snapstack
