#pragma once

namespace snapstack {

// Worker-thread cap from the SNAPSTACK_THREADS environment variable.
// Returns 0 when the variable is unset or unparsable (meaning: leave the
// OpenMP default alone).
int thread_cap_from_env();

// Applies the cap to the OpenMP runtime. Entry points (CLI, benchmark,
// acceptance suite) call this once at startup. Kernel results do not depend
// on the thread count, so this only affects speed.
void apply_thread_cap();

}  // namespace snapstack
