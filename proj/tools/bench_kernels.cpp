// Times the OpenMP kernels against their serial references and checks the
// outputs are bit-identical. Run manually:
//   build/tools/snapstack-bench [repeats]

#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>

#include <omp.h>

#include "snapstack/kernels.hpp"
#include "snapstack/rng.hpp"
#include "snapstack/threads.hpp"

using namespace snapstack;

namespace {

struct Case {
    const char* name;
    std::function<Tensor()> parallel;
    std::function<Tensor()> reference;
};

void run(const Case& c, int repeats) {
    Tensor warm_p = c.parallel();
    Tensor warm_s = c.reference();
    const bool identical =
        warm_p.size() == warm_s.size() &&
        std::memcmp(warm_p.data(), warm_s.data(), warm_p.size() * sizeof(double)) == 0;

    double tp = 1e300, ts = 1e300;
    for (int r = 0; r < repeats; ++r) {
        double t0 = omp_get_wtime();
        c.parallel();
        tp = std::min(tp, omp_get_wtime() - t0);
        t0 = omp_get_wtime();
        c.reference();
        ts = std::min(ts, omp_get_wtime() - t0);
    }
    std::cout << std::left << std::setw(24) << c.name << std::right << std::fixed
              << std::setprecision(1) << std::setw(9) << ts * 1e3 << " ms" << std::setw(9)
              << tp * 1e3 << " ms" << std::setw(7) << std::setprecision(2) << ts / tp << "x  "
              << (identical ? "bit-identical" : "MISMATCH") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;

    Rng rng(42);
    const Tensor a = Tensor::uniform({384, 384}, -1, 1, rng);
    const Tensor b = Tensor::uniform({384, 384}, -1, 1, rng);
    const Tensor x = Tensor::uniform({8, 56, 56, 32}, -1, 1, rng);
    const Tensor k = Tensor::uniform({3, 3, 32, 64}, -1, 1, rng);
    const Tensor bias = Tensor::zeros({64});
    const Tensor gout = Tensor::uniform({8, 54, 54, 64}, -1, 1, rng);

    std::cout << "threads: " << omp_get_max_threads() << "   (serial vs OpenMP, best of "
              << repeats << ")\n";
    std::cout << std::left << std::setw(24) << "kernel" << std::right << std::setw(12) << "serial"
              << std::setw(12) << "parallel" << std::setw(8) << "speedup" << "  check\n";

    run({"matmul 384^3", [&] { return kernels::matmul(a, b); },
         [&] { return serial::matmul(a, b); }},
        repeats);
    run({"conv2d fwd 56x56x32->64", [&] { return kernels::conv2d_forward(x, k, bias); },
         [&] { return serial::conv2d_forward(x, k, bias); }},
        repeats);
    run({"conv2d grad_input", [&] { return kernels::conv2d_grad_input(gout, k, 56, 56); },
         [&] { return serial::conv2d_grad_input(gout, k, 56, 56); }},
        repeats);
    run({"conv2d grad_kernel", [&] { return kernels::conv2d_grad_kernel(x, gout, 3, 3); },
         [&] { return serial::conv2d_grad_kernel(x, gout, 3, 3); }},
        repeats);
    run({"maxpool 2x2", [&] { return kernels::maxpool2x2_forward(x); },
         [&] { return serial::maxpool2x2_forward(x); }},
        repeats);
    run({"global_avg_pool", [&] { return kernels::global_avg_pool(x); },
         [&] { return serial::global_avg_pool(x); }},
        repeats);
    return 0;
}
