#pragma once

#include <cstdlib>
#include <string_view>

#if defined(__linux__)
#include <unistd.h>
#endif

// Dynamic-arch OpenBLAS builds pick their kernels in a load-time constructor,
// from CPU detection tables that may predate the host CPU. On unrecognized
// AVX-512 hosts they fall back to generic SSE2 kernels, a 4x+ GEMM slowdown.
// The selection can only be steered through OPENBLAS_CORETYPE, which must be
// in the environment before the library loads, so the fixup re-execs the
// process once with the variable set. An explicit OPENBLAS_CORETYPE wins.

extern "C" char* openblas_get_corename(void);

namespace gcae {

// Call first thing in main(), passing its argv. Returns normally when the
// kernel selection is already good (or not fixable); otherwise does not
// return (the process is replaced by its re-exec).
inline void ensure_blas_kernel(char** argv) {
#if defined(__linux__) && defined(__x86_64__)
    if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
    if (!__builtin_cpu_supports("avx512f")) return;
    const char* core = openblas_get_corename();
    if (core == nullptr || std::string_view(core) != "Prescott") return;
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    execv("/proc/self/exe", argv);
    // exec failed: keep running on the slow kernels
#else
    (void)argv;
#endif
}

}  // namespace gcae
