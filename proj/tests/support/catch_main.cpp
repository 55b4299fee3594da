// Custom test entry point: fixes the BLAS kernel selection (may re-exec)
// before any test runs.
#include <catch2/catch_amalgamated.hpp>

#include "gcae/runtime.hpp"

int main(int argc, char* argv[]) {
    gcae::ensure_blas_kernel(argv);
    return Catch::Session().run(argc, argv);
}
