#include <benchmark/benchmark.h>

// The packaged benchmark_main archive carries LTO bytecode tied to another compiler release.
BENCHMARK_MAIN();
