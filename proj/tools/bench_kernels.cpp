// Benchmarks the serial reference matmul against the OpenMP kernel and, on
// top of them, the phi1 transform and an LM forward pass. Verifies that the
// parallel kernel reproduces the serial result bit for bit before timing.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "seplab/kernels.hpp"
#include "seplab/lm.hpp"
#include "seplab/numerics.hpp"

using namespace seplab;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int repeats) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    fn();
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    best = std::min(best, ms);
  }
  return best;
}

void bench_matmul(std::size_t n, int threads, int repeats) {
  Rng rng(n);
  const Matrix a = random_normal(n, n, rng);
  const Matrix b = random_normal(n, n, rng);
  const Matrix serial_result = mat_mul_serial(a, b);
  const Matrix parallel_result = mat_mul_parallel(a, b, threads);
  const bool identical = bitwise_equal(serial_result, parallel_result);
  const double serial_ms = time_ms([&] { mat_mul_serial(a, b); }, repeats);
  const double parallel_ms = time_ms([&] { mat_mul_parallel(a, b, threads); }, repeats);
  std::printf("matmul %4zux%-4zu  serial %9.3f ms  omp(%d) %9.3f ms  speedup %5.2fx  bitwise %s\n",
              n, n, serial_ms, threads, parallel_ms, serial_ms / parallel_ms,
              identical ? "equal" : "DIFFER");
}

void bench_phi1(std::size_t n, int threads, int repeats) {
  Rng rng(n + 1);
  Matrix p = random_normal(n, n, rng);
  p = scale(p, 1.5 / spectral_norm_bound(p));
  set_kernel_threads(1);
  const double serial_ms = time_ms([&] { phi1(p); }, repeats);
  const Matrix serial_result = phi1(p);
  set_kernel_threads(threads);
  const double parallel_ms = time_ms([&] { phi1(p); }, repeats);
  const Matrix parallel_result = phi1(p);
  set_kernel_threads(1);
  std::printf("phi1   %4zux%-4zu  serial %9.3f ms  omp(%d) %9.3f ms  speedup %5.2fx  bitwise %s\n",
              n, n, serial_ms, threads, parallel_ms, serial_ms / parallel_ms,
              bitwise_equal(serial_result, parallel_result) ? "equal" : "DIFFER");
}

void bench_forward(int threads, int repeats) {
  lm::LmConfig cfg;
  cfg.vocab_size = 512;
  cfg.sep_mode = sep::Mode::kStructured;
  lm::LmModel model(cfg);
  Rng rng(3);
  std::vector<int> tokens(cfg.ctx_len);
  for (auto& t : tokens) t = static_cast<int>(rng.uniform_index(cfg.vocab_size));
  set_kernel_threads(1);
  const double serial_ms = time_ms([&] { lm::forward(model, tokens); }, repeats);
  const Matrix serial_result = lm::forward(model, tokens);
  set_kernel_threads(threads);
  const double parallel_ms = time_ms([&] { lm::forward(model, tokens); }, repeats);
  const Matrix parallel_result = lm::forward(model, tokens);
  set_kernel_threads(1);
  std::printf(
      "lm fwd  d=%zu L=%zu  serial %9.3f ms  omp(%d) %9.3f ms  speedup %5.2fx  bitwise %s\n",
      cfg.d_model, cfg.n_layers, serial_ms, threads, parallel_ms, serial_ms / parallel_ms,
      bitwise_equal(serial_result, parallel_result) ? "equal" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 4;
  int repeats = 3;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
    if (arg == "--repeats" && i + 1 < argc) repeats = std::atoi(argv[++i]);
    if (arg == "--quick") quick = true;
  }
  std::printf("serial reference vs OpenMP row-partitioned kernels (threads=%d)\n", threads);
  for (const std::size_t n :
       quick ? std::vector<std::size_t>{64, 128} : std::vector<std::size_t>{64, 128, 256, 512}) {
    bench_matmul(n, threads, repeats);
  }
  for (const std::size_t n :
       quick ? std::vector<std::size_t>{64} : std::vector<std::size_t>{64, 128}) {
    bench_phi1(n, threads, repeats);
  }
  bench_forward(threads, repeats);
  return 0;
}
