// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference kernels against the OpenMP versions and checks
// they agree bitwise. Usage: wmoe_bench [threads] [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "wmoe/kernels.hpp"
#include "wmoe/rng.hpp"

using namespace wmoe;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : kernels::hardware_threads();
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 20;

  std::printf("kernel benchmark: serial reference vs OpenMP (%d threads), %d repeats\n", threads,
              repeats);
  std::printf("%-28s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms", "speedup", "bitwise");

  auto report = [&](const char* name, double serial, double omp, bool equal) {
    std::printf("%-28s %10.3f %10.3f %8.2fx %s\n", name, serial, omp, serial / omp,
                equal ? "ok" : "MISMATCH");
  };

  {
    const int m = 512, k = 512, n = 512;
    const auto a = random_vec(static_cast<std::size_t>(m) * k, 1);
    const auto b = random_vec(static_cast<std::size_t>(k) * n, 2);
    std::vector<double> c_ref(static_cast<std::size_t>(m) * n), c_omp(c_ref.size());
    kernels::set_max_threads(1);
    const double t_ref =
        time_ms([&] { kernels::matmul_ref(a.data(), b.data(), c_ref.data(), m, k, n); }, repeats);
    kernels::set_max_threads(threads);
    const double t_omp =
        time_ms([&] { kernels::matmul(a.data(), b.data(), c_omp.data(), m, k, n); }, repeats);
    report("matmul 512x512x512", t_ref, t_omp, bit_equal(c_ref, c_omp));
  }
  {
    const int H = 128, W = 128, C = 64;
    const auto f = random_vec(static_cast<std::size_t>(H) * W * C, 3);
    std::vector<double> out_ref(f.size()), out_omp(f.size());
    kernels::set_max_threads(1);
    const double t_ref = time_ms(
        [&] { kernels::haar_band_ref(f.data(), out_ref.data(), H, W, C, -1, +1, -1); }, repeats);
    kernels::set_max_threads(threads);
    const double t_omp = time_ms(
        [&] { kernels::haar_band(f.data(), out_omp.data(), H, W, C, -1, +1, -1); }, repeats);
    report("haar_band 128x128x64", t_ref, t_omp, bit_equal(out_ref, out_omp));
  }
  {
    const int H = 128, W = 128, C = 64;
    const auto f = random_vec(static_cast<std::size_t>(H) * W * C, 4);
    std::vector<double> out_ref(f.size()), out_omp(f.size());
    kernels::set_max_threads(1);
    const double t_ref =
        time_ms([&] { kernels::mean3x3_ref(f.data(), out_ref.data(), H, W, C); }, repeats);
    kernels::set_max_threads(threads);
    const double t_omp =
        time_ms([&] { kernels::mean3x3(f.data(), out_omp.data(), H, W, C); }, repeats);
    report("mean3x3 128x128x64", t_ref, t_omp, bit_equal(out_ref, out_omp));
  }
  {
    const int H = 64, W = 64, h = 512, w = 512;
    const auto src = random_vec(static_cast<std::size_t>(H) * W, 5);
    std::vector<double> d_ref(static_cast<std::size_t>(h) * w), d_omp(d_ref.size());
    kernels::set_max_threads(1);
    const double t_ref = time_ms(
        [&] { kernels::upsample_bilinear_ref(src.data(), H, W, d_ref.data(), h, w); }, repeats);
    kernels::set_max_threads(threads);
    const double t_omp = time_ms(
        [&] { kernels::upsample_bilinear(src.data(), H, W, d_omp.data(), h, w); }, repeats);
    report("upsample 64->512", t_ref, t_omp, bit_equal(d_ref, d_omp));
  }
  return 0;
}
