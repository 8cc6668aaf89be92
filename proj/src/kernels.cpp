// SPDX-License-Identifier: Apache-2.0
#include "wmoe/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmoe::kernels {

namespace {
std::atomic<int> g_max_threads{1};

// Work below this many output elements is not worth forking threads for.
constexpr long kParallelGrain = 4096;

inline int threads_for(long work) {
  const int t = g_max_threads.load(std::memory_order_relaxed);
  if (t <= 1 || work < kParallelGrain) return 1;
  return t;
}
}  // namespace

int max_threads() { return g_max_threads.load(std::memory_order_relaxed); }

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// ---------------------------------------------------------------------------
// matmul family. Row i of the output is one unit of work; the (k, j) inner
// order is shared by the _ref and OMP paths so summation order per element
// never changes.

namespace {
inline void matmul_row(const double* a, const double* b, double* c, int k, int n, int i) {
  double* crow = c + static_cast<long>(i) * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a + static_cast<long>(i) * k;
  for (int kk = 0; kk < k; ++kk) {
    const double aik = arow[kk];
    const double* brow = b + static_cast<long>(kk) * n;
    for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int k, int n, int i) {
  const double* arow = a + static_cast<long>(i) * k;
  double* crow = c + static_cast<long>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<long>(j) * k;
    double acc = 0.0;
    for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
    crow[j] = acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, int k, int m, int n,
                          int i) {
  double* crow = c + static_cast<long>(i) * n;
  std::fill(crow, crow + n, 0.0);
  for (int kk = 0; kk < k; ++kk) {
    const double aki = a[static_cast<long>(kk) * m + i];
    const double* brow = b + static_cast<long>(kk) * n;
    for (int j = 0; j < n; ++j) crow[j] += aki * brow[j];
  }
}
}  // namespace

void matmul_ref(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  const int nt = threads_for(static_cast<long>(m) * k * n);
  if (nt == 1) {
    matmul_ref(a, b, c, m, k, n);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul_nt_ref(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, k, n, i);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  const int nt = threads_for(static_cast<long>(m) * k * n);
  if (nt == 1) {
    matmul_nt_ref(a, b, c, m, k, n);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, k, n, i);
}

void matmul_tn_ref(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, k, m, n, i);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  const int nt = threads_for(static_cast<long>(m) * k * n);
  if (nt == 1) {
    matmul_tn_ref(a, b, c, m, k, n);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, k, m, n, i);
}

// ---------------------------------------------------------------------------
// Haar band. Replicate padding clamps the +1 neighbor at the grid edge.

namespace {
inline void haar_band_pixel(const double* f, double* out, int H, int W, int C, int sb, int sc,
                            int sd, int i, int j) {
  const int i1 = std::min(i + 1, H - 1);
  const int j1 = std::min(j + 1, W - 1);
  const double* pa = f + (static_cast<long>(i) * W + j) * C;
  const double* pb = f + (static_cast<long>(i) * W + j1) * C;
  const double* pc = f + (static_cast<long>(i1) * W + j) * C;
  const double* pd = f + (static_cast<long>(i1) * W + j1) * C;
  double* po = out + (static_cast<long>(i) * W + j) * C;
  for (int ch = 0; ch < C; ++ch) {
    po[ch] = (pa[ch] + sb * pb[ch] + sc * pc[ch] + sd * pd[ch]) * 0.25;
  }
}
}  // namespace

void haar_band_ref(const double* f, double* out, int H, int W, int C, int sb, int sc, int sd) {
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) haar_band_pixel(f, out, H, W, C, sb, sc, sd, i, j);
}

void haar_band(const double* f, double* out, int H, int W, int C, int sb, int sc, int sd) {
  const int nt = threads_for(static_cast<long>(H) * W * C);
  if (nt == 1) {
    haar_band_ref(f, out, H, W, C, sb, sc, sd);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) haar_band_pixel(f, out, H, W, C, sb, sc, sd, i, j);
}

void haar_band_adjoint(const double* g, double* gf, int H, int W, int C, int sb, int sc,
                       int sd) {
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const int i1 = std::min(i + 1, H - 1);
      const int j1 = std::min(j + 1, W - 1);
      const double* pg = g + (static_cast<long>(i) * W + j) * C;
      double* ga = gf + (static_cast<long>(i) * W + j) * C;
      double* gb = gf + (static_cast<long>(i) * W + j1) * C;
      double* gc = gf + (static_cast<long>(i1) * W + j) * C;
      double* gd = gf + (static_cast<long>(i1) * W + j1) * C;
      for (int ch = 0; ch < C; ++ch) {
        const double v = pg[ch] * 0.25;
        ga[ch] += v;
        gb[ch] += sb * v;
        gc[ch] += sc * v;
        gd[ch] += sd * v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 3x3 replicate-padded mean.

namespace {
inline void mean3x3_pixel(const double* in, double* out, int H, int W, int C, int i, int j) {
  double* po = out + (static_cast<long>(i) * W + j) * C;
  std::fill(po, po + C, 0.0);
  for (int di = -1; di <= 1; ++di) {
    const int si = std::clamp(i + di, 0, H - 1);
    for (int dj = -1; dj <= 1; ++dj) {
      const int sj = std::clamp(j + dj, 0, W - 1);
      const double* pi = in + (static_cast<long>(si) * W + sj) * C;
      for (int ch = 0; ch < C; ++ch) po[ch] += pi[ch];
    }
  }
  const double inv = 1.0 / 9.0;
  for (int ch = 0; ch < C; ++ch) po[ch] *= inv;
}
}  // namespace

void mean3x3_ref(const double* in, double* out, int H, int W, int C) {
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) mean3x3_pixel(in, out, H, W, C, i, j);
}

void mean3x3(const double* in, double* out, int H, int W, int C) {
  const int nt = threads_for(static_cast<long>(H) * W * C * 9);
  if (nt == 1) {
    mean3x3_ref(in, out, H, W, C);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) mean3x3_pixel(in, out, H, W, C, i, j);
}

// ---------------------------------------------------------------------------
// Align-corners bilinear upsample: corner pixels map exactly to corners.

namespace {
inline void upsample_pixel(const double* src, int H, int W, double* dst, int h, int w, int y,
                           int x) {
  const double sy = (h > 1) ? static_cast<double>(y) * (H - 1) / (h - 1) : 0.0;
  const double sx = (w > 1) ? static_cast<double>(x) * (W - 1) / (w - 1) : 0.0;
  const int y0 = std::min(static_cast<int>(sy), H - 1);
  const int x0 = std::min(static_cast<int>(sx), W - 1);
  const int y1 = std::min(y0 + 1, H - 1);
  const int x1 = std::min(x0 + 1, W - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  const double v00 = src[static_cast<long>(y0) * W + x0];
  const double v01 = src[static_cast<long>(y0) * W + x1];
  const double v10 = src[static_cast<long>(y1) * W + x0];
  const double v11 = src[static_cast<long>(y1) * W + x1];
  dst[static_cast<long>(y) * w + x] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                      fy * ((1 - fx) * v10 + fx * v11);
}
}  // namespace

void upsample_bilinear_ref(const double* src, int H, int W, double* dst, int h, int w) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) upsample_pixel(src, H, W, dst, h, w, y, x);
}

void upsample_bilinear(const double* src, int H, int W, double* dst, int h, int w) {
  const int nt = threads_for(static_cast<long>(h) * w);
  if (nt == 1) {
    upsample_bilinear_ref(src, H, W, dst, h, w);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) upsample_pixel(src, H, W, dst, h, w, y, x);
}

void upsample_bilinear_adjoint(const double* gdst, int h, int w, double* gsrc, int H, int W) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = (h > 1) ? static_cast<double>(y) * (H - 1) / (h - 1) : 0.0;
      const double sx = (w > 1) ? static_cast<double>(x) * (W - 1) / (w - 1) : 0.0;
      const int y0 = std::min(static_cast<int>(sy), H - 1);
      const int x0 = std::min(static_cast<int>(sx), W - 1);
      const int y1 = std::min(y0 + 1, H - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const double fy = sy - y0;
      const double fx = sx - x0;
      const double g = gdst[static_cast<long>(y) * w + x];
      gsrc[static_cast<long>(y0) * W + x0] += (1 - fy) * (1 - fx) * g;
      gsrc[static_cast<long>(y0) * W + x1] += (1 - fy) * fx * g;
      gsrc[static_cast<long>(y1) * W + x0] += fy * (1 - fx) * g;
      gsrc[static_cast<long>(y1) * W + x1] += fy * fx * g;
    }
  }
}

}  // namespace wmoe::kernels
