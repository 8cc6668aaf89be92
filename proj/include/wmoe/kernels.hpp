// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace wmoe::kernels {

// Thread cap for the OpenMP kernels below. Default is 1 (serial). The CLI raises
// it for data generation and evaluation, honoring WMOE_THREADS.
int max_threads();
void set_max_threads(int n);
int hardware_threads();

// All parallel kernels follow one contract: parallelism is over independent
// output elements and every element is computed in the same order as the
// serial *_ref version, so results are bit-identical at any thread count.
// The *_ref implementations are the reference kept for testing and for the
// kernel benchmark.

// c[m x n] = a[m x k] * b[k x n], row-major.
void matmul_ref(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt_ref(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn_ref(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

// One undecimated Haar band of an H x W x C grid with replicate padding at the
// last row/column. Signs select the band:
//   LL (+,+,+)   LH (-,+,-)   HL (+,-,-)   HH (-,-,+)
// band[i,j] = (f[i,j] + sb*f[i,j+1] + sc*f[i+1,j] + sd*f[i+1,j+1]) / 4
void haar_band_ref(const double* f, double* out, int H, int W, int C, int sb, int sc, int sd);
void haar_band(const double* f, double* out, int H, int W, int C, int sb, int sc, int sd);
// Adjoint: accumulates d(band)/d(f)^T * g into gf.
void haar_band_adjoint(const double* g, double* gf, int H, int W, int C, int sb, int sc, int sd);

// 3x3 replicate-padded spatial mean over an H x W x C grid, per channel.
void mean3x3_ref(const double* in, double* out, int H, int W, int C);
void mean3x3(const double* in, double* out, int H, int W, int C);

// Align-corners bilinear upsample of a single-channel H x W map to h x w.
void upsample_bilinear_ref(const double* src, int H, int W, double* dst, int h, int w);
void upsample_bilinear(const double* src, int H, int W, double* dst, int h, int w);
// Adjoint: accumulates into gsrc.
void upsample_bilinear_adjoint(const double* gdst, int h, int w, double* gsrc, int H, int W);

}  // namespace wmoe::kernels
