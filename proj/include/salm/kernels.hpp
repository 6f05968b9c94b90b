#pragma once

#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace salm::kernels {

// Dense row-major kernels shared by the tensor ops. Every kernel has a serial
// reference driver (kernels::serial) and a parallel driver (kernels::par) that
// splits work across OpenMP threads. Both drivers call the same per-row
// routines, which are kept noinline so the two paths produce bit-identical
// results; the unit tests assert exact equality and tools/bench_kernels
// compares their throughput.

#if defined(__GNUC__)
#define SALM_NOINLINE __attribute__((noinline))
#else
#define SALM_NOINLINE
#endif

/// Work below this many scalar ops stays serial; OpenMP overhead dominates
/// on the tiny tensors used in tests.
inline constexpr std::size_t kParallelGrain = 1u << 15;

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace rows {

// One output row of C = A * B. a: row i of A [k], b: [k,n], c: row i of C [n].
template <typename T>
SALM_NOINLINE void matmul_nn(const T* a, const T* b, T* c, std::size_t k, std::size_t n,
                             bool accumulate) {
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T ap = a[p];
    const T* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += ap * bp[j];
  }
}

// One output row of C = A * B^T. a: row i of A [k], b: [n,k] (each row a dot).
// Eight independent accumulators keep the FPU pipeline busy; the summation
// order is fixed, so results stay deterministic.
template <typename T>
SALM_NOINLINE void matmul_nt(const T* a, const T* b, T* c, std::size_t k, std::size_t n,
                             bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    const T* bj = b + j * k;
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    T s4 = T(0), s5 = T(0), s6 = T(0), s7 = T(0);
    std::size_t p = 0;
    for (; p + 8 <= k; p += 8) {
      s0 += a[p] * bj[p];
      s1 += a[p + 1] * bj[p + 1];
      s2 += a[p + 2] * bj[p + 2];
      s3 += a[p + 3] * bj[p + 3];
      s4 += a[p + 4] * bj[p + 4];
      s5 += a[p + 5] * bj[p + 5];
      s6 += a[p + 6] * bj[p + 6];
      s7 += a[p + 7] * bj[p + 7];
    }
    T acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; p < k; ++p) acc += a[p] * bj[p];
    c[j] = accumulate ? c[j] + acc : acc;
  }
}

// One output row of C = A^T * B. Row i of C is sum_p A[p,i] * B[p,:].
// a: [k,m] with column index i fixed, b: [k,n].
template <typename T>
SALM_NOINLINE void matmul_tn(const T* a, std::size_t i, std::size_t m, const T* b, T* c,
                             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T ap = a[p * m + i];
    const T* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += ap * bp[j];
  }
}

// Softmax over one row, optionally restricted to the first `allowed` entries;
// the rest are forced to exactly zero (causal masking).
template <typename T>
SALM_NOINLINE void softmax(const T* in, T* out, std::size_t n, std::size_t allowed) {
  T mx = in[0];
  for (std::size_t j = 1; j < allowed; ++j) mx = in[j] > mx ? in[j] : mx;
  T denom = T(0);
  for (std::size_t j = 0; j < allowed; ++j) {
    out[j] = std::exp(in[j] - mx);
    denom += out[j];
  }
  const T inv = T(1) / denom;
  for (std::size_t j = 0; j < allowed; ++j) out[j] *= inv;
  for (std::size_t j = allowed; j < n; ++j) out[j] = T(0);
}

// Layer norm over one row; writes normalized row (before gain/bias is applied
// by the caller) plus the saved statistics needed for the backward pass.
template <typename T>
SALM_NOINLINE void layer_norm(const T* in, T* out, const T* gain, const T* bias,
                              std::size_t n, T eps, T* mean_out, T* rstd_out) {
  T mean = T(0);
  for (std::size_t j = 0; j < n; ++j) mean += in[j];
  mean /= static_cast<T>(n);
  T var = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    const T d = in[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T rstd = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) out[j] = (in[j] - mean) * rstd * gain[j] + bias[j];
  *mean_out = mean;
  *rstd_out = rstd;
}

}  // namespace rows

namespace serial {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) rows::matmul_nn(a + i * k, b, c + i * n, k, n, accumulate);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) rows::matmul_nt(a + i * k, b, c + i * n, k, n, accumulate);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) rows::matmul_tn(a, i, m, b, c + i * n, k, n, accumulate);
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows_n, std::size_t cols, bool causal = false) {
  for (std::size_t i = 0; i < rows_n; ++i) {
    const std::size_t allowed = causal ? (i < cols ? i + 1 : cols) : cols;
    rows::softmax(in + i * cols, out + i * cols, cols, allowed);
  }
}

template <typename T>
void layer_norm_rows(const T* in, T* out, const T* gain, const T* bias, std::size_t rows_n,
                     std::size_t cols, T eps, T* means, T* rstds) {
  for (std::size_t i = 0; i < rows_n; ++i) {
    rows::layer_norm(in + i * cols, out + i * cols, gain, bias, cols, eps, &means[i], &rstds[i]);
  }
}

}  // namespace serial

namespace par {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    rows::matmul_nn(a + i * k, b, c + i * n, k, n, accumulate);
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    rows::matmul_nt(a + i * k, b, c + i * n, k, n, accumulate);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    rows::matmul_tn(a, static_cast<std::size_t>(i), m, b, c + i * n, k, n, accumulate);
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows_n, std::size_t cols, bool causal = false) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(rows_n); ++i) {
    const std::size_t allowed =
        causal ? (static_cast<std::size_t>(i) < cols ? static_cast<std::size_t>(i) + 1 : cols)
               : cols;
    rows::softmax(in + i * cols, out + i * cols, cols, allowed);
  }
}

template <typename T>
void layer_norm_rows(const T* in, T* out, const T* gain, const T* bias, std::size_t rows_n,
                     std::size_t cols, T eps, T* means, T* rstds) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(rows_n); ++i) {
    rows::layer_norm(in + i * cols, out + i * cols, gain, bias, cols, eps, &means[i], &rstds[i]);
  }
}

}  // namespace par

// Dispatching entry points: parallel when the work is worth it.

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  if (m > 1 && m * k * n >= kParallelGrain && max_threads() > 1) {
    par::matmul_nn(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul_nn(a, b, c, m, k, n, accumulate);
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  if (m > 1 && m * k * n >= kParallelGrain && max_threads() > 1) {
    par::matmul_nt(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul_nt(a, b, c, m, k, n, accumulate);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate = false) {
  if (m > 1 && m * k * n >= kParallelGrain && max_threads() > 1) {
    par::matmul_tn(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul_tn(a, b, c, m, k, n, accumulate);
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows_n, std::size_t cols, bool causal = false) {
  if (rows_n > 1 && rows_n * cols >= kParallelGrain && max_threads() > 1) {
    par::softmax_rows(in, out, rows_n, cols, causal);
  } else {
    serial::softmax_rows(in, out, rows_n, cols, causal);
  }
}

template <typename T>
void layer_norm_rows(const T* in, T* out, const T* gain, const T* bias, std::size_t rows_n,
                     std::size_t cols, T eps, T* means, T* rstds) {
  if (rows_n > 1 && rows_n * cols >= kParallelGrain && max_threads() > 1) {
    par::layer_norm_rows(in, out, gain, bias, rows_n, cols, eps, means, rstds);
  } else {
    serial::layer_norm_rows(in, out, gain, bias, rows_n, cols, eps, means, rstds);
  }
}

template <typename T>
bool all_finite(const T* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

}  // namespace salm::kernels
