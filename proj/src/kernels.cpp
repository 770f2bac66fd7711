#include "timeprompt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace timeprompt::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1u << 15;

inline double a_at(const double* a, const GemmShape& s, std::size_t i, std::size_t t) {
  return s.trans_a ? a[t * s.m + i] : a[i * s.k + t];
}

inline double b_at(const double* b, const GemmShape& s, std::size_t t, std::size_t j) {
  return s.trans_b ? b[j * s.k + t] : b[t * s.n + j];
}

// One output row; shared by both variants so the accumulation order matches.
inline void gemm_row(const double* a, const double* b, double* c, const GemmShape& s,
                     std::size_t i) {
  double* crow = c + i * s.n;
  if (!s.accumulate) std::fill(crow, crow + s.n, 0.0);
  if (!s.trans_b) {
    for (std::size_t t = 0; t < s.k; ++t) {
      const double av = a_at(a, s, i, t);
      const double* brow = b + t * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t t = 0; t < s.k; ++t) {
      const double av = a_at(a, s, i, t);
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * b[j * s.k + t];
    }
  }
}

constexpr double kGeluC = 0.044715;

inline double gelu_one(double x) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(k * (x + kGeluC * x * x * x)));
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
  double mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_row_backward(const double* y, const double* dy, double* dx,
                                 std::size_t cols) {
  double dot = 0.0;
  for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

void gemm_serial(const double* a, const double* b, double* c, const GemmShape& s) {
  const std::size_t a_stride = s.m * s.k;
  const std::size_t b_stride = s.k * s.n;
  const std::size_t c_stride = s.m * s.n;
  for (std::size_t g = 0; g < s.batch; ++g) {
    const double* ag = a + g * a_stride;
    const double* bg = b + (g % s.b_batch) * b_stride;
    double* cg = c + g * c_stride;
    for (std::size_t i = 0; i < s.m; ++i) gemm_row(ag, bg, cg, s, i);
  }
}

void gemm(const double* a, const double* b, double* c, const GemmShape& s) {
  const std::size_t rows = s.batch * s.m;
  const std::size_t work = rows * s.k * s.n;
  const std::size_t a_stride = s.m * s.k;
  const std::size_t b_stride = s.k * s.n;
  const std::size_t c_stride = s.m * s.n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const std::size_t g = static_cast<std::size_t>(r) / s.m;
    const std::size_t i = static_cast<std::size_t>(r) % s.m;
    gemm_row(a + g * a_stride, b + (g % s.b_batch) * b_stride, c + g * c_stride, s, i);
  }
}

void softmax_rows_serial(const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    softmax_row(x + r * cols, y + r * cols, cols);
  }
}

void softmax_rows_backward_serial(const double* y, const double* dy, double* dx,
                                  std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row_backward(y + r * cols, dy + r * cols, dx + r * cols, cols);
  }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    softmax_row_backward(y + off, dy + off, dx + off, cols);
  }
}

void gelu_serial(const double* x, double* y, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) y[i] = gelu_one(x[i]);
}

void gelu(const double* x, double* y, std::size_t count) {
#pragma omp parallel for schedule(static) if (count > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) y[i] = gelu_one(x[i]);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace timeprompt::kernels
