#pragma once

// Raw-buffer kernels behind the tensor ops.
//
// Every kernel exists twice: an OpenMP version used by the library and a
// plain serial reference. Both accumulate each output element in the same
// order, so they agree bit-for-bit regardless of thread count.

#include <cstddef>

namespace timeprompt::kernels {

// C[g] (m x n) (+)= op(A[g]) * op(B[g % b_batch]) for g in [0, batch).
// op(A) is m x k, op(B) is k x n. Storage is row-major; a transposed operand
// is stored with its rows and columns swapped.
struct GemmShape {
  std::size_t batch = 1;
  std::size_t b_batch = 1;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool trans_a = false;
  bool trans_b = false;
  bool accumulate = false;
};

void gemm(const double* a, const double* b, double* c, const GemmShape& s);
void gemm_serial(const double* a, const double* b, double* c, const GemmShape& s);

// Row-wise softmax over `cols`, with max subtraction.
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void softmax_rows_serial(const double* x, double* y, std::size_t rows, std::size_t cols);

// dx = y * (dy - sum(dy * y)) per row, accumulated into dx.
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols);
void softmax_rows_backward_serial(const double* y, const double* dy, double* dx,
                                  std::size_t rows, std::size_t cols);

// GELU (tanh form) elementwise.
void gelu(const double* x, double* y, std::size_t count);
void gelu_serial(const double* x, double* y, std::size_t count);

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace timeprompt::kernels
