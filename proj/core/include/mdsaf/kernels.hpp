#pragma once

#include <cstddef>

namespace mdsaf::kernels {

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order. Vectorizes without reassociation, so results are reproducible.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (std::size_t t = 0; t < 8; ++t) acc[t] += a[j + t] * b[j + t];
  }
  double tail = 0.0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

/// y += alpha * x.
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

/// y = W x (+ b) for row-major W.
inline void matvec(const double* W, const double* x, const double* b, double* y, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double v = dot(W + i * cols, x, cols);
    y[i] = b ? v + b[i] : v;
  }
}

}  // namespace mdsaf::kernels
