#pragma once

#include <cstddef>
#include <cstdint>

// Compute kernels behind the library's hot loops. Each kernel exists twice:
// kernels::serial is the reference implementation, kernels::openmp the
// parallel one. Parallel loops split work by output element and keep each
// element's accumulation order identical to the serial code, so the two
// backends produce bit-identical results; tests assert exactly that.
// Free functions at kernels:: scope dispatch on the process-wide backend.

namespace headsmith::kernels {

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
bool openmp_available();
int thread_count();

namespace serial {

// y[b,o] = sum_i x[b,i] * w[o,i] + bias[o]; w is row-major out x in.
void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out);

// dx[b,i] = sum_o dy[b,o] * w[o,i]
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out);

// dw[o,i] = sum_b dy[b,o] * x[b,i]
void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out);

// db[o] = sum_b dy[b,o]
void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out);

// Per-column mean and population variance (divide by rows) of a row-major
// rows x cols matrix. Two-pass for a non-negative variance.
void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var);

// Valid-mode 2-D convolution with kernel flip:
//   out[i,j] = sum_{a,b} img[i+a, j+b] * ker[s-1-a, t-1-b]
// out has (m-s+1) x (n-t+1) elements.
void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out);

// Max pooling over r x r windows with stride h on an m x n 8-bit image.
// Output dims: floor((m-r)/h)+1 x floor((n-r)/h)+1.
void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out);

}  // namespace serial

namespace openmp {

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out);
void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var);
void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out);
void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out);

}  // namespace openmp

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out);
void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var);
void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out);
void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out);

}  // namespace headsmith::kernels
