#include "headsmith/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace headsmith::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::openmp
#else
    Backend::serial
#endif
};
}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double acc = bias ? bias[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xb[i] * wo[i];
      y[b * out + o] = acc;
    }
  }
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyb = dy + b * out;
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += dyb[o] * w[o * in + i];
      dx[b * in + i] = acc;
    }
  }
}

void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) acc += dy[b * out + o] * x[b * in + i];
      dw[o * in + i] = acc;
    }
  }
}

void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += dy[b * out + o];
    db[o] = acc;
  }
}

void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var) {
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sum += x[r * cols + c];
    const double mu = sum / static_cast<double>(rows);
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = x[r * cols + c] - mu;
      sq += d * d;
    }
    mean[c] = mu;
    var[c] = sq / static_cast<double>(rows);
  }
}

void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out) {
  const std::size_t om = m - s + 1;
  const std::size_t on = n - t + 1;
  for (std::size_t i = 0; i < om; ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < s; ++a)
        for (std::size_t b = 0; b < t; ++b)
          acc += img[(i + a) * n + (j + b)] * ker[(s - 1 - a) * t + (t - 1 - b)];
      out[i * on + j] = acc;
    }
  }
}

void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out) {
  const std::size_t om = (m - r) / h + 1;
  const std::size_t on = (n - r) / h + 1;
  for (std::size_t i = 0; i < om; ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      std::uint8_t best = 0;
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b) {
          const std::uint8_t v = img[(i * h + a) * n + (j * h + b)];
          if (v > best) best = v;
        }
      out[i * on + j] = best;
    }
  }
}

}  // namespace serial

namespace openmp {

// Every loop below parallelizes over output elements only; the inner
// accumulation order matches the serial kernel exactly.

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out) {
#ifdef _OPENMP
  const std::int64_t total = static_cast<std::int64_t>(batch * out);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < total; ++k) {
    const std::size_t b = static_cast<std::size_t>(k) / out;
    const std::size_t o = static_cast<std::size_t>(k) % out;
    const double* xb = x + b * in;
    const double* wo = w + o * in;
    double acc = bias ? bias[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += xb[i] * wo[i];
    y[b * out + o] = acc;
  }
#else
  serial::dense_forward(x, w, bias, y, batch, in, out);
#endif
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out) {
#ifdef _OPENMP
  const std::int64_t total = static_cast<std::int64_t>(batch * in);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < total; ++k) {
    const std::size_t b = static_cast<std::size_t>(k) / in;
    const std::size_t i = static_cast<std::size_t>(k) % in;
    const double* dyb = dy + b * out;
    double acc = 0.0;
    for (std::size_t o = 0; o < out; ++o) acc += dyb[o] * w[o * in + i];
    dx[b * in + i] = acc;
  }
#else
  serial::dense_backward_input(dy, w, dx, batch, in, out);
#endif
}

void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out) {
#ifdef _OPENMP
  const std::int64_t total = static_cast<std::int64_t>(out * in);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < total; ++k) {
    const std::size_t o = static_cast<std::size_t>(k) / in;
    const std::size_t i = static_cast<std::size_t>(k) % in;
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += dy[b * out + o] * x[b * in + i];
    dw[o * in + i] = acc;
  }
#else
  serial::dense_backward_weights(dy, x, dw, batch, in, out);
#endif
}

void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < static_cast<std::int64_t>(out); ++o) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += dy[b * out + o];
    db[o] = acc;
  }
#else
  serial::dense_backward_bias(dy, db, batch, out);
#endif
}

void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < static_cast<std::int64_t>(cols); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sum += x[r * cols + c];
    const double mu = sum / static_cast<double>(rows);
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = x[r * cols + c] - mu;
      sq += d * d;
    }
    mean[c] = mu;
    var[c] = sq / static_cast<double>(rows);
  }
#else
  serial::column_mean_var(x, rows, cols, mean, var);
#endif
}

void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out) {
#ifdef _OPENMP
  const std::size_t om = m - s + 1;
  const std::size_t on = n - t + 1;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(om); ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < s; ++a)
        for (std::size_t b = 0; b < t; ++b)
          acc += img[(static_cast<std::size_t>(i) + a) * n + (j + b)] *
                 ker[(s - 1 - a) * t + (t - 1 - b)];
      out[static_cast<std::size_t>(i) * on + j] = acc;
    }
  }
#else
  serial::convolve2d_valid(img, m, n, ker, s, t, out);
#endif
}

void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out) {
#ifdef _OPENMP
  const std::size_t om = (m - r) / h + 1;
  const std::size_t on = (n - r) / h + 1;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(om); ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      std::uint8_t best = 0;
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b) {
          const std::uint8_t v = img[(static_cast<std::size_t>(i) * h + a) * n + (j * h + b)];
          if (v > best) best = v;
        }
      out[static_cast<std::size_t>(i) * on + j] = best;
    }
  }
#else
  serial::max_pool(img, m, n, r, h, out);
#endif
}

}  // namespace openmp

#define HEADSMITH_DISPATCH(fn, ...)            \
  do {                                         \
    if (backend() == Backend::openmp)          \
      openmp::fn(__VA_ARGS__);                 \
    else                                       \
      serial::fn(__VA_ARGS__);                 \
  } while (0)

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t in, std::size_t out) {
  HEADSMITH_DISPATCH(dense_forward, x, w, bias, y, batch, in, out);
}
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t in, std::size_t out) {
  HEADSMITH_DISPATCH(dense_backward_input, dy, w, dx, batch, in, out);
}
void dense_backward_weights(const double* dy, const double* x, double* dw,
                            std::size_t batch, std::size_t in, std::size_t out) {
  HEADSMITH_DISPATCH(dense_backward_weights, dy, x, dw, batch, in, out);
}
void dense_backward_bias(const double* dy, double* db,
                         std::size_t batch, std::size_t out) {
  HEADSMITH_DISPATCH(dense_backward_bias, dy, db, batch, out);
}
void column_mean_var(const double* x, std::size_t rows, std::size_t cols,
                     double* mean, double* var) {
  HEADSMITH_DISPATCH(column_mean_var, x, rows, cols, mean, var);
}
void convolve2d_valid(const double* img, std::size_t m, std::size_t n,
                      const double* ker, std::size_t s, std::size_t t,
                      double* out) {
  HEADSMITH_DISPATCH(convolve2d_valid, img, m, n, ker, s, t, out);
}
void max_pool(const std::uint8_t* img, std::size_t m, std::size_t n,
              std::size_t r, std::size_t h, std::uint8_t* out) {
  HEADSMITH_DISPATCH(max_pool, img, m, n, r, h, out);
}

#undef HEADSMITH_DISPATCH

}  // namespace headsmith::kernels
