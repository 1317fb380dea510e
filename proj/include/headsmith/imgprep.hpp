#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "headsmith/common.hpp"

namespace headsmith::imgprep {

// 8-bit grayscale image, row-major, m rows x n cols.
struct GrayImage {
  std::size_t height = 0;  // m
  std::size_t width = 0;   // n
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t m, std::size_t n, std::uint8_t fill = 0)
      : height(m), width(n), pixels(m * n, fill) {
    if (m == 0 || n == 0) throw ShapeError("GrayImage: dimensions must be >= 1");
  }

  std::uint8_t& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  friend bool operator==(const GrayImage& a, const GrayImage& b) {
    return a.height == b.height && a.width == b.width && a.pixels == b.pixels;
  }
};

struct Kernel {
  Matrix weights;  // s x t
};

struct PoolSpec {
  std::size_t window = 2;  // r
  std::size_t stride = 2;  // h
};

// Histogram equalization. Each output level is
//   round(255 * (cdf(v) - cdf_min) / (m*n - cdf_min))
// where cdf counts pixels <= v and cdf_min is the smallest nonzero cdf value.
// Constant images are returned unchanged (degenerate denominator).
GrayImage equalize(const GrayImage& img);

// Column reversal; an involution.
GrayImage mirror_horizontal(const GrayImage& img);

// Pixel-wise v -> 255 - v; an involution.
GrayImage invert(const GrayImage& img);

// An image is a negative when its 10%-wide border frame is brighter than its
// central region: border_mean > margin * center_mean. Images too small to
// have a central region are never flagged.
bool is_negative(const GrayImage& img, double margin = 1.15);

// Inverts every flagged image; returns the processed batch and the flagged
// indices in ascending order.
std::pair<std::vector<GrayImage>, std::vector<std::size_t>>
detect_and_invert_negatives(const std::vector<GrayImage>& batch, double margin = 1.15);

// Valid-mode 2-D convolution with kernel flip; output (m-s+1) x (n-t+1).
Matrix convolve2d(const GrayImage& img, const Kernel& kernel);
Matrix convolve2d(const Matrix& img, const Kernel& kernel);

// floor((u - r) / h) + 1; requires u >= r.
std::size_t pooled_dim(std::size_t u, const PoolSpec& spec);

GrayImage max_pool(const GrayImage& img, const PoolSpec& spec);

// Binary PGM (P5), 8-bit, maxval 255.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

// Directory batch processing. Reads every .pgm in `in_dir` (sorted by name),
// applies the operation, writes results under `out_dir` and a manifest.json
// listing per-file outcomes. Returns the manifest as a JSON string.
enum class BatchOp { equalize, mirror, negatives };
std::string process_directory(const std::filesystem::path& in_dir,
                              const std::filesystem::path& out_dir,
                              BatchOp op, double margin = 1.15);

}  // namespace headsmith::imgprep
