#include "headsmith/imgprep.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "headsmith/kernels.hpp"

namespace headsmith::imgprep {

namespace {

void check_image(const GrayImage& img) {
  if (img.height == 0 || img.width == 0 || img.pixels.size() != img.height * img.width)
    throw ShapeError("invalid image dimensions");
}

// Round half away from zero; inputs here are always >= 0.
std::uint8_t round_level(double x) {
  double v = std::floor(x + 0.5);
  if (v < 0.0) v = 0.0;
  if (v > 255.0) v = 255.0;
  return static_cast<std::uint8_t>(v);
}

}  // namespace

GrayImage equalize(const GrayImage& img) {
  check_image(img);
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : img.pixels) ++hist[v];

  std::array<std::uint64_t, 256> cdf{};
  std::uint64_t running = 0;
  for (int v = 0; v < 256; ++v) {
    running += hist[v];
    cdf[v] = running;
  }
  const std::uint64_t mn = img.pixels.size();
  std::uint64_t cdf_min = 0;
  for (int v = 0; v < 256; ++v) {
    if (cdf[v] > 0) {
      cdf_min = cdf[v];
      break;
    }
  }
  if (cdf_min == mn) return img;  // constant image: mapping is 0/0

  std::array<std::uint8_t, 256> lut{};
  const double denom = static_cast<double>(mn - cdf_min);
  for (int v = 0; v < 256; ++v) {
    const double num = cdf[v] >= cdf_min ? static_cast<double>(cdf[v] - cdf_min) : 0.0;
    lut[v] = round_level(255.0 * num / denom);
  }
  GrayImage out(img.height, img.width);
  for (std::size_t i = 0; i < mn; ++i) out.pixels[i] = lut[img.pixels[i]];
  return out;
}

GrayImage mirror_horizontal(const GrayImage& img) {
  check_image(img);
  GrayImage out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      out.at(r, c) = img.at(r, img.width - 1 - c);
  return out;
}

GrayImage invert(const GrayImage& img) {
  check_image(img);
  GrayImage out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = static_cast<std::uint8_t>(255 - img.pixels[i]);
  return out;
}

bool is_negative(const GrayImage& img, double margin) {
  check_image(img);
  if (margin <= 0.0) throw std::invalid_argument("is_negative: margin must be > 0");
  const std::size_t bw_r = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(img.height))));
  const std::size_t bw_c = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(img.width))));
  if (2 * bw_r >= img.height || 2 * bw_c >= img.width) return false;  // no central region

  std::uint64_t border_sum = 0, border_count = 0, center_sum = 0, center_count = 0;
  for (std::size_t r = 0; r < img.height; ++r) {
    const bool border_row = r < bw_r || r >= img.height - bw_r;
    for (std::size_t c = 0; c < img.width; ++c) {
      const bool border = border_row || c < bw_c || c >= img.width - bw_c;
      if (border) {
        border_sum += img.at(r, c);
        ++border_count;
      } else {
        center_sum += img.at(r, c);
        ++center_count;
      }
    }
  }
  const double border_mean = static_cast<double>(border_sum) / static_cast<double>(border_count);
  const double center_mean = static_cast<double>(center_sum) / static_cast<double>(center_count);
  if (center_mean == 0.0) return border_mean > 0.0;
  return border_mean > margin * center_mean;
}

std::pair<std::vector<GrayImage>, std::vector<std::size_t>>
detect_and_invert_negatives(const std::vector<GrayImage>& batch, double margin) {
  if (batch.empty()) throw std::invalid_argument("detect_and_invert_negatives: empty batch");
  if (margin <= 0.0) throw std::invalid_argument("detect_and_invert_negatives: margin must be > 0");
  std::vector<GrayImage> out(batch.size());
  std::vector<char> flagged(batch.size(), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.size()); ++i) {
    const auto& img = batch[static_cast<std::size_t>(i)];
    if (is_negative(img, margin)) {
      out[static_cast<std::size_t>(i)] = invert(img);
      flagged[static_cast<std::size_t>(i)] = 1;
    } else {
      out[static_cast<std::size_t>(i)] = img;
    }
  }
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < flagged.size(); ++i)
    if (flagged[i]) indices.push_back(i);
  return {std::move(out), std::move(indices)};
}

Matrix convolve2d(const Matrix& img, const Kernel& kernel) {
  const std::size_t m = img.rows(), n = img.cols();
  const std::size_t s = kernel.weights.rows(), t = kernel.weights.cols();
  if (s == 0 || t == 0) throw ShapeError("convolve2d: empty kernel");
  if (s > m || t > n) throw ShapeError("convolve2d: kernel larger than image");
  Matrix out(m - s + 1, n - t + 1);
  kernels::convolve2d_valid(img.data(), m, n, kernel.weights.data(), s, t, out.data());
  return out;
}

Matrix convolve2d(const GrayImage& img, const Kernel& kernel) {
  check_image(img);
  Matrix real(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) real.data()[i] = img.pixels[i];
  return convolve2d(real, kernel);
}

std::size_t pooled_dim(std::size_t u, const PoolSpec& spec) {
  if (spec.window == 0 || spec.stride == 0)
    throw std::invalid_argument("pooled_dim: window and stride must be >= 1");
  if (spec.window > u) throw std::invalid_argument("pooled_dim: window larger than dimension");
  return (u - spec.window) / spec.stride + 1;
}

GrayImage max_pool(const GrayImage& img, const PoolSpec& spec) {
  check_image(img);
  const std::size_t om = pooled_dim(img.height, spec);
  const std::size_t on = pooled_dim(img.width, spec);
  GrayImage out(om, on);
  kernels::max_pool(img.pixels.data(), img.height, img.width, spec.window, spec.stride,
                    out.pixels.data());
  return out;
}

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string next_pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += static_cast<char>(ch);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  if (next_pgm_token(in) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoull(next_pgm_token(in));
    height = std::stoull(next_pgm_token(in));
    maxval = std::stoull(next_pgm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (width == 0 || height == 0) throw DataError(path.string() + ": zero image dimension");
  if (maxval != 255) throw DataError(path.string() + ": only maxval 255 supported");

  GrayImage img(height, width);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path.string() + ": truncated pixel data");
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  check_image(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string process_directory(const std::filesystem::path& in_dir,
                              const std::filesystem::path& out_dir,
                              BatchOp op, double margin) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in_dir)) throw DataError("not a directory: '" + in_dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .pgm files in '" + in_dir.string() + "'");
  fs::create_directories(out_dir);

  struct Outcome {
    std::string name;
    bool flagged = false;
    bool changed = false;
  };
  std::vector<Outcome> outcomes(files.size());
  std::vector<std::string> errors(files.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(files.size()); ++i) {
    const std::size_t idx = static_cast<std::size_t>(i);
    Outcome& oc = outcomes[idx];
    oc.name = files[idx].filename().string();
    try {
      const GrayImage img = read_pgm(files[idx]);
      GrayImage result;
      switch (op) {
        case BatchOp::equalize:
          result = equalize(img);
          break;
        case BatchOp::mirror:
          result = mirror_horizontal(img);
          break;
        case BatchOp::negatives:
          oc.flagged = is_negative(img, margin);
          result = oc.flagged ? invert(img) : img;
          break;
      }
      oc.changed = !(result == img);
      write_pgm(out_dir / oc.name, result);
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) throw DataError(err);

  const char* op_name = op == BatchOp::equalize ? "equalize"
                        : op == BatchOp::mirror ? "mirror"
                                                : "negatives";
  nlohmann::json manifest;
  manifest["operation"] = op_name;
  manifest["input_dir"] = in_dir.string();
  manifest["output_dir"] = out_dir.string();
  if (op == BatchOp::negatives) manifest["margin"] = margin;
  nlohmann::json file_list = nlohmann::json::array();
  std::size_t flagged_count = 0;
  for (const auto& oc : outcomes) {
    nlohmann::json f;
    f["name"] = oc.name;
    f["changed"] = oc.changed;
    if (op == BatchOp::negatives) f["flagged"] = oc.flagged;
    if (oc.flagged) ++flagged_count;
    file_list.push_back(f);
  }
  manifest["files"] = file_list;
  if (op == BatchOp::negatives) manifest["flagged_count"] = flagged_count;

  const std::string text = manifest.dump(2) + "\n";
  std::ofstream mout(out_dir / "manifest.json", std::ios::binary);
  if (!mout) throw DataError("cannot write manifest.json");
  mout << text;
  return text;
}

}  // namespace headsmith::imgprep
