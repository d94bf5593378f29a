#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "refiner/tensor.hpp"

namespace refiner {

/// Per-channel bilinear resampling of [C x h x w] with half-pixel centers.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, std::size_t out_h, std::size_t out_w);

/// Resizes so the shorter side becomes `side`; the longer side keeps the
/// aspect ratio, rounded to nearest.
template <typename T>
Tensor<T> resize_shorter_side(const Tensor<T>& img, std::size_t side);

/// Central [C x s x s] window. An odd remainder leaves the extra pixel on the
/// bottom/right (offset = floor((h - s) / 2)).
template <typename T>
Tensor<T> center_crop(const Tensor<T>& img, std::size_t s);

/// Content size and zero borders of the padded evaluation layout.
struct RfcGeometry {
  std::size_t content = 0;     // round(S / ratio)
  std::size_t pad_before = 0;  // floor((S - content) / 2), top and left
  std::size_t pad_after = 0;   // the rest, bottom and right
};
RfcGeometry rfc_geometry(std::size_t test_size, double ratio);

/// Shrinks the image so its central square spans round(S / ratio) pixels and
/// zero-pads it to S x S. Requires ratio > 1 (ConfigError otherwise).
template <typename T>
Tensor<T> rfc_pad(const Tensor<T>& img, std::size_t test_size, double ratio);

struct EvalPipelineConfig {
  std::size_t test_size = 224;
  double ratio = 1.0;  // <= 1: resize to round(S / ratio) and crop; > 1: pad
  // Identity normalization by default: the synthetic data is used as drawn.
  std::vector<double> mean{0.0, 0.0, 0.0};
  std::vector<double> std{1.0, 1.0, 1.0};

  void validate(std::size_t channels) const;  // throws ConfigError
};

template <typename T>
Tensor<T> eval_preprocess(const Tensor<T>& raw, const EvalPipelineConfig& cfg);

/// Binary PPM (P6, maxval 255) to [3 x h x w] floats in [0, 1]. Comments
/// introduced by '#' are allowed in the header. Throws FormatError.
Tensor<float> read_ppm(std::istream& in);
Tensor<float> read_ppm(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_ppm(std::ostream& out, const Tensor<float>& img);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& img);

}  // namespace refiner
