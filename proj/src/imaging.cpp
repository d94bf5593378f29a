#include "refiner/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "refiner/kernels.hpp"
#include "refiner/rvt.hpp"

namespace refiner {

namespace {

template <typename T>
void require_image(const Tensor<T>& img, const char* who) {
  if (img.rank() != 3 || img.size() == 0) {
    throw DimensionError(std::string(who) + " expects a [C x h x w] image, got " + shape_str(img.shape()));
  }
}

std::size_t round_size(double v) { return static_cast<std::size_t>(std::llround(v)); }

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
  require_image(img, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: empty output size");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    kernels::bilinear_plane<T>(img.data().subspan(ch * h * w, h * w), h, w,
                               out.data().subspan(ch * out_h * out_w, out_h * out_w), out_h, out_w);
  }
  return out;
}

template <typename T>
Tensor<T> resize_shorter_side(const Tensor<T>& img, std::size_t side) {
  require_image(img, "resize_shorter_side");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h <= w) return bilinear_resize(img, side, std::max<std::size_t>(1, round_size(double(w) * side / h)));
  return bilinear_resize(img, std::max<std::size_t>(1, round_size(double(h) * side / w)), side);
}

template <typename T>
Tensor<T> center_crop(const Tensor<T>& img, std::size_t s) {
  require_image(img, "center_crop");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (s == 0 || s > h || s > w) {
    throw DimensionError("center_crop: " + std::to_string(s) + " does not fit in " + shape_str(img.shape()));
  }
  const std::size_t top = (h - s) / 2, left = (w - s) / 2;
  Tensor<T> out({c, s, s});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) out.at(ch, y, x) = img.at(ch, top + y, left + x);
  return out;
}

RfcGeometry rfc_geometry(std::size_t test_size, double ratio) {
  if (test_size == 0) throw ConfigError("test size must be positive");
  if (!(ratio > 1.0) || !std::isfinite(ratio)) throw ConfigError("padding needs a ratio above 1");
  RfcGeometry g;
  g.content = std::max<std::size_t>(1, round_size(static_cast<double>(test_size) / ratio));
  const std::size_t pad = test_size - g.content;
  g.pad_before = pad / 2;
  g.pad_after = pad - g.pad_before;
  return g;
}

template <typename T>
Tensor<T> rfc_pad(const Tensor<T>& img, std::size_t test_size, double ratio) {
  require_image(img, "rfc_pad");
  const RfcGeometry g = rfc_geometry(test_size, ratio);
  const Tensor<T> content = center_crop(resize_shorter_side(img, g.content), g.content);
  const std::size_t c = img.dim(0);
  Tensor<T> out({c, test_size, test_size});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < g.content; ++y)
      for (std::size_t x = 0; x < g.content; ++x)
        out.at(ch, g.pad_before + y, g.pad_before + x) = content.at(ch, y, x);
  return out;
}

void EvalPipelineConfig::validate(std::size_t channels) const {
  if (test_size == 0) throw ConfigError("test size must be positive");
  if (!(ratio > 0) || !std::isfinite(ratio)) throw ConfigError("ratio must be positive");
  if (mean.size() != channels || std.size() != channels) {
    throw ConfigError("normalization needs " + std::to_string(channels) + " mean and std values");
  }
  for (double s : std)
    if (!(s > 0)) throw ConfigError("normalization std must be positive");
}

template <typename T>
Tensor<T> eval_preprocess(const Tensor<T>& raw, const EvalPipelineConfig& cfg) {
  require_image(raw, "eval_preprocess");
  cfg.validate(raw.dim(0));
  Tensor<T> img = cfg.ratio > 1.0
                      ? rfc_pad(raw, cfg.test_size, cfg.ratio)
                      : center_crop(resize_shorter_side(raw, round_size(cfg.test_size / cfg.ratio)), cfg.test_size);
  const std::size_t plane = cfg.test_size * cfg.test_size;
  for (std::size_t ch = 0; ch < img.dim(0); ++ch) {
    auto p = img.data().subspan(ch * plane, plane);
    for (auto& v : p) v = static_cast<T>((v - cfg.mean[ch]) / cfg.std[ch]);
  }
  return img;
}

// ---------------------------------------------------------------------------
// PPM

namespace {

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_header_number(std::istream& in, const char* what) {
  skip_space_and_comments(in);
  std::size_t v = 0;
  bool any = false;
  while (std::isdigit(in.peek())) {
    v = v * 10 + static_cast<std::size_t>(in.get() - '0');
    any = true;
    if (v > (1u << 24)) throw FormatError(std::string("PPM ") + what + " too large");
  }
  if (!any) throw FormatError(std::string("PPM header: expected ") + what);
  return v;
}

}  // namespace

Tensor<float> read_ppm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw FormatError("not a binary PPM (missing P6 magic)");
  if (!std::isspace(in.peek()) && in.peek() != '#') throw FormatError("PPM header: expected whitespace after magic");
  const std::size_t w = read_header_number(in, "width");
  const std::size_t h = read_header_number(in, "height");
  const std::size_t maxval = read_header_number(in, "maxval");
  if (w == 0 || h == 0) throw FormatError("PPM image has zero size");
  if (maxval != 255) throw FormatError("PPM maxval must be 255, got " + std::to_string(maxval));
  if (!std::isspace(in.get())) throw FormatError("PPM header: expected one whitespace before pixel data");
  std::vector<unsigned char> bytes(3 * w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw FormatError("PPM pixel data truncated");
  Tensor<float> img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0f;
  return img;
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return read_ppm(f);
}

void write_ppm(std::ostream& out, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("write_ppm expects [3 x h x w], got " + shape_str(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        bytes[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  write_ppm(f, img);
}

#define REFINER_INSTANTIATE_IMAGING(T)                                                  \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);   \
  template Tensor<T> resize_shorter_side<T>(const Tensor<T>&, std::size_t);            \
  template Tensor<T> center_crop<T>(const Tensor<T>&, std::size_t);                    \
  template Tensor<T> rfc_pad<T>(const Tensor<T>&, std::size_t, double);                \
  template Tensor<T> eval_preprocess<T>(const Tensor<T>&, const EvalPipelineConfig&);

REFINER_INSTANTIATE_IMAGING(float)
REFINER_INSTANTIATE_IMAGING(double)

}  // namespace refiner
