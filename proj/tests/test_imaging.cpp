#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "refiner/imaging.hpp"
#include "refiner/random.hpp"
#include "refiner/rvt.hpp"

using namespace refiner;

namespace {

Tensor<double> random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed = 1) {
  Rng rng(seed);
  return rng.uniform_tensor<double>({c, h, w}, 0.0, 1.0);
}

}  // namespace

// ---- resize ----

TEST(BilinearResize, SameSizeIsIdentity) {
  const auto img = random_image(3, 5, 7);
  EXPECT_EQ(bilinear_resize(img, 5, 7), img);
}

TEST(BilinearResize, ConstantStaysConstant) {
  const Tensor<double> img({3, 4, 4}, 0.3);
  const auto out = bilinear_resize(img, 8, 8);
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(BilinearResize, TwoByTwoToThreeByThreeByHand) {
  // Source coordinates for 2 -> 3 with half-pixel centers: -1/6 (clamped to 0), 1/2, 7/6 (clamped to 1).
  const Tensor<double> img({1, 2, 2}, std::vector<double>{1, 2, 3, 5});
  const auto out = bilinear_resize(img, 3, 3);
  const double expect[3][3] = {{1, 1.5, 2}, {2, 2.75, 3.5}, {3, 4, 5}};
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(out.at(0, y, x), expect[y][x], 1e-12);
}

TEST(BilinearResize, ShorterSideKeepsAspect) {
  const auto img = random_image(3, 10, 20);
  const auto out = resize_shorter_side(img, 5);
  EXPECT_EQ(out.shape(), (Shape{3, 5, 10}));
  EXPECT_EQ(resize_shorter_side(random_image(3, 9, 6), 4).shape(), (Shape{3, 6, 4}));
}

// ---- crop ----

TEST(CenterCrop, FullSizeIsIdentity) {
  const auto img = random_image(3, 6, 6);
  EXPECT_EQ(center_crop(img, 6), img);
}

TEST(CenterCrop, DropsOnePixelBorder) {
  const auto img = random_image(3, 6, 6);
  const auto out = center_crop(img, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(out.at(c, y, x), img.at(c, y + 1, x + 1));
}

TEST(CenterCrop, OddRemainderGoesBottomRight) {
  // 7 x 8 -> 4: rows 1..4 (3 left over: 1 above, 2 below); cols 2..5.
  const auto img = random_image(2, 7, 8);
  const auto out = center_crop(img, 4);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(out.at(c, y, x), img.at(c, 1 + y, 2 + x));
  EXPECT_THROW(center_crop(img, 8), DimensionError);
}

// ---- padded evaluation ----

TEST(RfcPad, GeometryAtTabulatedSizes) {
  const RfcGeometry a = rfc_geometry(800, 1.12);
  EXPECT_EQ(a.content, 714u);
  EXPECT_EQ(a.pad_before, 43u);
  EXPECT_EQ(a.pad_after, 43u);
  const RfcGeometry b = rfc_geometry(448, 1.13);
  EXPECT_EQ(b.content, 396u);
  EXPECT_EQ(b.pad_before, 26u);
  EXPECT_EQ(b.pad_after, 26u);
  const RfcGeometry odd = rfc_geometry(224, 1.1);  // 204 content, 20 pad
  EXPECT_EQ(odd.content, 204u);
  const RfcGeometry split = rfc_geometry(225, 1.125);  // 200 content, 25 pad
  EXPECT_EQ(split.content, 200u);
  EXPECT_EQ(split.pad_before, 12u);
  EXPECT_EQ(split.pad_after, 13u);
  EXPECT_THROW(rfc_geometry(224, 1.0), ConfigError);
  EXPECT_THROW(rfc_geometry(224, 0.9), ConfigError);
}

TEST(RfcPad, BordersZeroAndContentIsResizedSource) {
  const auto img = random_image(3, 60, 80);
  const std::size_t S = 48;
  const double rho = 1.13;
  const RfcGeometry g = rfc_geometry(S, rho);
  const auto out = rfc_pad(img, S, rho);
  ASSERT_EQ(out.shape(), (Shape{3, S, S}));
  const auto content = center_crop(resize_shorter_side(img, g.content), g.content);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const bool inside = y >= g.pad_before && y < g.pad_before + g.content && x >= g.pad_before &&
                            x < g.pad_before + g.content;
        if (inside) EXPECT_EQ(out.at(c, y, x), content.at(c, y - g.pad_before, x - g.pad_before));
        else EXPECT_EQ(out.at(c, y, x), 0.0);
      }
}

TEST(RfcPad, NearOneMatchesCropPathOnContent) {
  const auto img = random_image(3, 40, 40);
  EvalPipelineConfig crop;
  crop.test_size = 32;
  crop.ratio = 1.0;
  EvalPipelineConfig pad = crop;
  pad.ratio = 1.0 + 1e-9;  // content round(32 / ratio) = 32, no border
  EXPECT_EQ(eval_preprocess(img, pad), eval_preprocess(img, crop));
}

// ---- pipeline ----

TEST(EvalPreprocess, RatioOneIsPlainResize) {
  const auto img = random_image(3, 50, 50);
  EvalPipelineConfig cfg;
  cfg.test_size = 32;
  EXPECT_EQ(eval_preprocess(img, cfg), bilinear_resize(img, 32, 32));
}

TEST(EvalPreprocess, ClassicCropFromLargerSource) {
  // 0.875 at 224 resizes a 256 source to 256 (a copy) and crops rows/cols 16..239.
  const auto img = random_image(3, 256, 256);
  EvalPipelineConfig cfg;
  cfg.test_size = 224;
  cfg.ratio = 0.875;
  const auto out = eval_preprocess(img, cfg);
  ASSERT_EQ(out.shape(), (Shape{3, 224, 224}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 224; y += 7)
      for (std::size_t x = 0; x < 224; x += 5) EXPECT_EQ(out.at(c, y, x), img.at(c, y + 16, x + 16));
}

TEST(EvalPreprocess, PaddedBordersNormalizeToShiftedZero) {
  const auto img = random_image(3, 64, 64);
  EvalPipelineConfig cfg;
  cfg.test_size = 64;
  cfg.ratio = 1.13;
  const auto raw = eval_preprocess(img, cfg);
  EXPECT_EQ(raw.at(0, 0, 0), 0.0);
  EXPECT_EQ(raw.at(2, 63, 63), 0.0);
  cfg.mean = {0.485, 0.456, 0.406};
  cfg.std = {0.229, 0.224, 0.225};
  const auto norm = eval_preprocess(img, cfg);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(norm.at(c, 0, 0), (0.0 - cfg.mean[c]) / cfg.std[c]);
    EXPECT_EQ(norm.at(c, 63, 0), (0.0 - cfg.mean[c]) / cfg.std[c]);
  }
  cfg.std = {1, 0, 1};
  EXPECT_THROW(eval_preprocess(img, cfg), ConfigError);
}

// ---- PPM ----

TEST(Ppm, RoundTripIsExactOnEightBitValues) {
  Tensor<float> img({3, 3, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  std::stringstream ss;
  write_ppm(ss, img);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 11), "P6\n5 3\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 45u);
  EXPECT_EQ(read_ppm(ss), img);
}

TEST(Ppm, HeaderCommentsAndErrors) {
  std::string pix(3 * 2 * 1, '\x80');
  std::stringstream ok("P6 # comment\n2 1\n# another\n255\n" + pix);
  const auto img = read_ppm(ok);
  EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_FLOAT_EQ(img[0], 128.0f / 255.0f);

  const auto fails = [](const std::string& s) {
    std::stringstream in(s);
    EXPECT_THROW(read_ppm(in), FormatError) << s;
  };
  fails("P3\n2 1\n255\n" + pix);
  fails("P6\n2 1\n65535\n" + pix);
  fails("P6\n2 1\n255\n" + pix.substr(0, 4));
  fails("P6\nx 1\n255\n" + pix);
  fails("P62 1 255\n" + pix);
}
