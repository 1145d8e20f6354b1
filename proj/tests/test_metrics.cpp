#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "avatarfield/metrics.hpp"

using namespace avatarfield;

namespace {

Image noise_image(std::mt19937_64& rng, int w, int h, int c) {
  Image im(w, h, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < im.pixels.size(); ++i) im.pixels.data()[i] = u(rng);
  return im;
}

Image full_mask(int w, int h) {
  Image m(w, h, 1);
  m.pixels.setOnes();
  return m;
}

}  // namespace

TEST(Metrics, IdenticalImagesScoreCeiling) {
  std::mt19937_64 rng(1);
  const Image a = noise_image(rng, 20, 16, 3);
  EXPECT_EQ(masked_psnr(a, a, full_mask(20, 16)), 99.0);
  EXPECT_NEAR(masked_ssim(a, a, full_mask(20, 16)), 1.0, 1e-12);
}

TEST(Metrics, PsnrOfUniformOffset) {
  // every pixel off by d: mse = d^2, psnr = -20 log10 d
  std::mt19937_64 rng(2);
  for (double d : {0.01, 0.05, 0.2}) {
    const Image a = noise_image(rng, 12, 12, 3);
    Image b = a;
    b.pixels.array() += d;
    EXPECT_NEAR(masked_psnr(a, b, full_mask(12, 12)), -20.0 * std::log10(d), 1e-9);
  }
}

TEST(Metrics, MaskRestrictsPixels) {
  std::mt19937_64 rng(3);
  const Image a = noise_image(rng, 10, 10, 3);
  Image b = a;
  Image mask(10, 10, 1);
  for (int x = 0; x < 5; ++x) mask.pixels(mask.index(x, 3), 0) = 1.0;
  for (int y = 0; y < 10; ++y) b.pixels.row(b.index(9, y)).array() += 0.5;  // outside the mask
  b.pixels.row(b.index(2, 3)).array() += 0.1;
  // 3 channels of one pixel off by 0.1 among 5 masked pixels
  EXPECT_NEAR(masked_mse(a, b, mask), 0.01 / 5.0, 1e-14);
}

TEST(Metrics, SsimOfConstantImagesMatchesLuminanceTerm) {
  // flat images: variances vanish, SSIM reduces to (2ab + C1) / (a^2 + b^2 + C1)
  Image a(16, 16, 3), b(16, 16, 3);
  a.pixels.setConstant(0.3);
  b.pixels.setConstant(0.5);
  const double c1 = 1e-4;
  EXPECT_NEAR(masked_ssim(a, b, full_mask(16, 16)), (2 * 0.15 + c1) / (0.09 + 0.25 + c1), 1e-12);
}

TEST(Metrics, SsimDropsWithNoise) {
  std::mt19937_64 rng(4);
  const Image a = noise_image(rng, 24, 24, 3);
  Image b = a;
  std::normal_distribution<double> n(0.0, 0.1);
  for (Eigen::Index i = 0; i < b.pixels.size(); ++i) b.pixels.data()[i] += n(rng);
  const double s = masked_ssim(a, b, full_mask(24, 24));
  EXPECT_LT(s, 0.99);
  EXPECT_GT(s, 0.0);
}
