#pragma once

// Independent reference implementations used to check the library. They
// share no code with core/ beyond the Image type.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bvr/nn.hpp"
#include "bvr/rng.hpp"
#include "bvr/video.hpp"

namespace bvr::testing {

Image random_image(Rng& rng, int height, int width, int channels);
Image random_mask(Rng& rng, int height, int width, double density);

double naive_psnr(const Image& a, const Image& b, double peak = 1.0);
// Direct 2-D Gaussian weighted sums per window; no separable filtering.
double naive_ssim(const Image& a, const Image& b, int window = 11, double sigma = 1.5, double k1 = 0.01,
                  double k2 = 0.03, double peak = 1.0);

struct PixelCounts {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};
PixelCounts count_pixels(const Image& pred, const Image& gt);

// Textbook sector formula, h in [0, 1).
std::array<double, 3> reference_hsv_to_rgb(double h, double s, double v);
std::array<double, 3> reference_rgb_to_hsv(double r, double g, double b);

struct GradientCheck {
  std::string name;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;  // |a - n| / (|a| + |n|), 0 when both vanish
};

// Central differences over every scalar of every parameter in `params`.
std::vector<GradientCheck> check_gradients(const nn::ParamSet& params, const std::function<nn::Var()>& loss,
                                           double step = 1e-6);
double worst_error(const std::vector<GradientCheck>& checks);

}  // namespace bvr::testing
