#ifndef LDL_TESTS_SUPPORT_FIXTURES_HPP
#define LDL_TESTS_SUPPORT_FIXTURES_HPP

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ldl/rng.hpp"
#include "ldl/tensor.hpp"

namespace ldl::testing {

/// Smooth random field in [0, 1]: white noise, three passes of 3x3 box
/// blur (clamped borders), then min-max normalization.
inline Tensor make_pattern(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({side, side});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  Tensor tmp({side, side});
  for (int pass = 0; pass < 3; ++pass) {
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        double acc = 0.0;
        int count = 0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const long long ii = (long long)i + di, jj = (long long)j + dj;
            if (ii < 0 || jj < 0 || ii >= (long long)side ||
                jj >= (long long)side)
              continue;
            acc += img((std::size_t)ii, (std::size_t)jj);
            ++count;
          }
        tmp(i, j) = acc / count;
      }
    img = tmp;
  }
  double lo = img[0], hi = img[0];
  for (std::size_t i = 0; i < img.numel(); ++i) {
    lo = std::min(lo, img[i]);
    hi = std::max(hi, img[i]);
  }
  for (std::size_t i = 0; i < img.numel(); ++i)
    img[i] = (img[i] - lo) / (hi - lo + 1e-12);
  return img;
}

struct DigitFixture {
  Tensor images;  // [m x side x side], values in [0, 1]
  std::vector<int> classes;
};

/// Ten class-conditional smooth patterns with per-sample brightness
/// jitter and pixel noise. Classes stay balanced (round-robin) and
/// remain separable after PCA while the features carry real noise.
inline DigitFixture make_digit_fixture(std::size_t m, std::size_t side,
                                       std::uint64_t seed,
                                       double pixel_noise = 0.12,
                                       double brightness_jitter = 0.2) {
  std::vector<Tensor> patterns;
  patterns.reserve(10);
  for (int k = 0; k < 10; ++k)
    patterns.push_back(make_pattern(side, derive_seed(seed, 0xd161, k)));

  Rng rng(derive_seed(seed, 0xd162));
  DigitFixture fx{Tensor({m, side, side}), std::vector<int>(m)};
  for (std::size_t i = 0; i < m; ++i) {
    const int cls = int(i % 10);
    fx.classes[i] = cls;
    const double gain = 1.0 + brightness_jitter * rng.uniform(-1.0, 1.0);
    for (std::size_t p = 0; p < side * side; ++p) {
      const double v =
          gain * patterns[cls][p] + pixel_noise * rng.normal();
      fx.images[i * side * side + p] = std::clamp(v, 0.0, 1.0);
    }
  }
  return fx;
}

}  // namespace ldl::testing

#endif  // LDL_TESTS_SUPPORT_FIXTURES_HPP
