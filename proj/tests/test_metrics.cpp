#include <doctest.h>

#include <random>

#include "cnerv/metrics.hpp"
#include "support/oracles.hpp"

using namespace cnerv;
using cnerv::testing::random_tensor;

TEST_CASE("loss on identical images is zero") {
  std::mt19937_64 rng(1);
  const auto y = random_tensor({3, 16, 16}, rng, 0, 1);
  CHECK(loss(y, y).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ssim(y, y).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("alpha one is mean absolute error") {
  std::mt19937_64 rng(2);
  const auto y = random_tensor({3, 16, 16}, rng, 0, 1), v = random_tensor({3, 16, 16}, rng, 0, 1);
  LossConfig cfg;
  cfg.alpha = 1.0;
  CHECK(loss(y, v, cfg).item() == (y.data() - v.data()).cwiseAbs().mean());
}

TEST_CASE("constant-image SSIM closed form") {
  const auto y = Tensor<double>::constant({1, 16, 16}, 0.5), v = Tensor<double>::constant({1, 16, 16}, 0.25);
  const double c1 = 0.01 * 0.01;
  const double expected_ssim = (2 * 0.5 * 0.25 + c1) / (0.5 * 0.5 + 0.25 * 0.25 + c1);
  CHECK(ssim(y, v).item() == doctest::Approx(expected_ssim).epsilon(1e-12));
  const double expected = 0.7 * 0.25 + 0.3 * (1 - expected_ssim);
  CHECK(loss(y, v).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss properties") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto a = random_tensor({3, 12, 14}, rng, 0, 1), b = random_tensor({3, 12, 14}, rng, 0, 1);
    CHECK(loss(a, b).item() > 0);
    CHECK(std::abs(ssim(a, b).item() - ssim(b, a).item()) <= 1e-9);
  }
  CHECK_THROWS_AS(loss(Tensor<double>::zeros({3, 12, 12}), Tensor<double>::zeros({3, 12, 13})), ShapeError);
}

TEST_CASE("loss gradient through SSIM") {
  std::mt19937_64 rng(4);
  const auto v = random_tensor({2, 12, 13}, rng, 0, 1);
  auto f = [&](const std::vector<Tensor<double>>& in) { return loss(in[0], v); };
  CHECK(testing::gradcheck(f, {random_tensor({2, 12, 13}, rng, 0, 1)}, rng).max_rel_error < 1e-4);
}

TEST_CASE("psnr") {
  const auto zero = Tensor<double>::zeros({1, 4, 4});
  CHECK(std::isinf(psnr(zero, zero)));
  CHECK(psnr(zero, Tensor<double>::constant({1, 4, 4}, 1.0)) == 0.0);
  CHECK(psnr(zero, Tensor<double>::constant({1, 4, 4}, 0.1)) == doctest::Approx(20.0).epsilon(1e-12));
  double prev = std::numeric_limits<double>::infinity();
  for (double m = 1e-6; m < 1; m *= 3) {
    CHECK(psnr_from_mse(m) < prev);
    prev = psnr_from_mse(m);
  }
}

TEST_CASE("ms-ssim") {
  std::mt19937_64 rng(5);
  const auto v = random_tensor({3, 32, 64}, rng, 0, 1);
  const auto same = ms_ssim(v, v);
  CHECK(same.value == doctest::Approx(1.0).epsilon(1e-12));
  // min(32,64) = 32 < 11 * 4, so only two dyadic scales fit the window
  CHECK(same.scales == 2);
  CHECK(ms_ssim_scales(256, 256, 11) == 5);
  CHECK(ms_ssim_scales(176, 300, 11) == 5);
  CHECK(ms_ssim_scales(175, 300, 11) == 4);
  const Tensor<double> inv(v.shape(), (1.0 - v.data().array()).matrix());
  CHECK(ms_ssim(inv, v).value < 0.2);
}
