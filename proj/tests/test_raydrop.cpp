#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coligen/raydrop.hpp"
#include "testutil.hpp"

using namespace coligen;
using namespace coligen::raydrop;

TEST_CASE("gumbel draws: fixed point, mean, determinism") {
  REQUIRE(gumbel_from_uniform(1.0 / std::exp(1.0)) == Catch::Approx(0.0).margin(1e-12));
  // extreme uniforms stay finite through the clamp
  REQUIRE(std::isfinite(gumbel_from_uniform(0.0)));
  REQUIRE(std::isfinite(gumbel_from_uniform(1.0)));

  Rng rng(123);
  double mean = 0;
  const std::size_t n = 1000000;
  for (std::size_t i = 0; i < n; ++i) mean += gumbel_from_uniform(rng.uniform());
  mean /= static_cast<double>(n);
  REQUIRE(mean == Catch::Approx(0.5772156649).margin(0.01));  // Euler-Mascheroni

  Rng a(42), b(42);
  auto ga = gumbel_sample(8, 8, a);
  auto gb = gumbel_sample(8, 8, b);
  for (std::size_t i = 0; i < ga.size(); ++i) REQUIRE(ga[i] == gb[i]);
}

TEST_CASE("relaxed_mask values and errors") {
  Tensor<double> l({1, 1}), g1({1, 1}), g2({1, 1});

  l[0] = 0.0;
  g1[0] = 0.7;
  g2[0] = 0.7;
  REQUIRE(relaxed_mask(l, 1.0, g1, g2)[0] == Catch::Approx(0.5));

  l[0] = 40.0;  // p -> 1 limit
  g1[0] = -1.0;
  g2[0] = 2.0;
  REQUIRE(relaxed_mask(l, 1.0, g1, g2)[0] == Catch::Approx(1.0).margin(1e-12));

  l[0] = 0.3;
  g1[0] = 0.2;
  g2[0] = -0.1;
  double want = 1.0 / (1.0 + std::exp(-0.6));
  REQUIRE(relaxed_mask(l, 1.0, g1, g2)[0] == Catch::Approx(want).epsilon(1e-12));

  REQUIRE_THROWS_AS(relaxed_mask(l, 0.0, g1, g2), InputError);
  REQUIRE_THROWS_AS(relaxed_mask(l, -1.0, g1, g2), InputError);
}

TEST_CASE("hard_mask thresholding with ties kept") {
  Tensor<double> y({1, 3});
  y[0] = 0.5;
  y[1] = 0.4999;
  y[2] = 0.9;
  IntImage m = hard_mask(y);
  REQUIRE(m.data[0] == 1);  // >= 0.5 keeps the ray
  REQUIRE(m.data[1] == 0);
  REQUIRE(m.data[2] == 1);
}

TEST_CASE("straight_through: binary forward, relaxed gradient") {
  Tensor<double> logits({4, 8});
  Rng init(5);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = init.normal();

  Rng rng(11);
  auto s = straight_through(logits, 1.0, rng);
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    REQUIRE((s.mask.data[i] == 0 || s.mask.data[i] == 1));
    REQUIRE(s.mask.data[i] == (s.relaxed[i] >= 0.5 ? 1 : 0));
  }

  // analytic derivative at the symmetric point equals sigmoid'(0) = 0.25
  Tensor<double> zero({1, 1}), g0({1, 1});
  auto relaxed_at = [&](double lv) {
    Tensor<double> l({1, 1});
    l[0] = lv;
    return relaxed_mask(l, 1.0, g0, g0)[0];
  };
  (void)zero;
  Tensor<double> l0({1, 1});
  auto same = relaxed_mask(l0, 1.0, g0, g0);
  REQUIRE(same[0] == 0.5);
  double fd0 = (relaxed_at(1e-7) - relaxed_at(-1e-7)) / 2e-7;
  REQUIRE(fd0 == Catch::Approx(0.25).epsilon(1e-6));

  // frozen-noise finite differences match the gradient contract
  const double eps = 1e-5;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor<double> lp = logits, lm = logits;
    lp[i] += eps;
    lm[i] -= eps;
    double fp = relaxed_mask(lp, 1.0, s.g1, s.g2)[i];
    double fm = relaxed_mask(lm, 1.0, s.g1, s.g2)[i];
    double fd = (fp - fm) / (2 * eps);
    double rel = std::abs(fd - s.dmask_dlogit[i]) /
                 std::max({std::abs(fd), std::abs(s.dmask_dlogit[i]), 1e-12});
    REQUIRE(rel <= 1e-6);
  }
}

TEST_CASE("bernoulli_mask marginals") {
  Rng rng(7);
  Tensor<double> ones({10, 10});
  ones.fill(1.0);
  auto m1 = bernoulli_mask(ones, rng);
  for (auto v : m1.data) REQUIRE(v == 1);

  Tensor<double> zeros({10, 10});
  auto m0 = bernoulli_mask(zeros, rng);
  for (auto v : m0.data) REQUIRE(v == 0);

  Tensor<double> p({250, 400});
  p.fill(0.3);
  auto m = bernoulli_mask(p, rng);  // 1e5 cells
  double rate = 0;
  for (auto v : m.data) rate += v;
  rate /= static_cast<double>(m.size());
  REQUIRE(rate == Catch::Approx(0.3).margin(0.01));
}

TEST_CASE("apply_mask semantics") {
  using rangeview::Channel;
  rangeview::RangeImage img(4, 4, {Channel::depth, Channel::reflectance});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      img.set_valid(r, c, true);
      img.at(Channel::depth, r, c) = 10.0 + static_cast<double>(r);
      img.at(Channel::reflectance, r, c) = 0.5;
    }

  IntImage all_ones(4, 4);
  std::fill(all_ones.data.begin(), all_ones.data.end(), 1);
  auto same = apply_mask(img, all_ones);
  for (std::size_t i = 0; i < img.tensor().size(); ++i)
    REQUIRE(same.tensor()[i] == img.tensor()[i]);
  REQUIRE(same.valid_count() == 16);

  IntImage all_zero(4, 4);
  auto empty = apply_mask(img, all_zero);
  REQUIRE(empty.valid_count() == 0);
  for (std::size_t i = 0; i < empty.tensor().size(); ++i)
    REQUIRE(empty.tensor()[i] == 0.0);

  IntImage checker(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) checker.at(r, c) = (r + c) % 2;
  auto half = apply_mask(img, checker);
  REQUIRE(half.valid_count() == 8);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if (!checker.at(r, c)) {
        REQUIRE_FALSE(half.valid(r, c));
        REQUIRE(half.at(Channel::depth, r, c) == 0.0);
      }
}

TEST_CASE("distributional consistency as alpha -> 0") {
  Rng rng(31);
  Tensor<double> logits({250, 400});
  Rng lr(9);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = lr.normal();
  auto g1 = gumbel_sample(250, 400, rng);
  auto g2 = gumbel_sample(250, 400, rng);
  auto relaxed = relaxed_mask(logits, 0.01, g1, g2);
  std::size_t near = 0;
  for (std::size_t i = 0; i < relaxed.size(); ++i)
    if (relaxed[i] < 0.01 || relaxed[i] > 0.99) near++;
  REQUIRE(static_cast<double>(near) / static_cast<double>(relaxed.size()) > 0.99);
}

TEST_CASE("hard-mask marginal equals sigmoid(logit)") {
  // the Gumbel difference is logistic, so P(keep) = sigmoid(l) exactly
  for (double l : {-2.0, 0.0, 2.0}) {
    Rng rng(1000 + static_cast<std::uint64_t>(l * 7 + 100));
    const std::size_t n = 100000;
    std::size_t kept = 0;
    Tensor<double> logit({1, 1});
    logit[0] = l;
    for (std::size_t i = 0; i < n; ++i) {
      auto s = straight_through(logit, 1.0, rng);
      kept += static_cast<std::size_t>(s.mask.data[0]);
    }
    double rate = static_cast<double>(kept) / static_cast<double>(n);
    REQUIRE(rate == Catch::Approx(sigmoid(l)).margin(0.01));
  }
}
