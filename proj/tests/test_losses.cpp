#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coligen/losses.hpp"
#include "coligen/nets.hpp"
#include "testutil.hpp"

using namespace coligen;
using losses::GanMode;
using losses::GanRole;

namespace {

std::vector<double> unit_axis(std::size_t dim, std::size_t axis) {
  std::vector<double> v(dim, 0.0);
  v[axis] = 1.0;
  return v;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace

TEST_CASE("gan_loss: least-squares and vanilla anchors") {
  std::vector<double> ones(6, 1.0), zeros(6, 0.0);
  REQUIRE(losses::gan_loss(ones, zeros, GanRole::discriminator, GanMode::least_squares) ==
          Catch::Approx(0.0));
  REQUIRE(losses::gan_loss(ones, ones, GanRole::generator, GanMode::least_squares) ==
          Catch::Approx(0.0));
  // scores at sigmoid = 0.5 give the symmetric vanilla value 2 ln 2
  REQUIRE(losses::gan_loss(zeros, zeros, GanRole::discriminator, GanMode::vanilla) ==
          Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  REQUIRE_THROWS_AS(
      losses::gan_loss({}, {}, GanRole::discriminator, GanMode::least_squares),
      InputError);
  REQUIRE_THROWS_AS(losses::gan_loss(ones, {}, GanRole::generator, GanMode::vanilla),
                    InputError);
}

TEST_CASE("gan_loss graph form matches the plain form") {
  Rng rng(4);
  std::vector<double> real(24), fake(24);
  for (auto& v : real) v = rng.normal();
  for (auto& v : fake) v = rng.normal();
  for (GanMode mode : {GanMode::least_squares, GanMode::vanilla}) {
    for (GanRole role : {GanRole::discriminator, GanRole::generator}) {
      double plain = losses::gan_loss(real, fake, role, mode);
      ad::Graph<double> g;
      Tensor<double> rt({4, 6}), ft({4, 6});
      std::copy(real.begin(), real.end(), rt.data());
      std::copy(fake.begin(), fake.end(), ft.data());
      int node = losses::gan_loss_node(g, g.input(rt, false), g.input(ft, false),
                                       role, mode);
      REQUIRE(g.value_scalar(node) == Catch::Approx(plain).epsilon(1e-12));
    }
  }
}

TEST_CASE("patch_nce_single: anchors from the contrastive formula") {
  const double tau = 0.07;
  // anchor = positive = e1, one orthogonal negative
  double v = losses::patch_nce_single(unit_axis(4, 0), unit_axis(4, 0),
                                      {unit_axis(4, 1)}, tau);
  REQUIRE(v == Catch::Approx(std::log1p(std::exp(-1.0 / tau))).epsilon(1e-9));
  REQUIRE(v < 1e-5);

  // all similarities equal -> ln(K+1)
  Rng rng(9);
  auto anchor = random_unit(16, rng);
  std::vector<std::vector<double>> negs_same = {anchor};
  REQUIRE(losses::patch_nce_single(anchor, anchor, negs_same, tau) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<std::vector<double>> many(7, anchor);
  REQUIRE(losses::patch_nce_single(anchor, anchor, many, tau) ==
          Catch::Approx(std::log(8.0)).epsilon(1e-12));

  // anchor orthogonal to positive, negative equals the anchor: ~ 1/tau
  double hard = losses::patch_nce_single(unit_axis(4, 0), unit_axis(4, 1),
                                         {unit_axis(4, 0)}, tau);
  REQUIRE(hard == Catch::Approx(1.0 / tau).margin(1e-3));

  // degenerate: no negatives -> 0
  REQUIRE(losses::patch_nce_single(unit_axis(4, 0), unit_axis(4, 0), {}, tau) ==
          Catch::Approx(0.0).margin(1e-15));

  // non-unit vectors rejected
  std::vector<double> big(4, 2.0);
  REQUIRE_THROWS_AS(losses::patch_nce_single(big, unit_axis(4, 0), {}, tau),
                    InputError);
}

TEST_CASE("patch_nce_single properties: positivity, monotonicity, swaps") {
  const double tau = 0.07;
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto anchor = random_unit(8, rng);
    auto pos = random_unit(8, rng);
    std::vector<std::vector<double>> negs;
    for (int k = 0; k < 5; ++k) negs.push_back(random_unit(8, rng));
    double base = losses::patch_nce_single(anchor, pos, negs, tau);
    REQUIRE(base >= 0.0);

    // moving the positive toward the anchor strictly decreases the loss
    std::vector<double> closer(8);
    double n = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      closer[i] = 0.5 * pos[i] + 0.5 * anchor[i];
      n += closer[i] * closer[i];
    }
    for (auto& x : closer) x /= std::sqrt(n);
    double moved = losses::patch_nce_single(anchor, closer, negs, tau);
    double s_pos = 0, s_closer = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      s_pos += anchor[i] * pos[i];
      s_closer += anchor[i] * closer[i];
    }
    if (s_closer > s_pos) REQUIRE(moved < base);

    // swapping the positive with a weaker negative cannot decrease the loss
    double s_neg = 0;
    for (std::size_t i = 0; i < 8; ++i) s_neg += anchor[i] * negs[0][i];
    if (s_pos >= s_neg) {
      auto negs_swapped = negs;
      negs_swapped[0] = pos;
      double swapped = losses::patch_nce_single(anchor, negs[0], negs_swapped, tau);
      REQUIRE(swapped >= base - 1e-12);
    }
  }
}

TEST_CASE("softmax shift invariance within 1e-9") {
  const double tau = 0.07;
  Rng rng(13);
  auto anchor = random_unit(8, rng);
  auto pos = random_unit(8, rng);
  std::vector<std::vector<double>> negs;
  for (int k = 0; k < 4; ++k) negs.push_back(random_unit(8, rng));
  double base = losses::patch_nce_single(anchor, pos, negs, tau);

  // adding a constant to every similarity logit leaves the loss unchanged;
  // realized by shifting the similarity inputs of the underlying softmax
  ad::Graph<double> g;
  Tensor<double> sims({5, 5});
  Rng sr(17);
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i] = sr.uniform(-1, 1);
  double v0 = g.value_scalar(g.nce_diag_mean(g.input(sims, false), tau));
  Tensor<double> shifted = sims;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.37;
  double v1 = g.value_scalar(g.nce_diag_mean(g.input(shifted, false), tau));
  REQUIRE(std::abs(v0 - v1) < 1e-9);
  REQUIRE(base >= 0.0);
}

TEST_CASE("patch_nce over stacks: dual route against patch_nce_single") {
  // Small model, real heads: the graph loss must equal the hand-computed
  // mean of Eq.-(8) terms over sampled locations and layers.
  rangeview::SensorConfig sc;
  sc.height = 16;
  sc.width = 32;
  nets::GeneratorSpec gs;
  gs.base_width = 4;
  gs.n_resblocks = 2;
  gs.tap_layers = nets::GeneratorSpec::default_taps(2);
  auto m = nets::Model<double>::build(gs, {4, 6}, {8, 2}, sc, 19);

  Rng xr(23);
  Tensor<double> x({2, 16, 32}), y({2, 16, 32});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = xr.uniform(-1, 1);
    y[i] = xr.uniform(-1, 1);
  }

  ad::Graph<double> g;
  nets::FeatureStack sx, sy;
  m.generator->encode(g, g.input(x, false), false, &sx);
  m.generator->encode(g, g.input(y, false), false, &sy);
  Rng lr(29);
  auto locs = losses::sample_locations(sx.shapes, 6, lr);
  int node = losses::patch_nce_node(g, *m.heads, sx, sy, locs, 0.07, false);
  double graph_val = g.value_scalar(node);

  double manual = 0;
  for (std::size_t l = 0; l < locs.size(); ++l) {
    int zsrc = m.heads->project(g, l, sx.taps[l], locs[l], false);
    int ztr = m.heads->project(g, l, sy.taps[l], locs[l], false);
    const auto& a = g.value(ztr);  // anchors come from the translated stack
    const auto& b = g.value(zsrc);
    double layer = 0;
    for (std::size_t u = 0; u < locs[l].size(); ++u) {
      std::vector<double> anchor(a.dim(1)), pos(b.dim(1));
      for (std::size_t j = 0; j < a.dim(1); ++j) {
        anchor[j] = a.at(u, j);
        pos[j] = b.at(u, j);
      }
      std::vector<std::vector<double>> negs;
      for (std::size_t s = 0; s < locs[l].size(); ++s) {
        if (s == u) continue;
        std::vector<double> nvec(b.dim(1));
        for (std::size_t j = 0; j < b.dim(1); ++j) nvec[j] = b.at(s, j);
        negs.push_back(std::move(nvec));
      }
      layer += losses::patch_nce_single(anchor, pos, negs, 0.07);
    }
    manual += layer / static_cast<double>(locs[l].size());
  }
  manual /= static_cast<double>(locs.size());
  REQUIRE(graph_val == Catch::Approx(manual).epsilon(1e-9));

  // identical stacks minimize the loss relative to mismatched ones
  int self_node = losses::patch_nce_node(g, *m.heads, sx, sx, locs, 0.07, false);
  REQUIRE(g.value_scalar(self_node) <= graph_val);
  REQUIRE(g.value_scalar(self_node) >= 0.0);

  // one location per layer: no negatives, loss is exactly zero
  std::vector<std::vector<std::size_t>> single;
  for (std::size_t l = 0; l < locs.size(); ++l) single.push_back({locs[l][0]});
  int degen = losses::patch_nce_node(g, *m.heads, sx, sy, single, 0.07, false);
  REQUIRE(g.value_scalar(degen) == Catch::Approx(0.0).margin(1e-12));

  // out-of-bounds location is rejected
  auto bad = locs;
  bad[0][0] = 1u << 20;
  REQUIRE_THROWS_AS(losses::patch_nce_node(g, *m.heads, sx, sy, bad, 0.07, false),
                    InputError);
}

TEST_CASE("random independent stacks concentrate near ln(64)") {
  // Monte-Carlo oracle over synthetic unit embeddings in R^256.
  Rng rng(31);
  const std::size_t n = 64, dim = 256;
  double acc = 0;
  const int trials = 10;
  for (int t = 0; t < trials; ++t) {
    Tensor<double> a({n, dim}), b({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
      auto va = random_unit(dim, rng);
      auto vb = random_unit(dim, rng);
      for (std::size_t j = 0; j < dim; ++j) {
        a.at(i, j) = va[j];
        b.at(i, j) = vb[j];
      }
    }
    ad::Graph<double> g;
    int sims = g.matmul_nt(g.input(a, false), g.input(b, false));
    acc += g.value_scalar(g.nce_diag_mean(sims, 0.07));
  }
  acc /= trials;
  REQUIRE(acc == Catch::Approx(std::log(64.0)).epsilon(0.15));
}

TEST_CASE("total_loss arithmetic and breakdown") {
  losses::LossConfig cfg;  // lambda_nce = 1, lambda_idt = 2
  auto t = losses::total_loss(1.0, 1.0, 1.0, cfg);
  REQUIRE(t.total == Catch::Approx(4.0));

  losses::LossConfig off;
  off.lambda_nce = 0;
  off.lambda_idt = 0;
  auto gan_only = losses::total_loss(0.73, 5.0, 9.0, off);
  REQUIRE(gan_only.total == Catch::Approx(0.73));

  Rng rng(37);
  for (int i = 0; i < 10; ++i) {
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    auto r = losses::total_loss(a, b, c, cfg);
    REQUIRE(std::abs(r.total - (r.gan + cfg.lambda_nce * r.nce_x +
                                cfg.lambda_idt * r.nce_y)) < 1e-9);
  }

  losses::LossConfig bad;
  bad.tau = 0;
  REQUIRE_THROWS_AS(bad.validate(), InputError);
}
