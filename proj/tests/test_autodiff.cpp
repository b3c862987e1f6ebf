// Gradient checks for every autodiff op: analytic backward vs central finite
// differences on small random tensors.

#include <catch2/catch_amalgamated.hpp>

#include "coligen/autodiff.hpp"
#include "testutil.hpp"

using coligen::IntImage;
using coligen::Rng;
using coligen::Tensor;
using coligen::ad::Graph;
using testutil::max_rel_err;
using testutil::numeric_grad;
using testutil::random_tensor;

namespace {

// Checks d(f)/d(xs) for a graph-building function; xs all require grad.
void check_grads(
    const std::function<int(Graph<double>&, const std::vector<int>&)>& build,
    std::vector<Tensor<double>> xs, double tol = 1e-6) {
  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Graph<double> g;
    std::vector<int> ids;
    for (const auto& v : vals) ids.push_back(g.input(v, false));
    return g.value_scalar(build(g, ids));
  };
  auto num = numeric_grad(eval, xs);

  Graph<double> g;
  std::vector<int> ids;
  for (const auto& v : xs) ids.push_back(g.input(v, true));
  int root = build(g, ids);
  g.backward(root);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    INFO("tensor " << t);
    REQUIRE(max_rel_err(g.grad(ids[t]), num[t]) < tol);
  }
}

}  // namespace

TEST_CASE("conv2d forward matches direct convolution") {
  Rng rng(11);
  Tensor<double> x = random_tensor({2, 5, 7}, rng);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  Graph<double> g;
  int y = g.conv2d(g.input(x, false), g.input(w, false), g.input(b, false), 1, 1);
  const auto& yv = g.value(y);
  REQUIRE(yv.shape() == std::vector<std::size_t>{3, 5, 7});
  // direct evaluation at a few positions
  for (auto [co, oi, oj] : {std::array<std::size_t, 3>{0, 0, 0},
                            {2, 4, 6},
                            {1, 2, 3}}) {
    double acc = b[co];
    for (std::size_t ci = 0; ci < 2; ++ci)
      for (std::size_t ki = 0; ki < 3; ++ki)
        for (std::size_t kj = 0; kj < 3; ++kj) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi + ki) - 1;
          std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj + kj) - 1;
          if (ii < 0 || ii >= 5 || jj < 0 || jj >= 7) continue;
          acc += x.at(ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                 w[((co * 2 + ci) * 3 + ki) * 3 + kj];
        }
    REQUIRE(yv.at(co, oi, oj) == Catch::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients (stride 1 and 2)") {
  Rng rng(42);
  for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
    check_grads(
        [&](Graph<double>& g, const std::vector<int>& ids) {
          int y = g.conv2d(ids[0], ids[1], ids[2], stride, 1);
          return g.mean_all(g.mul(y, y));
        },
        {random_tensor({2, 6, 8}, rng), random_tensor({3, 2, 3, 3}, rng, 0.5),
         random_tensor({3}, rng, 0.5)});
  }
}

TEST_CASE("upsample_nearest2x gradients") {
  Rng rng(7);
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        return g.mean_all(g.mul(g.upsample_nearest2x(ids[0]), g.upsample_nearest2x(ids[0])));
      },
      {random_tensor({2, 3, 4}, rng)});
}

TEST_CASE("instance_norm gradients") {
  Rng rng(13);
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        int y = g.instance_norm(ids[0], ids[1], ids[2], 1e-5);
        return g.mean_all(g.mul(y, y));
      },
      {random_tensor({3, 4, 5}, rng), random_tensor({3}, rng, 0.5),
       random_tensor({3}, rng, 0.5)},
      1e-5);
}

TEST_CASE("activation gradients") {
  Rng rng(5);
  // offsets keep values away from the relu kink
  Tensor<double> x = random_tensor({2, 3, 4}, rng);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = 0.1;
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        int a = g.relu(ids[0]);
        int b = g.leaky_relu(ids[0], 0.2);
        int c = g.tanh_op(ids[0]);
        int d = g.sigmoid_op(ids[0]);
        int e = g.softplus(ids[0]);
        return g.weighted_sum({{g.mean_all(a), 1.0},
                               {g.mean_all(b), 0.7},
                               {g.mean_all(c), -0.3},
                               {g.mean_all(d), 0.9},
                               {g.mean_all(e), 0.4}});
      },
      {x});
}

TEST_CASE("elementwise and structural op gradients") {
  Rng rng(21);
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        int s = g.add(ids[0], g.scale(ids[1], -0.7));
        s = g.add_scalar(s, 0.3);
        s = g.mul(s, ids[1]);
        int sl = g.slice_channels(g.concat2(s, ids[0]), 1, 3);
        return g.mean_all(g.mul(sl, sl));
      },
      {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)});
}

TEST_CASE("mul_channel_broadcast gradients") {
  Rng rng(33);
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        int y = g.mul_channel_broadcast(ids[0], ids[1]);
        return g.mean_all(g.mul(y, y));
      },
      {random_tensor({3, 4, 5}, rng), random_tensor({1, 4, 5}, rng)});
}

TEST_CASE("embedding gradients") {
  Rng rng(9);
  IntImage ids(3, 4);
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids.data[i] = static_cast<std::int32_t>(rng.integer(5));
  ids.data[0] = 99;  // out-of-table id must fall back to row 0
  check_grads(
      [&](Graph<double>& g, const std::vector<int>& xs) {
        int y = g.embedding(ids, xs[0]);
        return g.mean_all(g.mul(y, y));
      },
      {random_tensor({5, 3}, rng)});
}

TEST_CASE("gather/linear/l2norm/matmul gradients") {
  Rng rng(17);
  std::vector<std::size_t> locs = {0, 5, 11, 3};
  check_grads(
      [&](Graph<double>& g, const std::vector<int>& ids) {
        int rows = g.gather_rows(ids[0], locs);           // (4, 2)
        int h = g.linear(rows, ids[1], ids[2]);           // (4, 3)
        int n = g.l2_normalize_rows(h);                   // (4, 3)
        int s = g.matmul_nt(n, n);                        // (4, 4)
        return g.mean_all(s);
      },
      {random_tensor({2, 3, 4}, rng), random_tensor({3, 2}, rng),
       random_tensor({3}, rng)});
}

TEST_CASE("nce_diag_mean gradients and value") {
  Rng rng(23);
  Tensor<double> s = random_tensor({5, 5}, rng, 0.3);
  // reference value by direct softmax cross-entropy
  double want = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(s.at(i, j) / 0.07);
    want += std::log(z) - s.at(i, i) / 0.07;
  }
  want /= 5.0;
  Graph<double> g;
  int id = g.input(s, false);
  REQUIRE(g.value_scalar(g.nce_diag_mean(id, 0.07)) == Catch::Approx(want).epsilon(1e-10));

  check_grads(
      [](Graph<double>& gr, const std::vector<int>& ids) {
        return gr.nce_diag_mean(ids[0], 0.07);
      },
      {s}, 1e-5);
}

TEST_CASE("reduction and scalar op gradients") {
  Rng rng(29);
  check_grads(
      [](Graph<double>& g, const std::vector<int>& ids) {
        return g.weighted_sum({{g.mean_all(ids[0]), 0.5},
                               {g.sum_all(ids[0]), 0.01},
                               {g.mse_to(ids[0], 0.25), 2.0}});
      },
      {random_tensor({3, 4}, rng)});
}

TEST_CASE("straight-through threshold: binary forward, relaxed backward") {
  Rng rng(31);
  Tensor<double> u = random_tensor({2, 3}, rng);
  Graph<double> g;
  int x = g.input(u, true);
  int y = g.st_threshold(x);
  const auto& yv = g.value(y);
  for (std::size_t i = 0; i < yv.size(); ++i) {
    REQUIRE((yv[i] == 0.0 || yv[i] == 1.0));
    REQUIRE(yv[i] == (u[i] >= 0.0 ? 1.0 : 0.0));
  }
  int loss = g.sum_all(y);
  g.backward(loss);
  for (std::size_t i = 0; i < u.size(); ++i) {
    double sig = 1.0 / (1.0 + std::exp(-u[i]));
    REQUIRE(g.grad(x)[i] == Catch::Approx(sig * (1 - sig)).epsilon(1e-12));
  }
}

TEST_CASE("parameter leases accumulate across multiple uses") {
  Rng rng(37);
  coligen::ad::ParamTensor<double> p("w", {2, 2});
  for (std::size_t i = 0; i < 4; ++i) p.value[i] = rng.normal();

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Graph<double> g;
    coligen::ad::ParamTensor<double> q("w", {2, 2});
    q.value = vals[0];
    int a = g.leaf(q);
    int b = g.leaf(q);
    return g.value_scalar(g.mean_all(g.mul(a, g.add(b, a))));
  };
  auto num = numeric_grad(eval, {p.value});

  Graph<double> g;
  int a = g.leaf(p);
  int b = g.leaf(p);
  g.backward(g.mean_all(g.mul(a, g.add(b, a))));
  REQUIRE(max_rel_err(p.grad, num[0]) < 1e-6);
}
