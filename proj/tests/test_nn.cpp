#include <doctest.h>

#include <cmath>
#include <functional>

#include "voxseg/nn/losses.hpp"
#include "voxseg/nn/ops.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;
using nn::NodePtr;

namespace {

// deterministic fill in (-1, 1)
void fill_random(Tensor<double>& t, CounterRng& rng) {
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
}

// scalar reduction with fixed random coefficients so every output element
// contributes a distinct weight to the gradient
NodePtr<double> weighted_sum(const NodePtr<double>& x, const std::vector<double>& coeff) {
  REQUIRE(static_cast<std::int64_t>(coeff.size()) == x->value.size());
  double acc = 0;
  for (std::int64_t i = 0; i < x->value.size(); ++i) acc += coeff[static_cast<std::size_t>(i)] * x->value[i];
  Tensor<double> out(std::vector<std::int64_t>{});
  out.data.assign(1, acc);
  auto c = std::make_shared<std::vector<double>>(coeff);
  return nn::make_op<double>(std::move(out), {x}, [x, c](nn::Node<double>& self) {
    for (std::int64_t i = 0; i < x->grad.size(); ++i)
      x->grad[i] += self.grad[0] * (*c)[static_cast<std::size_t>(i)];
  });
}

// Central finite differences on every element of every parameter. `fwd`
// rebuilds the graph from the parameters' current values and returns the
// scalar loss value.
void check_gradients(const std::vector<NodePtr<double>>& params,
                     const std::function<double()>& fwd,
                     const std::function<NodePtr<double>()>& graph, double tol = 1e-6) {
  for (auto& p : params) p->zero_grad();
  auto root = graph();
  nn::backward(root);
  const double h = 1e-5;
  for (auto& p : params) {
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      double save = p->value[i];
      p->value[i] = save + h;
      double up = fwd();
      p->value[i] = save - h;
      double down = fwd();
      p->value[i] = save;
      double fd = (up - down) / (2 * h);
      double an = p->grad[i];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

std::vector<double> coeffs(std::int64_t n, CounterRng& rng) {
  std::vector<double> c(static_cast<std::size_t>(n));
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  return c;
}

// naive direct convolution used as an independent forward oracle
Tensor<double> conv3d_direct(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::int64_t stride, std::int64_t pad) {
  const std::int64_t n_batch = x.dim(0), cin = x.dim(1);
  const std::int64_t d = x.dim(2), hh = x.dim(3), ww = x.dim(4);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  const std::int64_t od = (d + 2 * pad - k) / stride + 1;
  const std::int64_t oh = (hh + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (ww + 2 * pad - k) / stride + 1;
  Tensor<double> y({n_batch, cout, od, oh, ow});
  for (std::int64_t n = 0; n < n_batch; ++n)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t zo = 0; zo < od; ++zo)
        for (std::int64_t yo = 0; yo < oh; ++yo)
          for (std::int64_t xo = 0; xo < ow; ++xo) {
            double acc = b.size() ? b[co] : 0.0;
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t kz = 0; kz < k; ++kz)
                for (std::int64_t ky = 0; ky < k; ++ky)
                  for (std::int64_t kx = 0; kx < k; ++kx) {
                    std::int64_t iz = zo * stride + kz - pad;
                    std::int64_t iy = yo * stride + ky - pad;
                    std::int64_t ix = xo * stride + kx - pad;
                    if (iz < 0 || iz >= d || iy < 0 || iy >= hh || ix < 0 || ix >= ww) continue;
                    acc += x.data[static_cast<std::size_t>(
                               (((n * cin + ci) * d + iz) * hh + iy) * ww + ix)] *
                           w.data[static_cast<std::size_t>(
                               (((co * cin + ci) * k + kz) * k + ky) * k + kx)];
                  }
            y.data[static_cast<std::size_t>((((n * cout + co) * od + zo) * oh + yo) * ow + xo)] =
                acc;
          }
  return y;
}

}  // namespace

TEST_CASE("conv3d forward matches a direct-loop oracle") {
  CounterRng rng(1, 0);
  for (auto [stride, pad] : {std::pair{1L, 1L}, {2L, 1L}, {1L, 0L}}) {
    Tensor<double> x({2, 3, 5, 4, 6});
    Tensor<double> w({2, 3, 3, 3, 3});
    Tensor<double> b({2});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    auto y = nn::conv3d(nn::constant(x), nn::constant(w), nn::constant(b), stride, pad);
    auto oracle = conv3d_direct(x, w, b, stride, pad);
    REQUIRE(y->value.shape == oracle.shape);
    for (std::int64_t i = 0; i < oracle.size(); ++i)
      CHECK(y->value[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d gradients match finite differences") {
  CounterRng rng(2, 0);
  Tensor<double> xv({1, 2, 4, 4, 4}), wv({3, 2, 3, 3, 3}), bv({3});
  fill_random(xv, rng);
  fill_random(wv, rng);
  fill_random(bv, rng);
  auto x = nn::parameter(xv), w = nn::parameter(wv), b = nn::parameter(bv);
  auto c = coeffs(1 * 3 * 2 * 2 * 2, rng);  // stride 2, pad 1 -> 2^3 output
  auto graph = [&] { return weighted_sum(nn::conv3d(x, w, b, 2, 1), c); };
  check_gradients({x, w, b}, [&] { return graph()->value[0]; }, graph);
}

TEST_CASE("conv_transpose3d: shape law and adjoint identity") {
  CounterRng rng(3, 0);
  Tensor<double> xv({1, 2, 3, 3, 3}), wv({2, 3, 2, 2, 2});
  fill_random(xv, rng);
  fill_random(wv, rng);
  auto y = nn::conv_transpose3d(nn::constant(xv), nn::constant(wv), NodePtr<double>{}, 2);
  // (3-1)*2 + 2 = 6
  CHECK(y->value.shape == std::vector<std::int64_t>{1, 3, 6, 6, 6});

  // <convT(x), u> == <x, conv(u)> for the matching forward conv
  Tensor<double> uv({1, 3, 6, 6, 6});
  fill_random(uv, rng);
  auto conv_u = nn::conv3d(nn::constant(uv),
                           nn::constant([&] {
                             // conv weight layout is [Cout, Cin, k...]; transpose-conv weights
                             // are [Cin, Cout, k...], so swap the first two axes
                             Tensor<double> t({2, 3, 2, 2, 2});
                             for (std::int64_t a = 0; a < 2; ++a)
                               for (std::int64_t bch = 0; bch < 3; ++bch)
                                 for (std::int64_t i = 0; i < 8; ++i)
                                   t.data[static_cast<std::size_t>((a * 3 + bch) * 8 + i)] =
                                       wv.data[static_cast<std::size_t>((a * 3 + bch) * 8 + i)];
                             return t;
                           }()),
                           NodePtr<double>{}, 2, 0);
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < y->value.size(); ++i) lhs += y->value[i] * uv[i];
  for (std::int64_t i = 0; i < conv_u->value.size(); ++i) rhs += conv_u->value[i] * xv[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv_transpose3d gradients match finite differences") {
  CounterRng rng(4, 0);
  Tensor<double> xv({1, 2, 2, 2, 2}), wv({2, 2, 2, 2, 2}), bv({2});
  fill_random(xv, rng);
  fill_random(wv, rng);
  fill_random(bv, rng);
  auto x = nn::parameter(xv), w = nn::parameter(wv), b = nn::parameter(bv);
  auto c = coeffs(1 * 2 * 4 * 4 * 4, rng);
  auto graph = [&] { return weighted_sum(nn::conv_transpose3d(x, w, b, 2), c); };
  check_gradients({x, w, b}, [&] { return graph()->value[0]; }, graph);
}

TEST_CASE("pointwise op gradients match finite differences") {
  CounterRng rng(5, 0);
  Tensor<double> xv({2, 2, 2, 2, 2}), yv({2, 2, 2, 2, 2});
  fill_random(xv, rng);
  fill_random(yv, rng);
  auto x = nn::parameter(xv), y = nn::parameter(yv);
  auto c = coeffs(xv.size(), rng);

  SUBCASE("leaky_relu") {
    auto graph = [&] { return weighted_sum(nn::leaky_relu(x, 0.01), c); };
    check_gradients({x}, [&] { return graph()->value[0]; }, graph, 1e-5);
  }
  SUBCASE("sigmoid") {
    auto graph = [&] { return weighted_sum(nn::sigmoid(x), c); };
    check_gradients({x}, [&] { return graph()->value[0]; }, graph);
  }
  SUBCASE("add and scale") {
    auto graph = [&] { return weighted_sum(nn::scale(nn::add(x, y), 1.7), c); };
    check_gradients({x, y}, [&] { return graph()->value[0]; }, graph);
  }
  SUBCASE("concat_channels") {
    auto c2 = coeffs(2 * xv.size(), rng);
    auto graph = [&] { return weighted_sum(nn::concat_channels(x, y), c2); };
    check_gradients({x, y}, [&] { return graph()->value[0]; }, graph);
  }
}

TEST_CASE("group_norm: unit gamma / zero beta yields per-group 0/1 statistics") {
  CounterRng rng(6, 0);
  Tensor<double> xv({2, 4, 3, 3, 3});
  fill_random(xv, rng);
  Tensor<double> g({4}), b({4});
  g.fill(1.0);
  auto out = nn::group_norm(nn::constant(xv), nn::constant(g), nn::constant(b), 2, 1e-10);
  const std::int64_t vox = 27, cpg = 2;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t grp = 0; grp < 2; ++grp) {
      double mean = 0, var = 0;
      const double* o = out->value.data.data() + (n * 4 + grp * cpg) * vox;
      for (std::int64_t i = 0; i < cpg * vox; ++i) mean += o[i];
      mean /= cpg * vox;
      for (std::int64_t i = 0; i < cpg * vox; ++i) var += (o[i] - mean) * (o[i] - mean);
      var /= cpg * vox;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("group_norm gradients match finite differences") {
  CounterRng rng(7, 0);
  Tensor<double> xv({2, 4, 2, 2, 2}), gv({4}), bv({4});
  fill_random(xv, rng);
  for (auto& v : gv.data) v = rng.uniform(0.5, 1.5);
  fill_random(bv, rng);
  auto x = nn::parameter(xv), g = nn::parameter(gv), b = nn::parameter(bv);
  auto c = coeffs(xv.size(), rng);
  auto graph = [&] { return weighted_sum(nn::group_norm(x, g, b, 2, 1e-5), c); };
  check_gradients({x, g, b}, [&] { return graph()->value[0]; }, graph, 1e-5);
}

TEST_CASE("batch_norm gradients match finite differences") {
  CounterRng rng(8, 0);
  Tensor<double> xv({3, 2, 2, 2, 2}), gv({2}), bv({2});
  fill_random(xv, rng);
  for (auto& v : gv.data) v = rng.uniform(0.5, 1.5);
  fill_random(bv, rng);
  auto x = nn::parameter(xv), g = nn::parameter(gv), b = nn::parameter(bv);
  auto c = coeffs(xv.size(), rng);
  auto graph = [&] { return weighted_sum(nn::batch_norm(x, g, b, 1e-5), c); };
  check_gradients({x, g, b}, [&] { return graph()->value[0]; }, graph, 1e-5);
}

TEST_CASE("batch_norm couples samples; group_norm does not") {
  CounterRng rng(9, 0);
  Tensor<double> a({1, 4, 2, 2, 2}), other({1, 4, 2, 2, 2});
  fill_random(a, rng);
  fill_random(other, rng);
  Tensor<double> pair({2, 4, 2, 2, 2});
  std::copy(a.data.begin(), a.data.end(), pair.data.begin());
  std::copy(other.data.begin(), other.data.end(), pair.data.begin() + a.size());
  Tensor<double> g({4}), b({4});
  g.fill(1.0);

  auto gn_single = nn::group_norm(nn::constant(a), nn::constant(g), nn::constant(b), 2, 1e-5);
  auto gn_pair = nn::group_norm(nn::constant(pair), nn::constant(g), nn::constant(b), 2, 1e-5);
  for (std::int64_t i = 0; i < a.size(); ++i)
    CHECK(gn_single->value[i] == doctest::Approx(gn_pair->value[i]).epsilon(1e-12));

  auto bn_single = nn::batch_norm(nn::constant(a), nn::constant(g), nn::constant(b), 1e-5);
  auto bn_pair = nn::batch_norm(nn::constant(pair), nn::constant(g), nn::constant(b), 1e-5);
  double max_diff = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    max_diff = std::max(max_diff, std::abs(bn_single->value[i] - bn_pair->value[i]));
  CHECK(max_diff > 1e-3);
}

TEST_CASE("mse_loss value and gradient") {
  Tensor<double> pv({2, 2}), tv({2, 2});
  pv.data = {1.0, 2.0, 3.0, 4.0};
  tv.data = {1.0, 0.0, 3.0, 2.0};
  auto p = nn::parameter(pv);
  auto loss = nn::mse_loss(p, tv);
  CHECK(loss->value[0] == doctest::Approx(2.0));  // (0 + 4 + 0 + 4) / 4
  nn::backward(loss);
  CHECK(p->grad[1] == doctest::Approx(2.0 * 2.0 / 4.0));
  CHECK(p->grad[0] == doctest::Approx(0.0));
}

TEST_CASE("backward through a diamond-shaped graph accumulates both paths") {
  Tensor<double> xv({1});
  xv.data = {3.0};
  auto x = nn::parameter(xv);
  auto a = nn::scale(x, 2.0);
  auto b = nn::scale(x, 5.0);
  auto y = nn::add(a, b);  // y = 7x
  nn::backward(y);
  CHECK(x->grad[0] == doctest::Approx(7.0));
}
