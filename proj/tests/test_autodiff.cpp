#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "geodepth/autodiff.hpp"
#include "test_support.hpp"

using namespace geodepth;
using ad::Tape;
using ad::Var;

namespace {

using Op = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of sum(w * op(inputs)) with central
/// differences for every input element.
void check_gradients(const Op& op, const std::vector<Tensor<double>>& inputs, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  Tensor<double> weights;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    weights = oracle::random_tensor<double>(op(tape, vars).shape(), rng, -1, 1);
  }
  auto objective = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : in) vars.push_back(tape.constant(t));
    return ad::sum(ad::mul(op(tape, vars), tape.constant(weights))).value()[0];
  };
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  tape.backward(ad::sum(ad::mul(op(tape, vars), tape.constant(weights))));
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> g = tape.has_grad(vars[k].id) ? tape.grad(vars[k].id) : Tensor<double>(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (objective(plus) - objective(minus)) / (2 * h);
      ASSERT_NEAR(g[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " element " << i;
    }
  }
}

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor<double>(s, rng, lo, hi);
}

const Shape kImg{1, 2, 5, 6};

}  // namespace

TEST(Autodiff, Elementwise) {
  check_gradients([](auto&, const auto& v) { return ad::add(v[0], v[1]); }, {rnd(kImg, 1), rnd(kImg, 2)});
  check_gradients([](auto&, const auto& v) { return ad::sub(v[0], v[1]); }, {rnd(kImg, 3), rnd(kImg, 4)});
  check_gradients([](auto&, const auto& v) { return ad::mul(v[0], v[1]); }, {rnd(kImg, 5), rnd(kImg, 6)});
  check_gradients([](auto&, const auto& v) { return ad::div(v[0], v[1]); }, {rnd(kImg, 7), rnd(kImg, 8, 0.5, 2)});
  check_gradients([](auto&, const auto& v) { return ad::affine(v[0], 2.5, -1.0); }, {rnd(kImg, 9)});
  check_gradients([](auto&, const auto& v) { return ad::elu(v[0]); }, {rnd(kImg, 10)});
  check_gradients([](auto&, const auto& v) { return ad::sigmoid(v[0]); }, {rnd(kImg, 11, -4, 4)});
  check_gradients([](auto&, const auto& v) { return ad::reciprocal(v[0]); }, {rnd(kImg, 12, 0.5, 3)});
  check_gradients([](auto&, const auto& v) { return ad::abs(v[0]); }, {rnd(kImg, 13)});
}

TEST(Autodiff, Reductions) {
  check_gradients([](auto&, const auto& v) { return ad::sum(v[0]); }, {rnd(kImg, 20)});
  check_gradients([](auto&, const auto& v) { return ad::mean(v[0]); }, {rnd(kImg, 21)});
  check_gradients([](auto&, const auto& v) { return ad::channel_mean(v[0]); }, {rnd(kImg, 22)});
  check_gradients([](auto&, const auto& v) { return ad::global_avg_pool(v[0]); }, {rnd(kImg, 23)});
  check_gradients([](auto&, const auto& v) { return ad::div_by_scalar(v[0], ad::mean(v[0]), 1e-7); },
                  {rnd(kImg, 24, 0.2, 1)});
  Tensor<double> mask(Shape{1, 1, 5, 6});
  for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1;
  check_gradients([&](auto&, const auto& v) { return ad::masked_mean(v[0], mask); }, {rnd(Shape{1, 1, 5, 6}, 25)});
}

TEST(Autodiff, MaskedMeanOfEmptyMaskIsZero) {
  Tape<double> tape;
  const auto v = ad::masked_mean(tape.leaf(rnd(Shape{1, 1, 3, 3}, 1)), Tensor<double>(Shape{1, 1, 3, 3}));
  EXPECT_EQ(v.value()[0], 0.0);
}

TEST(Autodiff, Spatial) {
  check_gradients([](auto&, const auto& v) { return ad::diff_x(v[0]); }, {rnd(kImg, 30)});
  check_gradients([](auto&, const auto& v) { return ad::diff_y(v[0]); }, {rnd(kImg, 31)});
  check_gradients([](auto&, const auto& v) { return ad::avg_pool3x3(v[0]); }, {rnd(kImg, 32)});
  check_gradients([](auto&, const auto& v) { return ad::upsample_nearest2x(v[0]); }, {rnd(kImg, 33)});
  check_gradients([](auto&, const auto& v) { return ad::resize_bilinear(v[0], 12, 10); }, {rnd(kImg, 34)});
  check_gradients([](auto&, const auto& v) { return ad::resize_bilinear(v[0], 3, 4); }, {rnd(kImg, 35)});
  check_gradients([](auto&, const auto& v) { return ad::concat_channels(v[0], v[1]); },
                  {rnd(kImg, 36), rnd(Shape{1, 3, 5, 6}, 37)});
}

TEST(Autodiff, Conv2d) {
  for (int stride : {1, 2}) {
    check_gradients([stride](auto&, const auto& v) { return ad::conv2d(v[0], v[1], v[2], stride, 1); },
                    {rnd(Shape{1, 3, 6, 8}, 40), rnd(Shape{4, 3, 3, 3}, 41), rnd(Shape{1, 4, 1, 1}, 42)});
  }
  check_gradients([](auto&, const auto& v) { return ad::conv2d(v[0], v[1], v[2], 1, 0); },
                  {rnd(Shape{1, 5, 1, 1}, 43), rnd(Shape{6, 5, 1, 1}, 44), rnd(Shape{1, 6, 1, 1}, 45)});
}

TEST(Autodiff, Conv2dMatchesDirectLoop) {
  const auto x = rnd(Shape{1, 3, 7, 9}, 50);
  const auto w = rnd(Shape{4, 3, 3, 3}, 51);
  const auto b = rnd(Shape{1, 4, 1, 1}, 52);
  for (int stride : {1, 2}) {
    Tape<double> tape;
    const auto y = ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, 1).value();
    const int oh = (7 + 2 - 3) / stride + 1, ow = (9 + 2 - 3) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{1, 4, oh, ow}));
    for (int o = 0; o < 4; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[o];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = yy * stride + ky - 1, ix = xx * stride + kx - 1;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 9) continue;
                acc += w[((o * 3 + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
              }
          EXPECT_NEAR(y.at(o, yy, xx), acc, 1e-12);
        }
  }
}

TEST(Autodiff, AvgPoolReflectsAtBorders) {
  Tensor<double> t(Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) t[i] = static_cast<double>(i);
  Tape<double> tape;
  const auto p = ad::avg_pool3x3(tape.constant(t)).value();
  // Corner (0,0): rows {1,0,1}, cols {1,0,1} -> values of t at those indices.
  double expect = 0;
  for (int y : {1, 0, 1})
    for (int x : {1, 0, 1}) expect += t.at(0, y, x);
  EXPECT_NEAR(p.at(0, 0, 0), expect / 9, 1e-12);
  EXPECT_NEAR(p.at(0, 1, 1), 4.0, 1e-12);
}

TEST(Autodiff, GradientAccumulatesOverReuse) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  auto y = ad::add(ad::mul(x, x), x);  // x^2 + x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x.id)[0], 7.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, 2.0));
  auto x = tape.leaf(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  tape.backward(ad::mul(c, x));
  EXPECT_FALSE(tape.has_grad(c.id));
  EXPECT_DOUBLE_EQ(tape.grad(x.id)[0], 2.0);
}
