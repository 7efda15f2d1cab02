#ifndef GEODEPTH_AUTODIFF_HPP
#define GEODEPTH_AUTODIFF_HPP

// Minimal reverse-mode differentiation over Tensor values.
//
// A Tape records every operation in creation order; backward() walks it in
// reverse. Nodes that do not depend on any leaf keep no closure, so the same
// op code serves both training (float, with gradients) and plain evaluation.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "geodepth/tensor.hpp"

namespace geodepth::ad {

template <typename T>
class Tape;

/// Handle to a node on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// A differentiable input (network parameter, probed input).
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || requires_grad(p.id);
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward backward) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || requires_grad(p.id);
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
      n.grad = Tensor<T>(n.value.shape());
    }
    return n.grad;
  }
  bool has_grad(int id) const {
    const Node& n = nodes_[id];
    return n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape();
  }

  /// Accumulates d(root)/d(node) into every node that requires a gradient.
  void backward(Var<T> root) {
    if (value(root.id).size() != 1) throw ShapeError("backward() needs a scalar root");
    grad(root.id)[0] = T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || !has_grad(id)) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, bool rg, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.grad = Tensor<T>(Shape{0, 0, 0, 0}, std::vector<T>{});
    n.requires_grad = rg;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
};

namespace detail {

template <typename T>
void accumulate(Tape<T>& tape, Var<T> v, const Tensor<T>& g) {
  if (!tape.requires_grad(v.id)) return;
  Tensor<T>& dst = tape.grad(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

/// Elementwise op y = f(x) with dy/dx = df(x).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(std::move(y), {a}, [a, df](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    const Tensor<T>& xv = tape.value(a.id);
    Tensor<T>& gx = tape.grad(a.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    detail::accumulate(tape, a, g);
    detail::accumulate(tape, b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    detail::accumulate(tape, a, g);
    if (tape.requires_grad(b.id)) {
      Tensor<T>& gb = tape.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& av = tape.value(a.id);
    const Tensor<T>& bv2 = tape.value(b.id);
    if (tape.requires_grad(a.id)) {
      Tensor<T>& ga = tape.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tape.requires_grad(b.id)) {
      Tensor<T>& gb = tape.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "div");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& av = tape.value(a.id);
    const Tensor<T>& bv2 = tape.value(b.id);
    if (tape.requires_grad(a.id)) {
      Tensor<T>& ga = tape.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
    }
    if (tape.requires_grad(b.id)) {
      Tensor<T>& gb = tape.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv2[i] * bv2[i]);
    }
  });
}

/// y = scale * a + shift.
template <typename T>
Var<T> affine(Var<T> a, T scale, T shift) {
  Tensor<T> y = a.value();
  for (auto& v : y.values()) v = scale * v + shift;
  return a.tape->record(std::move(y), {a}, [a, scale](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

/// y = a / (s + eps) with s a scalar node.
template <typename T>
Var<T> div_by_scalar(Var<T> a, Var<T> s, T eps) {
  if (s.value().size() != 1) throw ShapeError("div_by_scalar needs a scalar divisor");
  const T denom = s.value()[0] + eps;
  Tensor<T> y = a.value();
  for (auto& v : y.values()) v /= denom;
  return a.tape->record(std::move(y), {a, s}, [a, s, denom](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& av = tape.value(a.id);
    if (tape.requires_grad(a.id)) {
      Tensor<T>& ga = tape.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / denom;
    }
    if (tape.requires_grad(s.id)) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      tape.grad(s.id)[0] -= acc / (denom * denom);
    }
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); },
      [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> elu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : std::expm1(x); },
      [](T x) { return x > T(0) ? T(1) : std::exp(x); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T x) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) - s);
      });
}

template <typename T>
Var<T> reciprocal(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / x; }, [](T x) { return T(-1) / (x * x); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  Tensor<T> y(scalar_shape(), acc);
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (auto& v : ga.values()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  return affine(sum(a), T(1) / n, T(0));
}

/// Scalar sum of a weighted by a constant mask, divided by the mask total.
/// Returns 0 when the mask is empty.
template <typename T>
Var<T> masked_mean(Var<T> a, const Tensor<T>& mask) {
  require_same_shape(a.shape(), mask.shape(), "masked_mean");
  T count = 0;
  T acc = 0;
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    count += mask[i];
    acc += mask[i] * av[i];
  }
  const T inv = count > T(0) ? T(1) / count : T(0);
  Tensor<T> y(scalar_shape(), acc * inv);
  return a.tape->record(std::move(y), {a}, [a, mask, inv](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * mask[i] * inv;
  });
}

/// Mean over channels: (1,C,H,W) -> (1,1,H,W).
template <typename T>
Var<T> channel_mean(Var<T> a) {
  const Shape s = a.shape();
  Tensor<T> y(image_shape(1, s.h, s.w));
  const T inv = T(1) / static_cast<T>(s.c);
  const Tensor<T>& av = a.value();
  for (int c = 0; c < s.c; ++c) {
    auto ch = av.channel(c);
    for (std::size_t i = 0; i < s.plane(); ++i) y[i] += ch[i] * inv;
  }
  return a.tape->record(std::move(y), {a}, [a, inv](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    const Shape sh = ga.shape();
    for (int c = 0; c < sh.c; ++c) {
      auto ch = ga.channel(c);
      for (std::size_t i = 0; i < sh.plane(); ++i) ch[i] += g[i] * inv;
    }
  });
}

/// (1,C,H,W) -> (1,C,1,1)
template <typename T>
Var<T> global_avg_pool(Var<T> a) {
  const Shape s = a.shape();
  Tensor<T> y(Shape{1, s.c, 1, 1});
  const T inv = T(1) / static_cast<T>(s.plane());
  for (int c = 0; c < s.c; ++c) {
    T acc = 0;
    for (T v : a.value().channel(c)) acc += v;
    y[c] = acc * inv;
  }
  return a.tape->record(std::move(y), {a}, [a, inv](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (int c = 0; c < ga.channels(); ++c) {
      for (auto& v : ga.channel(c)) v += g[c] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops

/// Forward difference along x: (1,C,H,W) -> (1,C,H,W-1).
template <typename T>
Var<T> diff_x(Var<T> a) {
  const Shape s = a.shape();
  Tensor<T> y(image_shape(s.c, s.h, s.w - 1));
  const Tensor<T>& av = a.value();
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < s.h; ++yy)
      for (int x = 0; x + 1 < s.w; ++x) y.at(c, yy, x) = av.at(c, yy, x + 1) - av.at(c, yy, x);
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (int c = 0; c < g.channels(); ++c)
      for (int yy = 0; yy < g.height(); ++yy)
        for (int x = 0; x < g.width(); ++x) {
          ga.at(c, yy, x + 1) += g.at(c, yy, x);
          ga.at(c, yy, x) -= g.at(c, yy, x);
        }
  });
}

/// Forward difference along y: (1,C,H,W) -> (1,C,H-1,W).
template <typename T>
Var<T> diff_y(Var<T> a) {
  const Shape s = a.shape();
  Tensor<T> y(image_shape(s.c, s.h - 1, s.w));
  const Tensor<T>& av = a.value();
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy + 1 < s.h; ++yy)
      for (int x = 0; x < s.w; ++x) y.at(c, yy, x) = av.at(c, yy + 1, x) - av.at(c, yy, x);
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (int c = 0; c < g.channels(); ++c)
      for (int yy = 0; yy < g.height(); ++yy)
        for (int x = 0; x < g.width(); ++x) {
          ga.at(c, yy + 1, x) += g.at(c, yy, x);
          ga.at(c, yy, x) -= g.at(c, yy, x);
        }
  });
}

namespace detail {
inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace detail

/// 3x3 box filter with reflection padding, per channel.
template <typename T>
Var<T> avg_pool3x3(Var<T> a) {
  const Shape s = a.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("avg_pool3x3 needs at least 2x2 input");
  const Tensor<T>& av = a.value();
  Tensor<T> y(s);
  const T ninth = T(1) / T(9);
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < s.h; ++yy)
      for (int x = 0; x < s.w; ++x) {
        T acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += av.at(c, detail::reflect(yy + dy, s.h), detail::reflect(x + dx, s.w));
        y.at(c, yy, x) = acc * ninth;
      }
  return a.tape->record(std::move(y), {a}, [a, ninth](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    const Shape sh = g.shape();
    for (int c = 0; c < sh.c; ++c)
      for (int yy = 0; yy < sh.h; ++yy)
        for (int x = 0; x < sh.w; ++x) {
          const T gv = g.at(c, yy, x) * ninth;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              ga.at(c, detail::reflect(yy + dy, sh.h), detail::reflect(x + dx, sh.w)) += gv;
        }
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample_nearest2x(Var<T> a) {
  const Shape s = a.shape();
  Tensor<T> y(image_shape(s.c, s.h * 2, s.w * 2));
  const Tensor<T>& av = a.value();
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < 2 * s.h; ++yy)
      for (int x = 0; x < 2 * s.w; ++x) y.at(c, yy, x) = av.at(c, yy / 2, x / 2);
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (int c = 0; c < g.channels(); ++c)
      for (int yy = 0; yy < g.height(); ++yy)
        for (int x = 0; x < g.width(); ++x) ga.at(c, yy / 2, x / 2) += g.at(c, yy, x);
  });
}

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename T>
Var<T> resize_bilinear(Var<T> a, int out_h, int out_w) {
  const Shape s = a.shape();
  if (s.h == out_h && s.w == out_w) return a;
  struct Tap {
    int i0, i1;
    T w1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = Tap{i0, i1, static_cast<T>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(s.h, out_h);
  const auto tx = taps(s.w, out_w);
  const Tensor<T>& av = a.value();
  Tensor<T> y(image_shape(s.c, out_h, out_w));
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < out_h; ++yy) {
      const Tap& vy = ty[yy];
      for (int x = 0; x < out_w; ++x) {
        const Tap& vx = tx[x];
        const T top = av.at(c, vy.i0, vx.i0) * (T(1) - vx.w1) + av.at(c, vy.i0, vx.i1) * vx.w1;
        const T bot = av.at(c, vy.i1, vx.i0) * (T(1) - vx.w1) + av.at(c, vy.i1, vx.i1) * vx.w1;
        y.at(c, yy, x) = top * (T(1) - vy.w1) + bot * vy.w1;
      }
    }
  return a.tape->record(std::move(y), {a}, [a, ty, tx](Tape<T>& tape, const Tensor<T>& g) {
    if (!tape.requires_grad(a.id)) return;
    Tensor<T>& ga = tape.grad(a.id);
    for (int c = 0; c < g.channels(); ++c)
      for (int yy = 0; yy < g.height(); ++yy) {
        const Tap& vy = ty[yy];
        for (int x = 0; x < g.width(); ++x) {
          const Tap& vx = tx[x];
          const T gv = g.at(c, yy, x);
          ga.at(c, vy.i0, vx.i0) += gv * (T(1) - vy.w1) * (T(1) - vx.w1);
          ga.at(c, vy.i0, vx.i1) += gv * (T(1) - vy.w1) * vx.w1;
          ga.at(c, vy.i1, vx.i0) += gv * vy.w1 * (T(1) - vx.w1);
          ga.at(c, vy.i1, vx.i1) += gv * vy.w1 * vx.w1;
        }
      }
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.h != sb.h || sa.w != sb.w) throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  Tensor<T> y(image_shape(sa.c + sb.c, sa.h, sa.w));
  std::copy(a.value().storage().begin(), a.value().storage().end(), y.data());
  std::copy(b.value().storage().begin(), b.value().storage().end(), y.data() + a.value().size());
  const std::size_t split = a.value().size();
  return a.tape->record(std::move(y), {a, b}, [a, b, split](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(a.id)) {
      Tensor<T>& ga = tape.grad(a.id);
      for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
    }
    if (tape.requires_grad(b.id)) {
      Tensor<T>& gb = tape.grad(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
    }
  });
}

/// 2-d convolution, square kernel, zero padding.
/// x: (1,C,H,W), weight: (O,C,k,k), bias: (1,O,1,1).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int pad) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<const Mat>;
  using MapM = Eigen::Map<Mat>;

  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.value().size() != static_cast<std::size_t>(ws.n)) throw ShapeError("conv2d: bias size");
  const int k = ws.h;
  const int oh = (xs.h + 2 * pad - k) / stride + 1;
  const int ow = (xs.w + 2 * pad - k) / stride + 1;
  const int rows = xs.c * k * k;
  const int cols_n = oh * ow;

  // im2col
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * cols_n, T(0));
  const Tensor<T>& xv = x.value();
  for (int c = 0; c < xs.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols_n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= xs.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= xs.w) continue;
            row[oy * ow + ox] = xv.at(c, iy, ix);
          }
        }
      }

  Tensor<T> y(image_shape(ws.n, oh, ow));
  {
    MapC wm(weight.value().data(), ws.n, rows);
    MapC cm(cols->data(), rows, cols_n);
    MapM ym(y.data(), ws.n, cols_n);
    ym.noalias() = wm * cm;
    const Tensor<T>& bv = bias.value();
    for (int o = 0; o < ws.n; ++o) ym.row(o).array() += bv[o];
  }

  return x.tape->record(
      std::move(y), {x, weight, bias},
      [x, weight, bias, cols, xs, ws, k, oh, ow, rows, cols_n, stride, pad](Tape<T>& tape,
                                                                           const Tensor<T>& g) {
        MapC gm(g.data(), ws.n, cols_n);
        if (tape.requires_grad(weight.id)) {
          MapC cm(cols->data(), rows, cols_n);
          MapM gw(tape.grad(weight.id).data(), ws.n, rows);
          gw.noalias() += gm * cm.transpose();
        }
        if (tape.requires_grad(bias.id)) {
          Tensor<T>& gb = tape.grad(bias.id);
          // Plain loop: Eigen's vectorized sum peels by address, so its
          // order (and result) would depend on heap alignment.
          for (int o = 0; o < ws.n; ++o) {
            const T* row = g.data() + static_cast<std::size_t>(o) * cols_n;
            T s = 0;
            for (int i = 0; i < cols_n; ++i) s += row[i];
            gb[o] += s;
          }
        }
        if (tape.requires_grad(x.id)) {
          MapC wm(tape.value(weight.id).data(), ws.n, rows);
          Mat gcols = wm.transpose() * gm;
          Tensor<T>& gx = tape.grad(x.id);
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const T* row = gcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols_n;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= xs.w) continue;
                    gx.at(c, iy, ix) += row[oy * ow + ox];
                  }
                }
              }
        }
      });
}

}  // namespace geodepth::ad

#endif  // GEODEPTH_AUTODIFF_HPP
