#pragma once

// Minimal reverse-mode tape over row-major matrices. Batched token sequences
// are stacked vertically; a Segments list records where each sample lives.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "affectlab/core/error.hpp"
#include "affectlab/core/params.hpp"
#include "affectlab/core/tensor.hpp"

namespace affectlab {

struct Segment {
  int offset = 0;
  int length = 0;
};
using Segments = std::vector<Segment>;

inline Segments uniform_segments(int count, int length) {
  Segments s(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) s[static_cast<std::size_t>(i)] = {i * length, length};
  return s;
}

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Mat<T>& value() const { return tape->value(*this); }
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const { return tape->requires_grad(*this); }
};

template <typename T>
class Tape {
 public:
  using M = Mat<T>;

  /// With gradients disabled, param() yields constants and no backward
  /// closures are recorded.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(M value) { return push(std::move(value), false); }

  /// Leaf that collects a gradient but is not bound to a parameter.
  Var<T> input(M value) { return push(std::move(value), true); }

  /// Leaf bound to a parameter; backward() accumulates into p.grad.
  Var<T> param(Param<T>& p) {
    if (!grad_enabled_) return push(p.value, false);
    Var<T> v = push(p.value, true);
    bindings_.push_back({v.id, &p});
    return v;
  }

  [[nodiscard]] const M& value(Var<T> v) const { return nodes_[idx(v)].value; }
  [[nodiscard]] bool requires_grad(Var<T> v) const { return nodes_[idx(v)].requires_grad; }

  /// Gradient of the last backward() target with respect to v (zeros if untouched).
  [[nodiscard]] M grad(Var<T> v) const {
    const auto& n = nodes_[idx(v)];
    if (n.grad.size() == 0) return M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Creates a node whose backward is supplied by the caller. The callback
  /// receives the output gradient and must call accumulate() on parents.
  Var<T> op(M value, std::initializer_list<Var<T>> parents, std::function<void(const M&)> backward) {
    bool rg = false;
    for (auto p : parents) rg = rg || requires_grad(p);
    Var<T> out = push(std::move(value), rg);
    if (rg) nodes_[idx(out)].backward = std::move(backward);
    return out;
  }

  Var<T> op(M value, const std::vector<Var<T>>& parents, std::function<void(const M&)> backward) {
    bool rg = false;
    for (auto p : parents) rg = rg || requires_grad(p);
    Var<T> out = push(std::move(value), rg);
    if (rg) nodes_[idx(out)].backward = std::move(backward);
    return out;
  }

  template <typename Expr>
  void accumulate(Var<T> v, const Expr& g) {
    auto& n = nodes_[idx(v)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Mutable access for ops that scatter into a gradient in place.
  M& grad_buffer(Var<T> v) {
    auto& n = nodes_[idx(v)];
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Back-propagates from a 1x1 output and flushes leaf gradients into bound params.
  void backward(Var<T> target, T seed = T(1)) {
    auto& t = nodes_[idx(target)];
    if (t.value.size() != 1) throw ShapeError("backward target must be a scalar");
    if (!t.requires_grad) return;
    t.grad = M::Constant(1, 1, seed);
    for (int i = target.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad);
    }
    for (const auto& [id, param] : bindings_) {
      const auto& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() != 0) param->grad += n.grad;
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  struct Node {
    M value;
    M grad;
    bool requires_grad = false;
    std::function<void(const M&)> backward;
  };
  struct Binding {
    int id;
    Param<T>* param;
  };

  Var<T> push(M value, bool rg) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }
  [[nodiscard]] static std::size_t idx(Var<T> v) { return static_cast<std::size_t>(v.id); }

  // deque keeps node addresses stable while ops append during backward-free forward.
  std::deque<Node> nodes_;
  std::vector<Binding> bindings_;
  bool grad_enabled_ = true;
};

namespace ag {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  if (a.cols() != b.rows()) throw ShapeError("matmul " + shape_str(a.rows(), a.cols()) + " x " + shape_str(b.rows(), b.cols()));
  Mat<T> y = a.value() * b.value();
  return t.op(std::move(y), {a, b}, [&t, a, b](const Mat<T>& dy) {
    if (a.requires_grad()) t.accumulate(a, dy * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * dy);
  });
}

/// y = x W + b with W stored (in x out) and b a 1 x out row.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  auto& t = *x.tape;
  if (x.cols() != w.rows() || b.cols() != w.cols())
    throw ShapeError("linear " + shape_str(x.rows(), x.cols()) + " x " + shape_str(w.rows(), w.cols()));
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  return t.op(std::move(y), {x, w, b}, [&t, x, w, b](const Mat<T>& dy) {
    if (x.requires_grad()) {
      Mat<T> dx(dy.rows(), w.rows());
      dx.noalias() = dy * w.value().transpose();
      t.accumulate(x, dx);
    }
    if (w.requires_grad()) {
      Mat<T> dw(w.rows(), w.cols());
      dw.noalias() = x.value().transpose() * dy;
      t.accumulate(w, dw);
    }
    if (b.requires_grad()) t.accumulate(b, dy.colwise().sum());
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add shape mismatch");
  return t.op(a.value() + b.value(), {a, b}, [&t, a, b](const Mat<T>& dy) {
    t.accumulate(a, dy);
    t.accumulate(b, dy);
  });
}

template <typename T>
Var<T> add_constant(Var<T> a, const Mat<T>& c) {
  auto& t = *a.tape;
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ShapeError("add_constant shape mismatch");
  return t.op(a.value() + c, {a}, [&t, a](const Mat<T>& dy) { t.accumulate(a, dy); });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  auto& t = *a.tape;
  return t.op(a.value() * s, {a}, [&t, a, s](const Mat<T>& dy) { t.accumulate(a, dy * s); });
}

/// Structural stop-gradient: same value, no path back to `a`.
template <typename T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto& t = *x.tape;
  Mat<T> y = x.value().cwiseMax(T(0));
  return t.op(std::move(y), {x}, [&t, x](const Mat<T>& dy) {
    t.accumulate(x, (x.value().array() > T(0)).select(dy.array(), T(0)).matrix());
  });
}

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(Var<T> x) {
  auto& t = *x.tape;
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  auto cdf = std::make_shared<Mat<T>>(((x.value().array() * inv_sqrt2).erf() + T(1)) * T(0.5));
  Mat<T> y = x.value().cwiseProduct(*cdf);
  return t.op(std::move(y), {x}, [&t, x, cdf](const Mat<T>& dy) {
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const auto& xv = x.value().array();
    Mat<T> d = (*cdf).array() + xv * inv_sqrt2pi * (xv.square() * T(-0.5)).exp();
    t.accumulate(x, d.cwiseProduct(dy));
  });
}

/// Row-wise layer normalization with affine gamma/beta (1 x D rows).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6)) {
  auto& t = *x.tape;
  const auto n = x.rows();
  const auto d = x.cols();
  auto xhat = std::make_shared<Mat<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Mat<T> y(n, d);
  const auto& xv = x.value();
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xhat->row(r) = (xv.row(r).array() - mean) * is;
  }
  y = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return t.op(std::move(y), {x, gamma, beta}, [&t, x, gamma, beta, xhat, inv_std, d](const Mat<T>& dy) {
    if (gamma.requires_grad()) t.accumulate(gamma, dy.cwiseProduct(*xhat).colwise().sum());
    if (beta.requires_grad()) t.accumulate(beta, dy.colwise().sum());
    if (x.requires_grad()) {
      Mat<T> g = dy.array().rowwise() * gamma.value().row(0).array();
      Mat<T> dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const T mg = g.row(r).mean();
        const T mgx = g.row(r).dot(xhat->row(r)) / static_cast<T>(d);
        dx.row(r) = ((*inv_std)[static_cast<std::size_t>(r)]) *
                    (g.row(r).array() - mg - xhat->row(r).array() * mgx);
      }
      t.accumulate(x, dx);
    }
  });
}

/// Multi-head self-attention core. `qkv` holds [Q | K | V] column blocks of
/// width D each; attention is restricted to rows inside the same segment.
template <typename T>
Var<T> attention(Var<T> qkv, const Segments& segs, int heads) {
  auto& t = *qkv.tape;
  const auto d3 = qkv.cols();
  if (d3 % 3 != 0) throw ShapeError("attention expects [Q|K|V] columns");
  const int dim = static_cast<int>(d3 / 3);
  if (dim % heads != 0) throw ShapeError("embed dim not divisible by heads");
  const int hd = dim / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(hd));
  const auto& in = qkv.value();
  Mat<T> out(in.rows(), dim);
  // probabilities per (segment, head), kept for backward
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(segs.size() * static_cast<std::size_t>(heads));
  for (const auto& s : segs) {
    for (int h = 0; h < heads; ++h) {
      auto q = in.block(s.offset, h * hd, s.length, hd);
      auto k = in.block(s.offset, dim + h * hd, s.length, hd);
      auto v = in.block(s.offset, 2 * dim + h * hd, s.length, hd);
      Mat<T> p(s.length, s.length);
      p.noalias() = q * k.transpose();
      p *= sc;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      out.block(s.offset, h * hd, s.length, hd).noalias() = p * v;
      probs->push_back(std::move(p));
    }
  }
  return t.op(std::move(out), {qkv}, [&t, qkv, segs, heads, hd, dim, sc, probs](const Mat<T>& dy) {
    const auto& in = qkv.value();
    Mat<T>& g = t.grad_buffer(qkv);
    std::size_t pi = 0;
    for (const auto& s : segs) {
      for (int h = 0; h < heads; ++h, ++pi) {
        const Mat<T>& p = (*probs)[pi];
        auto q = in.block(s.offset, h * hd, s.length, hd);
        auto k = in.block(s.offset, dim + h * hd, s.length, hd);
        auto v = in.block(s.offset, 2 * dim + h * hd, s.length, hd);
        auto dout = dy.block(s.offset, h * hd, s.length, hd);
        g.block(s.offset, 2 * dim + h * hd, s.length, hd).noalias() += p.transpose() * dout;
        Mat<T> dp(s.length, s.length);
        dp.noalias() = dout * v.transpose();
        for (Eigen::Index r = 0; r < dp.rows(); ++r) {
          const T dot = dp.row(r).dot(p.row(r));
          dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        dp *= sc;
        g.block(s.offset, h * hd, s.length, hd).noalias() += dp * k;
        g.block(s.offset, dim + h * hd, s.length, hd).noalias() += dp.transpose() * q;
      }
    }
  });
}

/// Multiplies every row of segment i by factors[i] (stochastic depth).
template <typename T>
Var<T> scale_segments(Var<T> x, const Segments& segs, std::vector<T> factors) {
  auto& t = *x.tape;
  Mat<T> y = x.value();
  for (std::size_t i = 0; i < segs.size(); ++i) y.middleRows(segs[i].offset, segs[i].length) *= factors[i];
  return t.op(std::move(y), {x}, [&t, x, segs, factors](const Mat<T>& dy) {
    Mat<T> dx = dy;
    for (std::size_t i = 0; i < segs.size(); ++i) dx.middleRows(segs[i].offset, segs[i].length) *= factors[i];
    t.accumulate(x, dx);
  });
}

/// Mean over the rows of each segment -> (segments x cols).
template <typename T>
Var<T> segment_mean(Var<T> x, const Segments& segs) {
  auto& t = *x.tape;
  Mat<T> y(static_cast<Eigen::Index>(segs.size()), x.cols());
  for (std::size_t i = 0; i < segs.size(); ++i)
    y.row(static_cast<Eigen::Index>(i)) = x.value().middleRows(segs[i].offset, segs[i].length).colwise().mean();
  return t.op(std::move(y), {x}, [&t, x, segs](const Mat<T>& dy) {
    Mat<T>& g = t.grad_buffer(x);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const T inv = T(1) / static_cast<T>(segs[i].length);
      g.middleRows(segs[i].offset, segs[i].length).rowwise() += dy.row(static_cast<Eigen::Index>(i)) * inv;
    }
  });
}

/// out.row(i) = x.row(index[i]); backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> index) {
  auto& t = *x.tape;
  Mat<T> y(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
  return t.op(std::move(y), {x}, [&t, x, index = std::move(index)](const Mat<T>& dy) {
    Mat<T>& g = t.grad_buffer(x);
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  auto& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const auto cols = parts.front().cols();
  for (auto p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows column mismatch");
    rows += p.rows();
  }
  Mat<T> y(rows, cols);
  Eigen::Index off = 0;
  for (auto p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return t.op(std::move(y), parts, [&t, parts](const Mat<T>& dy) {
    Eigen::Index o = 0;
    for (auto p : parts) {
      if (p.requires_grad()) t.accumulate(p, dy.middleRows(o, p.rows()));
      o += p.rows();
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  auto& t = *parts.front().tape;
  Eigen::Index cols = 0;
  const auto rows = parts.front().rows();
  for (auto p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols row mismatch");
    cols += p.cols();
  }
  Mat<T> y(rows, cols);
  Eigen::Index off = 0;
  for (auto p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return t.op(std::move(y), parts, [&t, parts](const Mat<T>& dy) {
    Eigen::Index o = 0;
    for (auto p : parts) {
      if (p.requires_grad()) t.accumulate(p, dy.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, Eigen::Index start, Eigen::Index count) {
  auto& t = *x.tape;
  if (start + count > x.cols()) throw ShapeError("slice_cols out of range");
  return t.op(x.value().middleCols(start, count), {x}, [&t, x, start, count](const Mat<T>& dy) {
    t.grad_buffer(x).middleCols(start, count) += dy;
  });
}

/// Attaches a precomputed scalar with known input gradients to the tape.
/// `grads[i]` is d(value)/d(inputs[i]).
template <typename T>
Var<T> custom_scalar(const std::vector<Var<T>>& inputs, T value, std::vector<Mat<T>> grads) {
  auto& t = *inputs.front().tape;
  return t.op(Mat<T>::Constant(1, 1, value), inputs, [&t, inputs, grads = std::move(grads)](const Mat<T>& dy) {
    const T up = dy(0, 0);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].requires_grad() && grads[i].size() != 0) t.accumulate(inputs[i], grads[i] * up);
  });
}

template <typename T>
Var<T> sum_scalars(const std::vector<Var<T>>& parts) {
  auto& t = *parts.front().tape;
  T v = 0;
  for (auto p : parts) v += p.value()(0, 0);
  return t.op(Mat<T>::Constant(1, 1, v), parts, [&t, parts](const Mat<T>& dy) {
    for (auto p : parts) t.accumulate(p, dy);
  });
}

/// Geometry of a batch of channels-last feature maps stacked as
/// (batch * height * width) x channels.
struct MapShape {
  int batch = 0;
  int height = 0;
  int width = 0;
};

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  [[nodiscard]] int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// 2-D convolution via im2col. Weights are (kernel*kernel*cin) x cout with
/// (ky, kx, c) ordering of the rows.
template <typename T>
Var<T> conv2d(Var<T> x, MapShape in, Var<T> w, Var<T> b, ConvGeometry g, MapShape* out_shape) {
  auto& t = *x.tape;
  const int cin = static_cast<int>(x.cols());
  const int k = g.kernel;
  if (x.rows() != static_cast<Eigen::Index>(in.batch) * in.height * in.width)
    throw ShapeError("conv2d input rows do not match map shape");
  if (w.rows() != static_cast<Eigen::Index>(k) * k * cin) throw ShapeError("conv2d weight shape mismatch");
  const int ho = g.out_size(in.height);
  const int wo = g.out_size(in.width);
  const MapShape os{in.batch, ho, wo};
  if (out_shape) *out_shape = os;
  auto cols = std::make_shared<Mat<T>>(Mat<T>::Zero(static_cast<Eigen::Index>(in.batch) * ho * wo, k * k * cin));
  const auto& xv = x.value();
  for (int n = 0; n < in.batch; ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            const Eigen::Index src = (static_cast<Eigen::Index>(n) * in.height + iy) * in.width + ix;
            cols->row(row).segment((ky * k + kx) * cin, cin) = xv.row(src);
          }
        }
      }
  Mat<T> y(cols->rows(), w.cols());
  y.noalias() = (*cols) * w.value();
  y.rowwise() += b.value().row(0);
  return t.op(std::move(y), {x, w, b}, [&t, x, w, b, cols, in, g, ho, wo, cin, k](const Mat<T>& dy) {
    if (w.requires_grad()) {
      Mat<T> dw(w.rows(), w.cols());
      dw.noalias() = cols->transpose() * dy;
      t.accumulate(w, dw);
    }
    if (b.requires_grad()) t.accumulate(b, dy.colwise().sum());
    if (x.requires_grad()) {
      Mat<T> dcols(dy.rows(), w.rows());
      dcols.noalias() = dy * w.value().transpose();
      Mat<T>& dx = t.grad_buffer(x);
      for (int n = 0; n < in.batch; ++n)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index row = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= in.height) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= in.width) continue;
                const Eigen::Index dst = (static_cast<Eigen::Index>(n) * in.height + iy) * in.width + ix;
                dx.row(dst) += dcols.row(row).segment((ky * k + kx) * cin, cin);
              }
            }
          }
    }
  });
}

/// Adaptive average pooling to (out_h x out_w) bins, flattened per sample as
/// (bin_y, bin_x, channel) -> batch x (out_h * out_w * channels).
template <typename T>
Var<T> adaptive_avg_pool(Var<T> x, MapShape in, int out_h, int out_w) {
  auto& t = *x.tape;
  const int c = static_cast<int>(x.cols());
  struct Bin {
    int y0, y1, x0, x1;
  };
  std::vector<Bin> bins;
  for (int by = 0; by < out_h; ++by)
    for (int bx = 0; bx < out_w; ++bx)
      bins.push_back({by * in.height / out_h, ((by + 1) * in.height + out_h - 1) / out_h, bx * in.width / out_w,
                      ((bx + 1) * in.width + out_w - 1) / out_w});
  Mat<T> y = Mat<T>::Zero(in.batch, static_cast<Eigen::Index>(bins.size()) * c);
  const auto& xv = x.value();
  for (int n = 0; n < in.batch; ++n)
    for (std::size_t bi = 0; bi < bins.size(); ++bi) {
      const auto& bn = bins[bi];
      const T inv = T(1) / static_cast<T>((bn.y1 - bn.y0) * (bn.x1 - bn.x0));
      for (int yy = bn.y0; yy < bn.y1; ++yy)
        for (int xx = bn.x0; xx < bn.x1; ++xx)
          y.row(n).segment(static_cast<Eigen::Index>(bi) * c, c) +=
              xv.row((static_cast<Eigen::Index>(n) * in.height + yy) * in.width + xx) * inv;
    }
  return t.op(std::move(y), {x}, [&t, x, in, bins, c](const Mat<T>& dy) {
    Mat<T>& g = t.grad_buffer(x);
    for (int n = 0; n < in.batch; ++n)
      for (std::size_t bi = 0; bi < bins.size(); ++bi) {
        const auto& bn = bins[bi];
        const T inv = T(1) / static_cast<T>((bn.y1 - bn.y0) * (bn.x1 - bn.x0));
        for (int yy = bn.y0; yy < bn.y1; ++yy)
          for (int xx = bn.x0; xx < bn.x1; ++xx)
            g.row((static_cast<Eigen::Index>(n) * in.height + yy) * in.width + xx) +=
                dy.row(n).segment(static_cast<Eigen::Index>(bi) * c, c) * inv;
      }
  });
}

}  // namespace ag
}  // namespace affectlab
