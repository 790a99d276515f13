#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every intermediate value of one forward pass together with a
// closure that propagates the output gradient to the inputs. Everything is
// templated on the scalar so the same network runs in float for training and
// in double for finite-difference checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icseg/geometry.hpp"
#include "icseg/types.hpp"

namespace icseg::ad {

template <typename S>
struct Parameter {
  Matrix<S> value;
  Matrix<S> grad;

  void zero_grad() { grad = Matrix<S>::Zero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Matrix<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(const Matrix<S>&)>;

  explicit Tape(bool grad_enabled = true, std::uint64_t seed = 0) : grad_enabled_(grad_enabled), rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  /// Dropout is active only in training mode.
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  std::mt19937_64& rng() { return rng_; }

  Var<S> constant(Matrix<S> v) { return add_node(std::move(v), false, nullptr, nullptr); }

  /// A leaf whose gradient is kept (inputs of gradient checks).
  Var<S> leaf(Matrix<S> v) { return add_node(std::move(v), grad_enabled_, nullptr, nullptr); }

  Var<S> param(Parameter<S>& p) { return add_node(p.value, grad_enabled_, &p, nullptr); }

  /// Records an op result. The closure is kept only if some input needs a gradient.
  Var<S> push(Matrix<S> value, std::initializer_list<Var<S>> inputs, Backward backward) {
    return push(std::move(value), std::vector<Var<S>>(inputs), std::move(backward));
  }
  Var<S> push(Matrix<S> value, const std::vector<Var<S>>& inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return add_node(std::move(value), needs, nullptr, needs ? std::move(backward) : nullptr);
  }

  const Matrix<S>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  void accumulate(int id, const Matrix<S>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Gradient of the last backward() root with respect to v (zeros if unreached).
  Matrix<S> grad(Var<S> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Back-propagates d(root)/d(.) with root a 1x1 value; parameter gradients are
  /// added to Parameter::grad.
  void backward(Var<S> root) {
    if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward root must be a scalar");
    backward(root, Matrix<S>::Ones(1, 1));
  }

  void backward(Var<S> root, const Matrix<S>& seed) {
    if (!grad_enabled_) throw std::logic_error("backward on a tape recorded without gradients");
    accumulate(root.id, seed);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    bool requires_grad = false;
    Parameter<S>* param = nullptr;
    Backward backward;
  };

  Var<S> add_node(Matrix<S> v, bool requires_grad, Parameter<S>* p, Backward backward) {
    nodes_.push_back(Node{std::move(v), Matrix<S>(), requires_grad, p, std::move(backward)});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_;
  bool training_ = false;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<S>* t = a.tape;
  return t->push(a.value() * b.value(), {a, b}, [t, a, b](const Matrix<S>& g) {
    if (t->requires_grad(a.id)) t->accumulate(a.id, g * b.value().transpose());
    if (t->requires_grad(b.id)) t->accumulate(b.id, a.value().transpose() * g);
  });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Tape<S>* t = a.tape;
  return t->push(a.value() * b.value().transpose(), {a, b}, [t, a, b](const Matrix<S>& g) {
    if (t->requires_grad(a.id)) t->accumulate(a.id, g * b.value());
    if (t->requires_grad(b.id)) t->accumulate(b.id, g.transpose() * a.value());
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>* t = a.tape;
  Matrix<S> out = a.value().transpose();
  return t->push(std::move(out), {a}, [t, a](const Matrix<S>& g) { t->accumulate(a.id, g.transpose()); });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "add: shape mismatch");
  Tape<S>* t = a.tape;
  return t->push(a.value() + b.value(), {a, b}, [t, a, b](const Matrix<S>& g) {
    t->accumulate(a.id, g);
    t->accumulate(b.id, g);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "sub: shape mismatch");
  Tape<S>* t = a.tape;
  return t->push(a.value() - b.value(), {a, b}, [t, a, b](const Matrix<S>& g) {
    t->accumulate(a.id, g);
    t->accumulate(b.id, -g);
  });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>* t = a.tape;
  return t->push(a.value() * s, {a}, [t, a, s](const Matrix<S>& g) { t->accumulate(a.id, g * s); });
}

/// Adds a 1 x C row vector to every row.
template <typename S>
Var<S> add_rowwise(Var<S> a, Var<S> bias) {
  detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "add_rowwise: bias must be 1 x cols");
  Tape<S>* t = a.tape;
  Matrix<S> out = a.value().rowwise() + bias.value().row(0);
  return t->push(std::move(out), {a, bias}, [t, a, bias](const Matrix<S>& g) {
    t->accumulate(a.id, g);
    if (t->requires_grad(bias.id)) t->accumulate(bias.id, g.colwise().sum());
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>* t = a.tape;
  Matrix<S> out = a.value().cwiseMax(S(0));
  return t->push(std::move(out), {a}, [t, a](const Matrix<S>& g) {
    t->accumulate(a.id, (a.value().array() > S(0)).select(g, Matrix<S>::Zero(g.rows(), g.cols())));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>* t = a.tape;
  Matrix<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  const int out_id = static_cast<int>(t->size());
  return t->push(std::move(out), {a}, [t, a, out_id](const Matrix<S>& g) {
    const auto& y = t->value(out_id).array();
    t->accumulate(a.id, (g.array() * y * (S(1) - y)).matrix());
  });
}

/// Row-wise layer normalisation with affine gamma/beta (1 x C each).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-6)) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  detail::require(gamma.cols() == c && beta.cols() == c, "layer_norm: affine size mismatch");
  Matrix<S> xhat(n, c);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i).array();
    const S mean = row.mean();
    const S var = (row - mean).square().mean();
    inv_std(i) = S(1) / std::sqrt(var + eps);
    xhat.row(i) = ((row - mean) * inv_std(i)).matrix();
  }
  Matrix<S> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  Tape<S>* t = x.tape;
  return t->push(out, {x, gamma, beta}, [t, x, gamma, beta, xhat, inv_std](const Matrix<S>& g) {
    if (t->requires_grad(gamma.id)) t->accumulate(gamma.id, (g.array() * xhat.array()).colwise().sum().matrix());
    if (t->requires_grad(beta.id)) t->accumulate(beta.id, g.colwise().sum());
    if (t->requires_grad(x.id)) {
      const Eigen::Index cc = g.cols();
      Matrix<S> gx(g.rows(), cc);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const auto dxhat = (g.row(i).array() * gamma.value().row(0).array());
        const S m1 = dxhat.mean();
        const S m2 = (dxhat * xhat.row(i).array()).mean();
        gx.row(i) = ((dxhat - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
      }
      t->accumulate(x.id, gx);
    }
  });
}

template <typename S>
Matrix<S> softmax_rows_value(const Matrix<S>& a) {
  Matrix<S> out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const S m = a.row(i).maxCoeff();
    auto e = (a.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>* t = a.tape;
  Matrix<S> out = softmax_rows_value(a.value());
  const int out_id = static_cast<int>(t->size());
  return t->push(std::move(out), {a}, [t, a, out_id](const Matrix<S>& g) {
    const Matrix<S>& p = t->value(out_id);
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (g.array() * p.array()).rowwise().sum();
    t->accumulate(a.id, (p.array() * (g.colwise() - dot).array()).matrix());
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == n, "concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix<S> out(n, total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  Tape<S>* t = parts.front().tape;
  return t->push(std::move(out), parts, [t, parts](const Matrix<S>& g) {
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      if (t->requires_grad(p.id)) t->accumulate(p.id, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.cols(), "slice_cols: range outside matrix");
  Tape<S>* t = a.tape;
  return t->push(a.value().middleCols(start, count), {a}, [t, a, start, count](const Matrix<S>& g) {
    Matrix<S> full = Matrix<S>::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t->accumulate(a.id, full);
  });
}

/// Mean over columns: (n x c) -> (n x 1).
template <typename S>
Var<S> mean_cols(Var<S> a) {
  Tape<S>* t = a.tape;
  const S inv = S(1) / static_cast<S>(a.cols());
  Matrix<S> out = a.value().rowwise().sum() * inv;
  return t->push(std::move(out), {a}, [t, a, inv](const Matrix<S>& g) {
    t->accumulate(a.id, g.replicate(1, a.cols()) * inv);
  });
}

template <typename S>
Var<S> dropout(Var<S> a, double rate) {
  Tape<S>* t = a.tape;
  if (!t->training() || rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const S s = S(1.0 / (1.0 - rate));
  Matrix<S> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(t->rng()) ? s : S(0);
  Matrix<S> out = a.value().cwiseProduct(mask);
  return t->push(std::move(out), {a}, [t, a, mask](const Matrix<S>& g) { t->accumulate(a.id, g.cwiseProduct(mask)); });
}

/// Sum of all entries -> 1x1.
template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>* t = a.tape;
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return t->push(std::move(out), {a}, [t, a](const Matrix<S>& g) {
    t->accumulate(a.id, Matrix<S>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// sum(a .* w) for a constant weight matrix -> 1x1.
template <typename S>
Var<S> weighted_sum(Var<S> a, const Matrix<S>& w) {
  detail::require(a.rows() == w.rows() && a.cols() == w.cols(), "weighted_sum: shape mismatch");
  Tape<S>* t = a.tape;
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  return t->push(std::move(out), {a}, [t, a, w](const Matrix<S>& g) { t->accumulate(a.id, w * g(0, 0)); });
}

// ---------------------------------------------------------------------------
// Attention

/// Attention probabilities of one multi-head call, one (nq x nk) matrix per head.
template <typename S>
struct AttentionWeights {
  std::vector<Matrix<S>> heads;
};

/// Per head h: softmax(Q_h K_h^T / sqrt(d_h)) V_h, heads concatenated along
/// columns. Q is nq x D, K and V are nk x D, d_h = D / heads.
template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, int heads, AttentionWeights<S>* record = nullptr) {
  const Eigen::Index d = q.cols();
  detail::require(k.cols() == d && v.cols() == d, "attention: query/key/value widths differ");
  detail::require(k.rows() == v.rows(), "attention: key/value counts differ");
  detail::require(heads > 0 && d % heads == 0, "attention: width not divisible by head count");
  const Eigen::Index dh = d / heads;
  const S scale_factor = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<Matrix<S>> probs(heads);
  Matrix<S> out(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Matrix<S> scores = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose() * scale_factor;
    probs[h] = softmax_rows_value(scores);
    out.middleCols(h * dh, dh) = probs[h] * v.value().middleCols(h * dh, dh);
  }
  if (record) record->heads = probs;
  Tape<S>* t = q.tape;
  return t->push(std::move(out), {q, k, v}, [t, q, k, v, heads, dh, scale_factor, probs](const Matrix<S>& g) {
    Matrix<S> gq = Matrix<S>::Zero(q.rows(), q.cols());
    Matrix<S> gk = Matrix<S>::Zero(k.rows(), k.cols());
    Matrix<S> gv = Matrix<S>::Zero(v.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
      const auto go = g.middleCols(h * dh, dh);
      const Matrix<S>& p = probs[h];
      gv.middleCols(h * dh, dh) = p.transpose() * go;
      const Matrix<S> gp = go * v.value().middleCols(h * dh, dh).transpose();
      const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (gp.array() * p.array()).rowwise().sum();
      const Matrix<S> gs = (p.array() * (gp.colwise() - dot).array()).matrix() * scale_factor;
      gq.middleCols(h * dh, dh) = gs * k.value().middleCols(h * dh, dh);
      gk.middleCols(h * dh, dh) = gs.transpose() * q.value().middleCols(h * dh, dh);
    }
    t->accumulate(q.id, gq);
    t->accumulate(k.id, gk);
    t->accumulate(v.id, gv);
  });
}

// ---------------------------------------------------------------------------
// Spatial ops. Feature maps are (H*W) x C matrices in raster order.

/// out.flat[i] = in.flat[index[i]] (or 0 when index[i] < 0); flat = row-major.
template <typename S>
Var<S> gather(Var<S> a, std::vector<int> index, Eigen::Index rows, Eigen::Index cols) {
  detail::require(static_cast<Eigen::Index>(index.size()) == rows * cols, "gather: index size mismatch");
  Matrix<S> out(rows, cols);
  const S* src = a.value().data();
  S* dst = out.data();
  for (std::size_t i = 0; i < index.size(); ++i) dst[i] = index[i] >= 0 ? src[index[i]] : S(0);
  Tape<S>* t = a.tape;
  return t->push(std::move(out), {a}, [t, a, index = std::move(index)](const Matrix<S>& g) {
    Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
    S* gd = ga.data();
    const S* gs = g.data();
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) gd[index[i]] += gs[i];
    t->accumulate(a.id, ga);
  });
}

/// Non-overlapping p x p patches, each flattened in (py, px, channel) order.
template <typename S>
Var<S> patchify(Var<S> a, int height, int width, int patch) {
  const int c = static_cast<int>(a.cols());
  detail::require(a.rows() == static_cast<Eigen::Index>(height) * width, "patchify: raster size mismatch");
  detail::require(height % patch == 0 && width % patch == 0, "patchify: size not divisible by patch");
  const int gh = height / patch;
  const int gw = width / patch;
  const int len = patch * patch * c;
  std::vector<int> index(static_cast<std::size_t>(gh) * gw * len);
  std::size_t i = 0;
  for (int pr = 0; pr < gh; ++pr)
    for (int pc = 0; pc < gw; ++pc)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < c; ++ch) index[i++] = ((pr * patch + y) * width + (pc * patch + x)) * c + ch;
  return gather(a, std::move(index), static_cast<Eigen::Index>(gh) * gw, len);
}

/// im2col for a k x k convolution with given stride and zero padding; columns
/// ordered (ky, kx, channel).
template <typename S>
Var<S> im2col(Var<S> a, int height, int width, int kernel, int stride, int pad, int* out_h = nullptr,
              int* out_w = nullptr) {
  const int c = static_cast<int>(a.cols());
  detail::require(a.rows() == static_cast<Eigen::Index>(height) * width, "im2col: raster size mismatch");
  const int oh = (height + 2 * pad - kernel) / stride + 1;
  const int ow = (width + 2 * pad - kernel) / stride + 1;
  detail::require(oh > 0 && ow > 0, "im2col: output would be empty");
  const int len = kernel * kernel * c;
  std::vector<int> index(static_cast<std::size_t>(oh) * ow * len);
  std::size_t i = 0;
  for (int r = 0; r < oh; ++r)
    for (int q = 0; q < ow; ++q)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          const int sr = r * stride - pad + ky;
          const int sc = q * stride - pad + kx;
          const bool inside = sr >= 0 && sr < height && sc >= 0 && sc < width;
          for (int ch = 0; ch < c; ++ch) index[i++] = inside ? (sr * width + sc) * c + ch : -1;
        }
  if (out_h) *out_h = oh;
  if (out_w) *out_w = ow;
  return gather(a, std::move(index), static_cast<Eigen::Index>(oh) * ow, len);
}

/// (H*W) x 4C with columns (dy, dx, c) -> (2H*2W) x C.
template <typename S>
Var<S> pixel_shuffle2(Var<S> a, int height, int width) {
  detail::require(a.cols() % 4 == 0, "pixel_shuffle2: channels must be a multiple of 4");
  const int c = static_cast<int>(a.cols() / 4);
  const int oh = 2 * height;
  const int ow = 2 * width;
  std::vector<int> index(static_cast<std::size_t>(oh) * ow * c);
  std::size_t i = 0;
  for (int r = 0; r < oh; ++r)
    for (int q = 0; q < ow; ++q)
      for (int ch = 0; ch < c; ++ch) {
        const int src_pos = (r / 2) * width + (q / 2);
        const int sub = (r % 2) * 2 + (q % 2);
        index[i++] = src_pos * 4 * c + sub * c + ch;
      }
  return gather(a, std::move(index), static_cast<Eigen::Index>(oh) * ow, c);
}

/// Depth-wise 3x3 convolution, zero padding 1. weight is 9 x C (row = ky*3+kx).
template <typename S>
Var<S> depthwise_conv3x3(Var<S> a, int height, int width, Var<S> weight, Var<S> bias) {
  const Eigen::Index c = a.cols();
  detail::require(a.rows() == static_cast<Eigen::Index>(height) * width, "depthwise_conv3x3: raster size mismatch");
  detail::require(weight.rows() == 9 && weight.cols() == c && bias.rows() == 1 && bias.cols() == c,
                  "depthwise_conv3x3: parameter shape mismatch");
  const Matrix<S>& x = a.value();
  const Matrix<S>& wv = weight.value();
  Matrix<S> out = bias.value().replicate(a.rows(), 1);
  for (int r = 0; r < height; ++r)
    for (int q = 0; q < width; ++q) {
      auto orow = out.row(r * width + q);
      for (int ky = 0; ky < 3; ++ky) {
        const int sr = r + ky - 1;
        if (sr < 0 || sr >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sc = q + kx - 1;
          if (sc < 0 || sc >= width) continue;
          orow.array() += x.row(sr * width + sc).array() * wv.row(ky * 3 + kx).array();
        }
      }
    }
  Tape<S>* t = a.tape;
  return t->push(std::move(out), {a, weight, bias}, [t, a, weight, bias, height, width](const Matrix<S>& g) {
    const Matrix<S>& xv = a.value();
    const Matrix<S>& w = weight.value();
    Matrix<S> gx = Matrix<S>::Zero(xv.rows(), xv.cols());
    Matrix<S> gw = Matrix<S>::Zero(9, xv.cols());
    for (int r = 0; r < height; ++r)
      for (int q = 0; q < width; ++q) {
        const auto grow = g.row(r * width + q).array();
        for (int ky = 0; ky < 3; ++ky) {
          const int sr = r + ky - 1;
          if (sr < 0 || sr >= height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int sc = q + kx - 1;
            if (sc < 0 || sc >= width) continue;
            gx.row(sr * width + sc).array() += grow * w.row(ky * 3 + kx).array();
            gw.row(ky * 3 + kx).array() += grow * xv.row(sr * width + sc).array();
          }
        }
      }
    t->accumulate(a.id, gx);
    if (t->requires_grad(weight.id)) t->accumulate(weight.id, gw);
    if (t->requires_grad(bias.id)) t->accumulate(bias.id, g.colwise().sum());
  });
}

/// Bilinear resampling of a feature map (half-pixel centers).
template <typename S>
Var<S> resize_bilinear(Var<S> a, int height, int width, int out_h, int out_w) {
  detail::require(a.rows() == static_cast<Eigen::Index>(height) * width, "resize_bilinear: raster size mismatch");
  if (height == out_h && width == out_w) return a;
  const auto ty = bilinear_taps(height, out_h);
  const auto tx = bilinear_taps(width, out_w);
  const Matrix<S>& x = a.value();
  Matrix<S> out(static_cast<Eigen::Index>(out_h) * out_w, a.cols());
  for (int r = 0; r < out_h; ++r)
    for (int q = 0; q < out_w; ++q) {
      const auto& y = ty[r];
      const auto& xx = tx[q];
      out.row(r * out_w + q) = S(y.w0 * xx.w0) * x.row(y.i0 * width + xx.i0) + S(y.w0 * xx.w1) * x.row(y.i0 * width + xx.i1) +
                               S(y.w1 * xx.w0) * x.row(y.i1 * width + xx.i0) + S(y.w1 * xx.w1) * x.row(y.i1 * width + xx.i1);
    }
  Tape<S>* t = a.tape;
  return t->push(std::move(out), {a}, [t, a, ty, tx, width, out_h, out_w](const Matrix<S>& g) {
    Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
    for (int r = 0; r < out_h; ++r)
      for (int q = 0; q < out_w; ++q) {
        const auto& y = ty[r];
        const auto& xx = tx[q];
        const auto grow = g.row(r * out_w + q);
        ga.row(y.i0 * width + xx.i0) += S(y.w0 * xx.w0) * grow;
        ga.row(y.i0 * width + xx.i1) += S(y.w0 * xx.w1) * grow;
        ga.row(y.i1 * width + xx.i0) += S(y.w1 * xx.w0) * grow;
        ga.row(y.i1 * width + xx.i1) += S(y.w1 * xx.w1) * grow;
      }
    t->accumulate(a.id, ga);
  });
}

}  // namespace icseg::ad
