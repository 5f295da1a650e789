#pragma once

// Minimal reverse-mode autodiff over row-major Eigen matrices.
//
// Image batches use a channel-major layout: a tensor of C channels holding N
// images of H x W pixels is a C x (N*H*W) matrix whose column index is
// n*H*W + y*W + x. Everything else is a plain 2-D matrix.

#include <functional>
#include <span>
#include <vector>

#include "lab/rng.hpp"

namespace lab::ad {

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const;
  const Mat<S>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

struct Geo {
  int n = 1;
  int h = 1;
  int w = 1;
  int pixels() const { return h * w; }
  int columns() const { return n * h * w; }
  Geo pooled() const { return {n, h / 2, w / 2}; }
  Geo upsampled() const { return {n, h * 2, w * 2}; }
};

template <class S>
class Tape {
 public:
  using Matrix = Mat<S>;
  using Backward = std::function<void(const Matrix& grad_out)>;

  Var<S> constant(Matrix value);
  Var<S> param(Matrix value);

  /// Registers an op result. `backward` is dropped when no input needs grads.
  Var<S> push(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  template <class Expr>
  void accumulate(int id, const Expr& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
  void backward(Var<S> root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

template <class S>
const Mat<S>& Var<S>::value() const {
  return tape->value(id);
}
template <class S>
const Mat<S>& Var<S>::grad() const {
  return tape->grad(id);
}

template <class S> Var<S> matmul(Var<S> a, Var<S> b);
template <class S> Var<S> add(Var<S> a, Var<S> b);
template <class S> Var<S> sub(Var<S> a, Var<S> b);
template <class S> Var<S> mul(Var<S> a, Var<S> b);
template <class S> Var<S> scale(Var<S> a, S factor);
/// x (m x n) + b (1 x n), broadcast down the rows.
template <class S> Var<S> add_row_vector(Var<S> x, Var<S> b);
/// x (m x n) + b (m x 1), broadcast across the columns.
template <class S> Var<S> add_col_vector(Var<S> x, Var<S> b);
template <class S> Var<S> silu(Var<S> x);
template <class S> Var<S> reshape(Var<S> x, Eigen::Index rows, Eigen::Index cols);
template <class S> Var<S> concat_rows(Var<S> a, Var<S> b);
template <class S> Var<S> slice_rows(Var<S> x, Eigen::Index first, Eigen::Index count);
template <class S> Var<S> slice_cols(Var<S> x, Eigen::Index first, Eigen::Index count);
/// Row lookup: out.row(i) = table.row(ids[i]).
template <class S> Var<S> gather_rows(Var<S> table, std::span<const int> ids);
/// Applies `mix` (L x L) to every consecutive block of L rows of x.
template <class S> Var<S> mix_blocks(Var<S> x, Var<S> mix);

/// 3x3 convolution, stride 1, zero padding 1. w is Cout x (Cin*9).
template <class S> Var<S> conv3x3(Var<S> x, Var<S> w, Geo geo);
template <class S> Var<S> avgpool2(Var<S> x, Geo geo);
template <class S> Var<S> upsample2(Var<S> x, Geo geo);
/// C x (N*P) channel-major  <->  N x (C*P) sample-major.
template <class S> Var<S> channels_to_samples(Var<S> x, Geo geo);
template <class S> Var<S> samples_to_channels(Var<S> x, Geo geo);
/// out(c, n*P + p) = x(c, n*P + p) * s(n, c).
template <class S> Var<S> scale_per_sample_channel(Var<S> x, Var<S> s, Geo geo);

/// Sum of squared entries of (x - target); target is treated as a constant.
template <class S> Var<S> sum_squared_error(Var<S> x, const Mat<S>& target);
template <class S> Var<S> mean_squared_error(Var<S> x, const Mat<S>& target);
/// Mean softmax cross-entropy of logits (N x K) against class labels.
template <class S> Var<S> softmax_cross_entropy(Var<S> logits, std::span<const int> labels);
template <class S> Var<S> sum(Var<S> x);

Mat<float> softmax_rows(const Mat<float>& logits);

}  // namespace lab::ad
