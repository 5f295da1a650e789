#include "lab/ad.hpp"

#include <algorithm>
#include <cmath>

#include "lab/error.hpp"

namespace lab::ad {

template <class S>
Var<S> Tape<S>::constant(Matrix value) {
  return push(std::move(value), false, nullptr);
}

template <class S>
Var<S> Tape<S>::param(Matrix value) {
  return push(std::move(value), true, nullptr);
}

template <class S>
Var<S> Tape<S>::push(Matrix value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
}

template <class S>
void Tape<S>::backward(Var<S> root) {
  require(root.tape == this, Errc::InvalidArgument, "root belongs to another tape");
  Node& r = nodes_[root.id];
  require(r.value.size() == 1, Errc::ShapeMismatch, "backward root must be 1x1");
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.backward && node.grad.size() != 0) node.backward(node.grad);
  }
}

namespace {

template <class S>
bool needs(Var<S> v) {
  return v.tape->requires_grad(v.id);
}

void check_same_shape(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2,
                      Eigen::Index c2, const char* op) {
  require(r1 == r2 && c1 == c2, Errc::ShapeMismatch,
          std::string(op) + ": operand shapes differ");
}

// cols(ci*9 + ky*3 + kx, n*HW + y*W + x) = x(ci, n*HW + (y+ky-1)*W + (x+kx-1))
template <class S>
void im2col(const Mat<S>& x, Mat<S>& cols, Geo g) {
  const int cin = static_cast<int>(x.rows());
  const int hw = g.pixels();
  cols.setZero(static_cast<Eigen::Index>(cin) * 9, g.columns());
  for (int ci = 0; ci < cin; ++ci) {
    const S* src_c = x.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = cols.row(ci * 9 + ky * 3 + kx).data();
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(g.w, g.w + 1 - kx);
        for (int n = 0; n < g.n; ++n) {
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= g.h) continue;
            const S* src = src_c + n * hw + sy * g.w + (kx - 1);
            S* d = dst + n * hw + y * g.w;
            for (int xx = x0; xx < x1; ++xx) d[xx] = src[xx];
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const Mat<S>& cols, Mat<S>& x, Geo g) {
  const int cin = static_cast<int>(x.rows());
  const int hw = g.pixels();
  for (int ci = 0; ci < cin; ++ci) {
    S* dst_c = x.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = cols.row(ci * 9 + ky * 3 + kx).data();
        const int x0 = std::max(0, 1 - kx);
        const int x1 = std::min(g.w, g.w + 1 - kx);
        for (int n = 0; n < g.n; ++n) {
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= g.h) continue;
            S* d = dst_c + n * hw + sy * g.w + (kx - 1);
            const S* s = src + n * hw + y * g.w;
            for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
          }
        }
      }
    }
  }
}

}  // namespace

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  require(a.cols() == b.rows(), Errc::ShapeMismatch, "matmul: inner dimensions differ");
  Mat<S> out = a.value() * b.value();
  const bool rg = needs(a) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, a, b](const Mat<S>& g) {
      if (needs(a)) t->accumulate(a.id, g * b.value().transpose());
      if (needs(b)) t->accumulate(b.id, a.value().transpose() * g);
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "add");
  Mat<S> out = a.value() + b.value();
  const bool rg = needs(a) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, a, b](const Mat<S>& g) {
      t->accumulate(a.id, g);
      t->accumulate(b.id, g);
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "sub");
  Mat<S> out = a.value() - b.value();
  const bool rg = needs(a) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, a, b](const Mat<S>& g) {
      t->accumulate(a.id, g);
      t->accumulate(b.id, -g);
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "mul");
  Mat<S> out = a.value().cwiseProduct(b.value());
  const bool rg = needs(a) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, a, b](const Mat<S>& g) {
      if (needs(a)) t->accumulate(a.id, g.cwiseProduct(b.value()));
      if (needs(b)) t->accumulate(b.id, g.cwiseProduct(a.value()));
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> scale(Var<S> a, S factor) {
  Tape<S>* t = a.tape;
  Mat<S> out = a.value() * factor;
  typename Tape<S>::Backward back;
  if (needs(a)) back = [t, a, factor](const Mat<S>& g) { t->accumulate(a.id, g * factor); };
  return t->push(std::move(out), needs(a), std::move(back));
}

template <class S>
Var<S> add_row_vector(Var<S> x, Var<S> b) {
  Tape<S>* t = x.tape;
  require(b.rows() == 1 && b.cols() == x.cols(), Errc::ShapeMismatch,
          "add_row_vector: bias must be 1 x cols");
  Mat<S> out = x.value().rowwise() + b.value().row(0);
  const bool rg = needs(x) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, x, b](const Mat<S>& g) {
      t->accumulate(x.id, g);
      if (needs(b)) t->accumulate(b.id, g.colwise().sum());
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> add_col_vector(Var<S> x, Var<S> b) {
  Tape<S>* t = x.tape;
  require(b.cols() == 1 && b.rows() == x.rows(), Errc::ShapeMismatch,
          "add_col_vector: bias must be rows x 1");
  Mat<S> out = x.value().colwise() + b.value().col(0);
  const bool rg = needs(x) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, x, b](const Mat<S>& g) {
      t->accumulate(x.id, g);
      if (needs(b)) t->accumulate(b.id, g.rowwise().sum());
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> silu(Var<S> x) {
  Tape<S>* t = x.tape;
  const auto& v = x.value();
  Mat<S> sig = (S(1) + (-v.array()).exp()).inverse().matrix();
  Mat<S> out = v.cwiseProduct(sig);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, sig = std::move(sig)](const Mat<S>& g) {
      const auto& v = x.value();
      t->accumulate(x.id, (g.array() * sig.array() *
                           (S(1) + v.array() * (S(1) - sig.array())))
                              .matrix());
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> reshape(Var<S> x, Eigen::Index rows, Eigen::Index cols) {
  Tape<S>* t = x.tape;
  require(rows * cols == x.value().size(), Errc::ShapeMismatch, "reshape: size differs");
  Mat<S> out = Eigen::Map<const Mat<S>>(x.value().data(), rows, cols);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x](const Mat<S>& g) {
      t->accumulate(x.id, Eigen::Map<const Mat<S>>(g.data(), x.rows(), x.cols()));
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  require(a.cols() == b.cols(), Errc::ShapeMismatch, "concat_rows: column counts differ");
  Mat<S> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const bool rg = needs(a) || needs(b);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, a, b](const Mat<S>& g) {
      if (needs(a)) t->accumulate(a.id, g.topRows(a.rows()));
      if (needs(b)) t->accumulate(b.id, g.bottomRows(b.rows()));
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> slice_rows(Var<S> x, Eigen::Index first, Eigen::Index count) {
  Tape<S>* t = x.tape;
  require(first >= 0 && first + count <= x.rows(), Errc::ShapeMismatch, "slice_rows: out of range");
  Mat<S> out = x.value().middleRows(first, count);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, first, count](const Mat<S>& g) {
      Mat<S> full = Mat<S>::Zero(x.rows(), x.cols());
      full.middleRows(first, count) = g;
      t->accumulate(x.id, full);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> slice_cols(Var<S> x, Eigen::Index first, Eigen::Index count) {
  Tape<S>* t = x.tape;
  require(first >= 0 && first + count <= x.cols(), Errc::ShapeMismatch, "slice_cols: out of range");
  Mat<S> out = x.value().middleCols(first, count);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, first, count](const Mat<S>& g) {
      Mat<S> full = Mat<S>::Zero(x.rows(), x.cols());
      full.middleCols(first, count) = g;
      t->accumulate(x.id, full);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> gather_rows(Var<S> table, std::span<const int> ids) {
  Tape<S>* t = table.tape;
  const auto& tv = table.value();
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), Errc::ShapeMismatch, "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  typename Tape<S>::Backward back;
  if (needs(table)) {
    back = [t, table, idv = std::vector<int>(ids.begin(), ids.end())](const Mat<S>& g) {
      Mat<S> d = Mat<S>::Zero(table.rows(), table.cols());
      for (std::size_t i = 0; i < idv.size(); ++i)
        d.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
      t->accumulate(table.id, d);
    };
  }
  return t->push(std::move(out), needs(table), std::move(back));
}

template <class S>
Var<S> mix_blocks(Var<S> x, Var<S> mix) {
  Tape<S>* t = x.tape;
  const Eigen::Index l = mix.rows();
  require(mix.cols() == l && x.rows() % l == 0, Errc::ShapeMismatch, "mix_blocks: bad shapes");
  const Eigen::Index blocks = x.rows() / l;
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < blocks; ++b)
    out.middleRows(b * l, l).noalias() = mix.value() * x.value().middleRows(b * l, l);
  const bool rg = needs(x) || needs(mix);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, x, mix, l, blocks](const Mat<S>& g) {
      if (needs(x)) {
        Mat<S> dx(x.rows(), x.cols());
        for (Eigen::Index b = 0; b < blocks; ++b)
          dx.middleRows(b * l, l).noalias() = mix.value().transpose() * g.middleRows(b * l, l);
        t->accumulate(x.id, dx);
      }
      if (needs(mix)) {
        Mat<S> dm = Mat<S>::Zero(l, l);
        for (Eigen::Index b = 0; b < blocks; ++b)
          dm.noalias() += g.middleRows(b * l, l) * x.value().middleRows(b * l, l).transpose();
        t->accumulate(mix.id, dm);
      }
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> conv3x3(Var<S> x, Var<S> w, Geo geo) {
  Tape<S>* t = x.tape;
  require(x.cols() == geo.columns(), Errc::ShapeMismatch, "conv3x3: input columns do not match geometry");
  require(w.cols() == x.rows() * 9, Errc::ShapeMismatch, "conv3x3: weight expects a different channel count");
  Mat<S> cols;
  im2col(x.value(), cols, geo);
  Mat<S> out = w.value() * cols;
  const bool rg = needs(x) || needs(w);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, x, w, geo, cols = std::move(cols)](const Mat<S>& g) {
      if (needs(w)) t->accumulate(w.id, g * cols.transpose());
      if (needs(x)) {
        Mat<S> dcols = w.value().transpose() * g;
        Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
        col2im_add(dcols, dx, geo);
        t->accumulate(x.id, dx);
      }
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> avgpool2(Var<S> x, Geo geo) {
  Tape<S>* t = x.tape;
  require(x.cols() == geo.columns() && geo.h % 2 == 0 && geo.w % 2 == 0,
          Errc::ShapeMismatch, "avgpool2: bad geometry");
  const Geo o = geo.pooled();
  const Eigen::Index c = x.rows();
  Mat<S> out(c, o.columns());
  const auto& v = x.value();
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int n = 0; n < geo.n; ++n)
      for (int y = 0; y < o.h; ++y)
        for (int xx = 0; xx < o.w; ++xx) {
          const Eigen::Index base = n * geo.pixels() + 2 * y * geo.w + 2 * xx;
          out(ch, n * o.pixels() + y * o.w + xx) =
              S(0.25) * (v(ch, base) + v(ch, base + 1) + v(ch, base + geo.w) +
                         v(ch, base + geo.w + 1));
        }
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, geo, o](const Mat<S>& g) {
      Mat<S> dx(x.rows(), x.cols());
      for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
        for (int n = 0; n < geo.n; ++n)
          for (int y = 0; y < geo.h; ++y)
            for (int xx = 0; xx < geo.w; ++xx)
              dx(ch, n * geo.pixels() + y * geo.w + xx) =
                  S(0.25) * g(ch, n * o.pixels() + (y / 2) * o.w + xx / 2);
      t->accumulate(x.id, dx);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> upsample2(Var<S> x, Geo geo) {
  Tape<S>* t = x.tape;
  require(x.cols() == geo.columns(), Errc::ShapeMismatch, "upsample2: bad geometry");
  const Geo o = geo.upsampled();
  Mat<S> out(x.rows(), o.columns());
  const auto& v = x.value();
  for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
    for (int n = 0; n < geo.n; ++n)
      for (int y = 0; y < o.h; ++y)
        for (int xx = 0; xx < o.w; ++xx)
          out(ch, n * o.pixels() + y * o.w + xx) = v(ch, n * geo.pixels() + (y / 2) * geo.w + xx / 2);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, geo, o](const Mat<S>& g) {
      Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
      for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
        for (int n = 0; n < geo.n; ++n)
          for (int y = 0; y < o.h; ++y)
            for (int xx = 0; xx < o.w; ++xx)
              dx(ch, n * geo.pixels() + (y / 2) * geo.w + xx / 2) += g(ch, n * o.pixels() + y * o.w + xx);
      t->accumulate(x.id, dx);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> channels_to_samples(Var<S> x, Geo geo) {
  Tape<S>* t = x.tape;
  require(x.cols() == geo.columns(), Errc::ShapeMismatch, "channels_to_samples: bad geometry");
  const Eigen::Index c = x.rows();
  const int p = geo.pixels();
  Mat<S> out(geo.n, c * p);
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int n = 0; n < geo.n; ++n)
      out.row(n).segment(ch * p, p) = x.value().row(ch).segment(n * p, p);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, geo, c, p](const Mat<S>& g) {
      Mat<S> dx(c, geo.columns());
      for (Eigen::Index ch = 0; ch < c; ++ch)
        for (int n = 0; n < geo.n; ++n)
          dx.row(ch).segment(n * p, p) = g.row(n).segment(ch * p, p);
      t->accumulate(x.id, dx);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> samples_to_channels(Var<S> x, Geo geo) {
  Tape<S>* t = x.tape;
  const int p = geo.pixels();
  require(x.rows() == geo.n && x.cols() % p == 0, Errc::ShapeMismatch, "samples_to_channels: bad geometry");
  const Eigen::Index c = x.cols() / p;
  Mat<S> out(c, geo.columns());
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int n = 0; n < geo.n; ++n)
      out.row(ch).segment(n * p, p) = x.value().row(n).segment(ch * p, p);
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, geo, c, p](const Mat<S>& g) {
      Mat<S> dx(geo.n, c * p);
      for (Eigen::Index ch = 0; ch < c; ++ch)
        for (int n = 0; n < geo.n; ++n)
          dx.row(n).segment(ch * p, p) = g.row(ch).segment(n * p, p);
      t->accumulate(x.id, dx);
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> scale_per_sample_channel(Var<S> x, Var<S> s, Geo geo) {
  Tape<S>* t = x.tape;
  require(x.cols() == geo.columns() && s.rows() == geo.n && s.cols() == x.rows(),
          Errc::ShapeMismatch, "scale_per_sample_channel: bad shapes");
  const int p = geo.pixels();
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
    for (int n = 0; n < geo.n; ++n)
      out.row(ch).segment(n * p, p) = x.value().row(ch).segment(n * p, p) * s.value()(n, ch);
  const bool rg = needs(x) || needs(s);
  typename Tape<S>::Backward back;
  if (rg) {
    back = [t, x, s, geo, p](const Mat<S>& g) {
      if (needs(x)) {
        Mat<S> dx(x.rows(), x.cols());
        for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
          for (int n = 0; n < geo.n; ++n)
            dx.row(ch).segment(n * p, p) = g.row(ch).segment(n * p, p) * s.value()(n, ch);
        t->accumulate(x.id, dx);
      }
      if (needs(s)) {
        Mat<S> ds(s.rows(), s.cols());
        for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
          for (int n = 0; n < geo.n; ++n)
            ds(n, ch) = g.row(ch).segment(n * p, p).dot(x.value().row(ch).segment(n * p, p));
        t->accumulate(s.id, ds);
      }
    };
  }
  return t->push(std::move(out), rg, std::move(back));
}

template <class S>
Var<S> sum_squared_error(Var<S> x, const Mat<S>& target) {
  Tape<S>* t = x.tape;
  check_same_shape(x.rows(), x.cols(), target.rows(), target.cols(), "sum_squared_error");
  Mat<S> diff = x.value() - target;
  Mat<S> out(1, 1);
  out(0, 0) = diff.squaredNorm();
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, diff = std::move(diff)](const Mat<S>& g) {
      t->accumulate(x.id, diff * (S(2) * g(0, 0)));
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> mean_squared_error(Var<S> x, const Mat<S>& target) {
  Tape<S>* t = x.tape;
  check_same_shape(x.rows(), x.cols(), target.rows(), target.cols(), "mean_squared_error");
  Mat<S> diff = x.value() - target;
  const S inv = S(1) / static_cast<S>(diff.size());
  Mat<S> out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x, inv, diff = std::move(diff)](const Mat<S>& g) {
      t->accumulate(x.id, diff * (S(2) * inv * g(0, 0)));
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, std::span<const int> labels) {
  Tape<S>* t = logits.tape;
  const auto& z = logits.value();
  require(static_cast<Eigen::Index>(labels.size()) == z.rows(), Errc::ShapeMismatch,
          "softmax_cross_entropy: label count differs from batch");
  Mat<S> prob(z.rows(), z.cols());
  S loss = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const S m = z.row(i).maxCoeff();
    auto e = (z.row(i).array() - m).exp();
    const S denom = e.sum();
    prob.row(i) = (e / denom).matrix();
    loss += std::log(denom) + m - z(i, labels[i]);
  }
  const S inv = S(1) / static_cast<S>(z.rows());
  Mat<S> out(1, 1);
  out(0, 0) = loss * inv;
  typename Tape<S>::Backward back;
  if (needs(logits)) {
    back = [t, logits, inv, prob = std::move(prob),
            lab = std::vector<int>(labels.begin(), labels.end())](const Mat<S>& g) {
      Mat<S> d = prob;
      for (std::size_t i = 0; i < lab.size(); ++i) d(static_cast<Eigen::Index>(i), lab[i]) -= S(1);
      t->accumulate(logits.id, d * (inv * g(0, 0)));
    };
  }
  return t->push(std::move(out), needs(logits), std::move(back));
}

template <class S>
Var<S> sum(Var<S> x) {
  Tape<S>* t = x.tape;
  Mat<S> out(1, 1);
  out(0, 0) = x.value().sum();
  typename Tape<S>::Backward back;
  if (needs(x)) {
    back = [t, x](const Mat<S>& g) {
      t->accumulate(x.id, Mat<S>::Constant(x.rows(), x.cols(), g(0, 0)));
    };
  }
  return t->push(std::move(out), needs(x), std::move(back));
}

Mat<float> softmax_rows(const Mat<float>& logits) {
  Mat<float> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const float m = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - m).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

#define LAB_AD_INSTANTIATE(S)                                                       \
  template class Tape<S>;                                                           \
  template Var<S> matmul(Var<S>, Var<S>);                                           \
  template Var<S> add(Var<S>, Var<S>);                                              \
  template Var<S> sub(Var<S>, Var<S>);                                              \
  template Var<S> mul(Var<S>, Var<S>);                                              \
  template Var<S> scale(Var<S>, S);                                                 \
  template Var<S> add_row_vector(Var<S>, Var<S>);                                   \
  template Var<S> add_col_vector(Var<S>, Var<S>);                                   \
  template Var<S> silu(Var<S>);                                                     \
  template Var<S> reshape(Var<S>, Eigen::Index, Eigen::Index);                      \
  template Var<S> concat_rows(Var<S>, Var<S>);                                      \
  template Var<S> slice_rows(Var<S>, Eigen::Index, Eigen::Index);                   \
  template Var<S> slice_cols(Var<S>, Eigen::Index, Eigen::Index);                   \
  template Var<S> gather_rows(Var<S>, std::span<const int>);                        \
  template Var<S> mix_blocks(Var<S>, Var<S>);                                       \
  template Var<S> conv3x3(Var<S>, Var<S>, Geo);                                     \
  template Var<S> avgpool2(Var<S>, Geo);                                            \
  template Var<S> upsample2(Var<S>, Geo);                                           \
  template Var<S> channels_to_samples(Var<S>, Geo);                                 \
  template Var<S> samples_to_channels(Var<S>, Geo);                                 \
  template Var<S> scale_per_sample_channel(Var<S>, Var<S>, Geo);                    \
  template Var<S> sum_squared_error(Var<S>, const Mat<S>&);                         \
  template Var<S> mean_squared_error(Var<S>, const Mat<S>&);                        \
  template Var<S> softmax_cross_entropy(Var<S>, std::span<const int>);              \
  template Var<S> sum(Var<S>);

LAB_AD_INSTANTIATE(float)
LAB_AD_INSTANTIATE(double)

#undef LAB_AD_INSTANTIATE

}  // namespace lab::ad
