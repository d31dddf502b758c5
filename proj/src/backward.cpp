#include "dmsa/backward.hpp"

#include <cmath>
#include <limits>

#include "dmsa/parallel.hpp"

namespace dmsa {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeMismatch(std::string(op) + ": gradient shape " + b.str() + " != " + a.str());
}

template <typename Scalar>
void col2im_add(const Scalar* cols, Index cin, Index h, Index w, Index kh, Index kw, Index stride, Index padding,
                Index ho, Index wo, Scalar* plane0) {
  const Index ncols = ho * wo;
  for (Index c = 0; c < cin; ++c) {
    Scalar* plane = plane0 + c * h * w;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Scalar* row = cols + ((c * kh + ky) * kw + kx) * ncols;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void im2col_copy(const Scalar* plane0, Index cin, Index h, Index w, Index kh, Index kw, Index stride,
                 Index padding, Index ho, Index wo, Scalar* cols) {
  const Index ncols = ho * wo;
  for (Index c = 0; c < cin; ++c) {
    const Scalar* plane = plane0 + c * h * w;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* row = cols + ((c * kh + ky) * kw + kx) * ncols;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ky;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
MatmulGrad<Scalar> matmul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>& dy) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require_same(Shape{m, n}, dy.shape(), "matmul_backward");
  MatmulGrad<Scalar> g{Tensor<Scalar>(a.shape()), Tensor<Scalar>(b.shape())};
  g.da.matrix(m, k).noalias() = dy.matrix(m, n) * b.matrix(k, n).transpose();
  g.db.matrix(k, n).noalias() = a.matrix(m, k).transpose() * dy.matrix(m, n);
  return g;
}

template <typename Scalar>
ConvGrad<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& dy,
                                 Index stride, Index padding, Index groups, bool has_bias) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index cin_g = cin / groups, cout_g = cout / groups;
  const Index ho = detail::conv_out_extent(h, kh, stride, padding);
  const Index wo = detail::conv_out_extent(wd, kw, stride, padding);
  require_same(Shape{n, cout, ho, wo}, dy.shape(), "conv2d_backward");
  const Index k = cin_g * kh * kw, npix = ho * wo;

  ConvGrad<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(w.shape()), {}};
  parallel_for(groups, [&](Index gi) {
    typename Tensor<Scalar>::ConstMatrixMap wmat(w.data() + gi * cout_g * k, cout_g, k);
    typename Tensor<Scalar>::MatrixMap dwmat(g.dw.data() + gi * cout_g * k, cout_g, k);
    typename Tensor<Scalar>::RowMatrix cols(k, npix), dcols(k, npix);
    for (Index s = 0; s < n; ++s) {
      const Index in_off = (s * cin + gi * cin_g) * h * wd;
      typename Tensor<Scalar>::ConstMatrixMap dymat(dy.data() + (s * cout + gi * cout_g) * npix, cout_g, npix);
      im2col_copy(x.data() + in_off, cin_g, h, wd, kh, kw, stride, padding, ho, wo, cols.data());
      dwmat.noalias() += dymat * cols.transpose();
      dcols.noalias() = wmat.transpose() * dymat;
      col2im_add(dcols.data(), cin_g, h, wd, kh, kw, stride, padding, ho, wo, g.dx.data() + in_off);
    }
  });
  if (has_bias) {
    g.dbias = Tensor<Scalar>(Shape{cout});
    for (Index s = 0; s < n; ++s) {
      for (Index o = 0; o < cout; ++o) {
        g.dbias[o] += dy.vec().segment((s * cout + o) * npix, npix).sum();
      }
    }
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy, Index axis) {
  require_same(y.shape(), dy.shape(), "softmax_backward");
  const Index a = detail::normalize_axis(axis, y.rank());
  Index outer = 1, inner = 1;
  for (Index i = 0; i < a; ++i) outer *= y.dim(i);
  for (Index i = a + 1; i < y.rank(); ++i) inner *= y.dim(i);
  const Index len = y.dim(a);
  Tensor<Scalar> dx(y.shape());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      double dot = 0;
      for (Index i = 0; i < len; ++i) dot += static_cast<double>(y[base + i * inner]) * dy[base + i * inner];
      for (Index i = 0; i < len; ++i) {
        const Index p = base + i * inner;
        dx[p] = static_cast<Scalar>(y[p] * (dy[p] - dot));
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& dy) {
  require_same(Shape{input_shape[0], input_shape[1], 1, 1}, dy.shape(), "global_avg_pool_backward");
  const Index hw = input_shape[2] * input_shape[3];
  Tensor<Scalar> dx(input_shape);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(hw);
  for (Index p = 0; p < dy.numel(); ++p) dx.vec().segment(p * hw, hw).setConstant(dy[p] * inv);
  return dx;
}

template <typename Scalar>
NormGrad<Scalar> group_norm_backward(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gamma,
                                     const Tensor<Scalar>& dy, double eps) {
  require_same(x.shape(), dy.shape(), "group_norm_backward");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Index cg = c / num_groups, block = cg * hw;
  NormGrad<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(Shape{c}), Tensor<Scalar>(Shape{c})};
  std::vector<double> xhat(static_cast<std::size_t>(block)), dxhat(static_cast<std::size_t>(block));
  for (Index s = 0; s < n; ++s) {
    for (Index gr = 0; gr < num_groups; ++gr) {
      const Index base = (s * c + gr * cg) * hw;
      double mean = 0;
      for (Index i = 0; i < block; ++i) mean += x[base + i];
      mean /= static_cast<double>(block);
      double var = 0;
      for (Index i = 0; i < block; ++i) var += (x[base + i] - mean) * (x[base + i] - mean);
      var /= static_cast<double>(block);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_d = 0, mean_dx = 0;
      for (Index i = 0; i < block; ++i) {
        const Index ch = gr * cg + i / hw;
        const auto u = static_cast<std::size_t>(i);
        xhat[u] = (x[base + i] - mean) * inv;
        dxhat[u] = static_cast<double>(dy[base + i]) * gamma[ch];
        mean_d += dxhat[u];
        mean_dx += dxhat[u] * xhat[u];
        g.dgamma[ch] += static_cast<Scalar>(dy[base + i] * xhat[u]);
        g.dbeta[ch] += dy[base + i];
      }
      mean_d /= static_cast<double>(block);
      mean_dx /= static_cast<double>(block);
      for (Index i = 0; i < block; ++i) {
        const auto u = static_cast<std::size_t>(i);
        g.dx[base + i] = static_cast<Scalar>(inv * (dxhat[u] - mean_d - xhat[u] * mean_dx));
      }
    }
  }
  return g;
}

template <typename Scalar>
NormGrad<Scalar> instance_norm_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                        const Tensor<Scalar>& dy, double eps) {
  return group_norm_backward(x, x.dim(1), gamma, dy, eps);
}

template <typename Scalar>
NormGrad<Scalar> batch_norm_inference_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                               const Tensor<Scalar>& running_mean,
                                               const Tensor<Scalar>& running_var, const Tensor<Scalar>& dy,
                                               double eps) {
  require_same(x.shape(), dy.shape(), "batch_norm_inference_backward");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  NormGrad<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(Shape{c}), Tensor<Scalar>(Shape{c})};
  for (Index ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    for (Index s = 0; s < n; ++s) {
      const Index base = (s * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) {
        const double xhat = (x[base + i] - running_mean[ch]) * inv;
        g.dx[base + i] = static_cast<Scalar>(dy[base + i] * gamma[ch] * inv);
        g.dgamma[ch] += static_cast<Scalar>(dy[base + i] * xhat);
        g.dbeta[ch] += dy[base + i];
      }
    }
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  require_same(x.shape(), dy.shape(), "relu_backward");
  Tensor<Scalar> dx(x.shape());
  for (Index i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0 ? dy[i] : Scalar(0);
  return dx;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
  require_same(y.shape(), dy.shape(), "sigmoid_backward");
  Tensor<Scalar> dx(y.shape());
  dx.vec() = dy.vec().cwiseProduct((y.vec().array() * (Scalar(1) - y.vec().array())).matrix());
  return dx;
}

template <typename Scalar>
Tensor<Scalar> unbroadcast(const Tensor<Scalar>& dy, const Shape& target) {
  if (dy.shape() == target) return dy;
  if (dy.rank() != target.rank()) throw ShapeMismatch("unbroadcast: rank mismatch");
  std::array<Index, 4> dd{1, 1, 1, 1}, td{1, 1, 1, 1};
  const Index off = 4 - dy.rank();
  for (Index i = 0; i < dy.rank(); ++i) {
    if (target[i] != dy.dim(i) && target[i] != 1) {
      throw ShapeMismatch("unbroadcast: " + dy.shape().str() + " onto " + target.str());
    }
    dd[static_cast<std::size_t>(off + i)] = dy.dim(i);
    td[static_cast<std::size_t>(off + i)] = target[i];
  }
  Tensor<Scalar> out(target);
  std::array<Index, 4> ts{};
  Index s = 1;
  for (int i = 3; i >= 0; --i) {
    ts[i] = td[i] == 1 ? 0 : s;
    s *= td[i];
  }
  Index o = 0;
  for (Index i0 = 0; i0 < dd[0]; ++i0)
    for (Index i1 = 0; i1 < dd[1]; ++i1)
      for (Index i2 = 0; i2 < dd[2]; ++i2)
        for (Index i3 = 0; i3 < dd[3]; ++i3) out[i0 * ts[0] + i1 * ts[1] + i2 * ts[2] + i3 * ts[3]] += dy[o++];
  return out;
}

template <typename Scalar>
BinaryGrad<Scalar> add_backward(const Shape& a, const Shape& b, const Tensor<Scalar>& dy) {
  return {unbroadcast(dy, a), unbroadcast(dy, b)};
}

template <typename Scalar>
BinaryGrad<Scalar> mul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>& dy) {
  return {unbroadcast(mul(dy, b), a.shape()), unbroadcast(mul(dy, a), b.shape())};
}

template <typename Scalar>
Tensor<Scalar> transpose_backward(const std::vector<Index>& axes, const Tensor<Scalar>& dy) {
  std::vector<Index> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[static_cast<std::size_t>(axes[i])] = static_cast<Index>(i);
  return transpose(dy, inverse);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> concat_backward(const std::vector<Shape>& parts, const Tensor<Scalar>& dy, Index axis) {
  const Index a = detail::normalize_axis(axis, dy.rank());
  std::vector<Tensor<Scalar>> out;
  Index start = 0;
  for (const auto& p : parts) {
    out.push_back(slice(dy, a, start, p[a]));
    start += p[a];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy, Index kernel, Index stride,
                                   Index padding) {
  const Index h = x.dim(2), w = x.dim(3);
  const Index ho = detail::conv_out_extent(h, kernel, stride, padding);
  const Index wo = detail::conv_out_extent(w, kernel, stride, padding);
  require_same(Shape{x.dim(0), x.dim(1), ho, wo}, dy.shape(), "max_pool2d_backward");
  Tensor<Scalar> dx(x.shape());
  const Index planes = x.dim(0) * x.dim(1);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.data() + p * h * w;
    Scalar* dst = dx.data() + p * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index arg = -1;
        for (Index ky = 0; ky < kernel; ++ky) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            if (src[iy * w + ix] > best) {
              best = src[iy * w + ix];
              arg = iy * w + ix;
            }
          }
        }
        if (arg >= 0) dst[arg] += dy[(p * ho + oy) * wo + ox];
      }
    }
  }
  return dx;
}

template <typename Scalar>
LinearGrad<Scalar> fully_connected_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                            const Tensor<Scalar>& dy, bool has_bias) {
  auto mg = matmul_backward(x, w, dy);
  LinearGrad<Scalar> g{std::move(mg.da), std::move(mg.db), {}};
  if (has_bias) {
    g.db = Tensor<Scalar>(Shape{w.dim(1)});
    g.db.vec() = dy.matrix(dy.dim(0), dy.dim(1)).colwise().sum().transpose();
  }
  return g;
}

#define DMSA_INSTANTIATE_BACKWARD(S)                                                                          \
  template MatmulGrad<S> matmul_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);               \
  template ConvGrad<S> conv2d_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index,    \
                                       Index, bool);                                                          \
  template Tensor<S> softmax_backward(const Tensor<S>&, const Tensor<S>&, Index);                             \
  template Tensor<S> global_avg_pool_backward(const Shape&, const Tensor<S>&);                                \
  template NormGrad<S> group_norm_backward(const Tensor<S>&, Index, const Tensor<S>&, const Tensor<S>&,       \
                                           double);                                                           \
  template NormGrad<S> instance_norm_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);  \
  template NormGrad<S> batch_norm_inference_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                                     const Tensor<S>&, const Tensor<S>&, double);             \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> sigmoid_backward(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> unbroadcast(const Tensor<S>&, const Shape&);                                             \
  template BinaryGrad<S> add_backward(const Shape&, const Shape&, const Tensor<S>&);                          \
  template BinaryGrad<S> mul_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> transpose_backward(const std::vector<Index>&, const Tensor<S>&);                         \
  template std::vector<Tensor<S>> concat_backward(const std::vector<Shape>&, const Tensor<S>&, Index);        \
  template Tensor<S> max_pool2d_backward(const Tensor<S>&, const Tensor<S>&, Index, Index, Index);            \
  template LinearGrad<S> fully_connected_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, bool);

DMSA_INSTANTIATE_BACKWARD(float)
DMSA_INSTANTIATE_BACKWARD(double)

}  // namespace dmsa
