#include "dmsa/ops.hpp"

#include <cmath>
#include <limits>

#include "dmsa/parallel.hpp"

namespace dmsa {

namespace detail {

Index normalize_axis(Index axis, Index rank) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return a;
}

}  // namespace detail

namespace {

void require_rank(const Shape& s, Index rank, const char* op) {
  if (s.rank() != rank) {
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + s.str());
  }
}

struct AxisSpan {
  Index outer = 1;
  Index length = 1;
  Index inner = 1;
};

AxisSpan axis_span(const Shape& s, Index axis) {
  AxisSpan sp;
  for (Index i = 0; i < s.rank(); ++i) {
    if (i < axis) sp.outer *= s[i];
    else if (i == axis) sp.length = s[i];
    else sp.inner *= s[i];
  }
  return sp;
}

std::array<Index, 4> pad4(const Shape& s) {
  std::array<Index, 4> d{1, 1, 1, 1};
  const Index off = 4 - s.rank();
  for (Index i = 0; i < s.rank(); ++i) d[static_cast<std::size_t>(off + i)] = s[i];
  return d;
}

// Fills a [cin * kh * kw, ho * wo] patch matrix for one sample and channel range.
template <typename Scalar>
void im2col(const Scalar* plane0, Index cin, Index h, Index w, Index kh, Index kw, Index stride, Index padding,
            Index ho, Index wo, Scalar* cols) {
  const Index ncols = ho * wo;
  for (Index c = 0; c < cin; ++c) {
    const Scalar* plane = plane0 + c * h * w;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* row = cols + ((c * kh + ky) * kw + kx) * ncols;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ky;
          Scalar* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * w;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  }
  Tensor<Scalar> out(Shape{a.dim(0), b.dim(1)});
  out.matrix(a.dim(0), b.dim(1)).noalias() = a.matrix(a.dim(0), a.dim(1)) * b.matrix(b.dim(0), b.dim(1));
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias, Index stride,
                      Index padding, Index groups) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1 || cin % groups != 0 || cout % groups != 0) {
    throw InvalidGroups("conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                        " not divisible by groups " + std::to_string(groups));
  }
  const Index cin_g = cin / groups, cout_g = cout / groups;
  if (w.dim(1) != cin_g) {
    throw ShapeMismatch("conv2d weight " + w.shape().str() + " does not match input " + x.shape().str() +
                        " with groups " + std::to_string(groups));
  }
  if (stride < 1 || padding < 0) throw ShapeMismatch("conv2d: stride must be >= 1 and padding >= 0");
  const Index ho = detail::conv_out_extent(h, kh, stride, padding);
  const Index wo = detail::conv_out_extent(wd, kw, stride, padding);
  if (ho < 1 || wo < 1) throw ShapeMismatch("conv2d: kernel larger than padded input " + x.shape().str());
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeMismatch("conv2d bias " + bias.shape().str() + " does not match " + std::to_string(cout));
  }

  Tensor<Scalar> out(Shape{n, cout, ho, wo});
  const Index k = cin_g * kh * kw;
  const Index npix = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  parallel_for(n * groups, [&](Index job) {
    const Index s = job / groups, g = job % groups;
    const Scalar* in = x.data() + (s * cin + g * cin_g) * h * wd;
    typename Tensor<Scalar>::ConstMatrixMap wmat(w.data() + g * cout_g * k, cout_g, k);
    typename Tensor<Scalar>::MatrixMap omat(out.data() + (s * cout + g * cout_g) * npix, cout_g, npix);
    if (pointwise) {
      omat.noalias() = wmat * typename Tensor<Scalar>::ConstMatrixMap(in, cin_g, npix);
    } else {
      typename Tensor<Scalar>::RowMatrix cols(k, npix);
      im2col(in, cin_g, h, wd, kh, kw, stride, padding, ho, wo, cols.data());
      omat.noalias() = wmat * cols;
    }
    if (!bias.empty()) {
      for (Index o = 0; o < cout_g; ++o) omat.row(o).array() += bias[g * cout_g + o];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const Index a = detail::normalize_axis(axis, x.rank());
  const AxisSpan sp = axis_span(x.shape(), a);
  Tensor<Scalar> out(x.shape());
  const Scalar* in = x.data();
  Scalar* o = out.data();
  for (Index outer = 0; outer < sp.outer; ++outer) {
    for (Index inner = 0; inner < sp.inner; ++inner) {
      const Index base = outer * sp.length * sp.inner + inner;
      Scalar mx = in[base];
      for (Index i = 1; i < sp.length; ++i) mx = std::max(mx, in[base + i * sp.inner]);
      double sum = 0;
      for (Index i = 0; i < sp.length; ++i) {
        const Scalar e = std::exp(in[base + i * sp.inner] - mx);
        o[base + i * sp.inner] = e;
        sum += e;
      }
      const Scalar inv = static_cast<Scalar>(1.0 / sum);
      for (Index i = 0; i < sp.length; ++i) o[base + i * sp.inner] *= inv;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const Index planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1), 1, 1});
  for (Index p = 0; p < planes; ++p) {
    double sum = 0;
    const Scalar* src = x.data() + p * hw;
    for (Index i = 0; i < hw; ++i) sum += src[i];
    out[p] = static_cast<Scalar>(sum / static_cast<double>(hw));
  }
  return out;
}

namespace {


template <typename Scalar>
void require_vec(const Tensor<Scalar>& v, Index c, const char* what) {
  if (v.rank() != 1 || v.dim(0) != c) {
    throw ShapeMismatch(std::string(what) + " must have shape [" + std::to_string(c) + "], got " +
                        v.shape().str());
  }
}

// Mean and population variance over a contiguous block.
template <typename Scalar>
std::pair<double, double> moments(const Scalar* p, Index count) {
  double mean = 0;
  for (Index i = 0; i < count; ++i) mean += p[i];
  mean /= static_cast<double>(count);
  double var = 0;
  for (Index i = 0; i < count; ++i) {
    const double d = p[i] - mean;
    var += d * d;
  }
  return {mean, var / static_cast<double>(count)};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                             double eps) {
  require_rank(x.shape(), 4, "instance_norm");
  const Index c = x.dim(1);
  require_vec(gamma, c, "instance_norm gamma");
  require_vec(beta, c, "instance_norm beta");
  if (!(eps > 0)) throw InvalidConfig("instance_norm: eps must be positive");
  return group_norm(x, c, gamma, beta, eps);
}

template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps) {
  require_rank(x.shape(), 4, "group_norm");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (num_groups < 1 || c % num_groups != 0) {
    throw InvalidGroups("group_norm: " + std::to_string(c) + " channels not divisible by " +
                        std::to_string(num_groups) + " groups");
  }
  require_vec(gamma, c, "group_norm gamma");
  require_vec(beta, c, "group_norm beta");
  if (!(eps > 0)) throw InvalidConfig("group_norm: eps must be positive");
  const Index cg = c / num_groups;
  Tensor<Scalar> out(x.shape());
  for (Index s = 0; s < n; ++s) {
    for (Index g = 0; g < num_groups; ++g) {
      const Index base = (s * c + g * cg) * hw;
      const auto [mean, var] = moments(x.data() + base, cg * hw);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (Index ch = 0; ch < cg; ++ch) {
        const Index cc = g * cg + ch;
        const double ga = gamma[cc], be = beta[cc];
        const Scalar* src = x.data() + base + ch * hw;
        Scalar* dst = out.data() + base + ch * hw;
        for (Index i = 0; i < hw; ++i) dst[i] = static_cast<Scalar>((src[i] - mean) * inv * ga + be);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> batch_norm_inference(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                    const Tensor<Scalar>& beta, const Tensor<Scalar>& running_mean,
                                    const Tensor<Scalar>& running_var, double eps) {
  require_rank(x.shape(), 4, "batch_norm_inference");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_vec(gamma, c, "batch_norm gamma");
  require_vec(beta, c, "batch_norm beta");
  require_vec(running_mean, c, "batch_norm running_mean");
  require_vec(running_var, c, "batch_norm running_var");
  if (!(eps > 0)) throw InvalidConfig("batch_norm: eps must be positive");
  Tensor<Scalar> out(x.shape());
  for (Index ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    const Scalar mul = static_cast<Scalar>(gamma[ch] * inv);
    const Scalar shift = static_cast<Scalar>(beta[ch] - running_mean[ch] * gamma[ch] * inv);
    for (Index s = 0; s < n; ++s) {
      const Index base = (s * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) out[base + i] = x[base + i] * mul + shift;
    }
  }
  return out;
}

namespace {

template <typename Scalar, typename Fn>
Tensor<Scalar> broadcast_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Fn fn, const char* op) {
  if (a.shape() == b.shape()) {
    Tensor<Scalar> out(a.shape());
    for (Index i = 0; i < a.numel(); ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  if (a.rank() != b.rank()) {
    throw ShapeMismatch(std::string(op) + ": rank mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  std::vector<Index> dims(static_cast<std::size_t>(a.rank()));
  for (Index i = 0; i < a.rank(); ++i) {
    const Index da = a.dim(i), db = b.dim(i);
    if (da != db && da != 1 && db != 1) {
      throw ShapeMismatch(std::string(op) + ": cannot broadcast " + a.shape().str() + " with " +
                          b.shape().str());
    }
    dims[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  Tensor<Scalar> out(Shape(dims, a.shape().tags()));
  const auto od = pad4(out.shape()), ad = pad4(a.shape()), bd = pad4(b.shape());
  std::array<Index, 4> as{}, bs{};
  Index sa = 1, sb = 1;
  for (int i = 3; i >= 0; --i) {
    as[i] = ad[i] == 1 ? 0 : sa;
    bs[i] = bd[i] == 1 ? 0 : sb;
    sa *= ad[i];
    sb *= bd[i];
  }
  Index o = 0;
  for (Index i0 = 0; i0 < od[0]; ++i0)
    for (Index i1 = 0; i1 < od[1]; ++i1)
      for (Index i2 = 0; i2 < od[2]; ++i2)
        for (Index i3 = 0; i3 < od[3]; ++i3) {
          const Index ia = i0 * as[0] + i1 * as[1] + i2 * as[2] + i3 * as[3];
          const Index ib = i0 * bs[0] + i1 * bs[1] + i2 * bs[2] + i3 * bs[3];
          out[o++] = fn(a[ia], b[ib]);
        }
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_binary(a, b, [](Scalar u, Scalar v) { return u + v; }, "add");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_binary(a, b, [](Scalar u, Scalar v) { return u * v; }, "mul");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s) {
  Tensor<Scalar> out(x.shape());
  out.vec() = x.vec() * s;
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.vec() = x.vec().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.numel(); ++i) {
    const Scalar v = x[i];
    if (v >= 0) {
      out[i] = Scalar(1) / (Scalar(1) + std::exp(-v));
    } else {
      const Scalar e = std::exp(v);
      out[i] = e / (Scalar(1) + e);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  return x.reshaped(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x, const std::vector<Index>& axes) {
  const Index r = x.rank();
  if (static_cast<Index>(axes.size()) != r) throw ShapeMismatch("transpose: permutation length differs from rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  std::vector<Index> dims(static_cast<std::size_t>(r));
  std::vector<Axis> tags(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    const Index a = axes[static_cast<std::size_t>(i)];
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) throw ShapeMismatch("transpose: invalid permutation");
    seen[static_cast<std::size_t>(a)] = true;
    dims[static_cast<std::size_t>(i)] = x.dim(a);
    tags[static_cast<std::size_t>(i)] = x.shape().tags()[static_cast<std::size_t>(a)];
  }
  Tensor<Scalar> out(Shape(dims, tags));
  // Input strides permuted into output order, padded to rank 4.
  std::vector<Index> in_stride(static_cast<std::size_t>(r));
  Index s = 1;
  for (Index i = r - 1; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] = s;
    s *= x.dim(i);
  }
  std::array<Index, 4> od{1, 1, 1, 1}, st{0, 0, 0, 0};
  for (Index i = 0; i < r; ++i) {
    od[static_cast<std::size_t>(4 - r + i)] = dims[static_cast<std::size_t>(i)];
    st[static_cast<std::size_t>(4 - r + i)] = in_stride[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  Index o = 0;
  for (Index i0 = 0; i0 < od[0]; ++i0)
    for (Index i1 = 0; i1 < od[1]; ++i1)
      for (Index i2 = 0; i2 < od[2]; ++i2)
        for (Index i3 = 0; i3 < od[3]; ++i3) out[o++] = x[i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3]];
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const Shape& first = parts.front().shape();
  const Index a = detail::normalize_axis(axis, first.rank());
  std::vector<Index> dims = first.dims();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw ShapeMismatch("concat: rank mismatch");
    for (Index i = 0; i < first.rank(); ++i) {
      if (i != a && p.dim(i) != first[i]) {
        throw ShapeMismatch("concat: " + p.shape().str() + " incompatible with " + first.str());
      }
    }
    total += p.dim(a);
  }
  dims[static_cast<std::size_t>(a)] = total;
  Tensor<Scalar> out(Shape(dims, first.tags()));
  const AxisSpan sp = axis_span(out.shape(), a);
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.dim(a) * sp.inner;
    for (Index o = 0; o < sp.outer; ++o) {
      std::copy_n(p.data() + o * block, block, out.data() + o * sp.length * sp.inner + offset);
    }
    offset += block;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length) {
  const Index a = detail::normalize_axis(axis, x.rank());
  if (start < 0 || length < 1 || start + length > x.dim(a)) {
    throw ShapeMismatch("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                        ") out of range for " + x.shape().str());
  }
  std::vector<Index> dims = x.shape().dims();
  dims[static_cast<std::size_t>(a)] = length;
  Tensor<Scalar> out(Shape(dims, x.shape().tags()));
  const AxisSpan sp = axis_span(x.shape(), a);
  const Index block = length * sp.inner;
  for (Index o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data() + (o * sp.length + start) * sp.inner, block, out.data() + o * block);
  }
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> split(const Tensor<Scalar>& x, Index parts, Index axis) {
  const Index a = detail::normalize_axis(axis, x.rank());
  if (parts < 1 || x.dim(a) % parts != 0) {
    throw ShapeMismatch("split: extent " + std::to_string(x.dim(a)) + " not divisible into " +
                        std::to_string(parts) + " parts");
  }
  const Index width = x.dim(a) / parts;
  std::vector<Tensor<Scalar>> out;
  out.reserve(static_cast<std::size_t>(parts));
  for (Index p = 0; p < parts; ++p) out.push_back(slice(x, a, p * width, width));
  return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, Index kernel, Index stride, Index padding) {
  require_rank(x.shape(), 4, "max_pool2d");
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) {
    throw ShapeMismatch("max_pool2d: invalid kernel/stride/padding");
  }
  const Index h = x.dim(2), w = x.dim(3);
  const Index ho = detail::conv_out_extent(h, kernel, stride, padding);
  const Index wo = detail::conv_out_extent(w, kernel, stride, padding);
  if (ho < 1 || wo < 1) throw ShapeMismatch("max_pool2d: window larger than input");
  const Index planes = x.dim(0) * x.dim(1);
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1), ho, wo});
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.data() + p * h * w;
    Scalar* dst = out.data() + p * ho * wo;
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        for (Index ky = 0; ky < kernel; ++ky) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            best = std::max(best, src[iy * w + ix]);
          }
        }
        dst[oy * wo + ox] = best;
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> fully_connected(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  require_rank(x.shape(), 2, "fully_connected input");
  require_rank(w.shape(), 2, "fully_connected weight");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeMismatch("fully_connected: " + x.shape().str() + " x " + w.shape().str());
  }
  if (!b.empty()) require_vec(b, w.dim(1), "fully_connected bias");
  Tensor<Scalar> out = matmul(x, w);
  if (!b.empty()) out.matrix(x.dim(0), w.dim(1)).rowwise() += b.vec().transpose();
  return out;
}

#define DMSA_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                             \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index, Index);      \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                                       \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                                      \
  template Tensor<S> instance_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);            \
  template Tensor<S> batch_norm_inference(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,              \
                                          const Tensor<S>&, const Tensor<S>&, double);                       \
  template Tensor<S> group_norm(const Tensor<S>&, Index, const Tensor<S>&, const Tensor<S>&, double);        \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> scale(const Tensor<S>&, S);                                                             \
  template Tensor<S> relu(const Tensor<S>&);                                                                 \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                              \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                       \
  template Tensor<S> transpose(const Tensor<S>&, const std::vector<Index>&);                                 \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                                           \
  template std::vector<Tensor<S>> split(const Tensor<S>&, Index, Index);                                     \
  template Tensor<S> slice(const Tensor<S>&, Index, Index, Index);                                           \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index, Index, Index);                                      \
  template Tensor<S> fully_connected(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

DMSA_INSTANTIATE_OPS(float)
DMSA_INSTANTIATE_OPS(double)

}  // namespace dmsa
