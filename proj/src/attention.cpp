#include "dmsa/attention.hpp"

#include "dmsa/backward.hpp"
#include "dmsa/parallel.hpp"

namespace dmsa {

const char* to_string(NormVariant v) {
  switch (v) {
    case NormVariant::instance: return "instance";
    case NormVariant::batch: return "batch";
    case NormVariant::group: return "group";
    case NormVariant::shuffle: return "shuffle";
  }
  return "?";
}

const char* to_string(FcVariant v) {
  switch (v) {
    case FcVariant::affine_gate: return "affine_gate";
    case FcVariant::none: return "none";
    case FcVariant::conv1x1: return "conv1x1";
  }
  return "?";
}

NormVariant parse_norm_variant(std::string_view s) {
  if (s == "instance") return NormVariant::instance;
  if (s == "batch") return NormVariant::batch;
  if (s == "group") return NormVariant::group;
  if (s == "shuffle" || s == "shuffle-norm") return NormVariant::shuffle;
  throw UnknownVariant("unknown norm_variant '" + std::string(s) + "'");
}

FcVariant parse_fc_variant(std::string_view s) {
  if (s == "affine_gate") return FcVariant::affine_gate;
  if (s == "none") return FcVariant::none;
  if (s == "conv1x1") return FcVariant::conv1x1;
  throw UnknownVariant("unknown fc_variant '" + std::string(s) + "'");
}

Index sa_norm_groups(Index sub_channels) { return sub_channels % 2 == 0 ? 2 : 1; }

namespace {

template <typename Scalar>
using RowMatrix = typename Tensor<Scalar>::RowMatrix;
template <typename Scalar>
using MatMap = typename Tensor<Scalar>::MatrixMap;
template <typename Scalar>
using CMatMap = typename Tensor<Scalar>::ConstMatrixMap;

void require_nchw(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeMismatch(std::string(op) + ": expected [N,C,H,W], got " + s.str());
}

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& s, const char* what) {
  if (t.shape() != s) {
    throw ShapeMismatch(std::string(what) + ": expected " + s.str() + ", got " + t.shape().str());
  }
}

// Row-wise softmax of a dense matrix, in place.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// In-place row-wise softmax backward: dm <- y * (dm - rowsum(dm * y)).
template <typename D1, typename D2>
void softmax_rows_backward(const Eigen::MatrixBase<D1>& y, Eigen::MatrixBase<D2>& dm) {
  for (Index r = 0; r < y.rows(); ++r) {
    const auto dot = y.row(r).dot(dm.row(r));
    dm.row(r) = (y.row(r).array() * (dm.row(r).array() - dot)).matrix();
  }
}

template <typename Scalar>
Tensor<Scalar> channel_sum(const Tensor<Scalar>& t) {
  const Index n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  Tensor<Scalar> out(Shape{c});
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) out[ch] += t.vec().segment((s * c + ch) * hw, hw).sum();
  return out;
}

template <typename Scalar>
Tensor<Scalar> as_nchw_vector(const Tensor<Scalar>& v) {
  return v.reshaped(Shape{1, v.numel(), 1, 1});
}

struct SeShapes {
  Index n, c, hidden, hw;
};

template <typename Scalar>
SeShapes check_se(const Tensor<Scalar>& x, const SeDescriptorParams<Scalar>& p) {
  require_nchw(x.shape(), "se_weight");
  const Index c = x.dim(1);
  if (p.w0.rank() != 2 || p.w1.rank() != 2 || p.w0.dim(1) != c || p.w1.dim(0) != c ||
      p.w0.dim(0) != p.w1.dim(1)) {
    throw ShapeMismatch("se_weight: parameters " + p.w0.shape().str() + ", " + p.w1.shape().str() +
                        " do not match " + std::to_string(c) + " channels");
  }
  return {x.dim(0), c, p.w0.dim(0), x.dim(2) * x.dim(3)};
}

}  // namespace

template <typename Scalar>
std::vector<Tensor<Scalar>> group_features(const Tensor<Scalar>& x, Index groups) {
  require_nchw(x.shape(), "group_features");
  if (groups < 1 || x.dim(1) % groups != 0) {
    throw InvalidGroups("group_features: " + std::to_string(x.dim(1)) + " channels not divisible by " +
                        std::to_string(groups));
  }
  return split(x, groups, 1);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_subfeature(const Tensor<Scalar>& xk) {
  require_nchw(xk.shape(), "split_subfeature");
  if (xk.dim(1) % 2 != 0) {
    throw InvalidGroups("split_subfeature: odd channel count " + std::to_string(xk.dim(1)));
  }
  const Index half = xk.dim(1) / 2;
  return {slice(xk, 1, 0, half), slice(xk, 1, half, half)};
}

template <typename Scalar>
Tensor<Scalar> se_weight(const Tensor<Scalar>& x, const SeDescriptorParams<Scalar>& p) {
  const auto s = check_se(x, p);
  const Tensor<Scalar> gap = global_avg_pool(x);
  const RowMatrix<Scalar> hidden =
      (gap.matrix(s.n, s.c) * p.w0.matrix(s.hidden, s.c).transpose()).cwiseMax(Scalar(0));
  Tensor<Scalar> z(Shape{s.n, s.c});
  z.matrix(s.n, s.c).noalias() = hidden * p.w1.matrix(s.c, s.hidden).transpose();
  return sigmoid(z).reshaped(Shape{s.n, s.c, 1, 1});
}

template <typename Scalar>
Tensor<Scalar> channel_attention_map(const Tensor<Scalar>& a) {
  require_nchw(a.shape(), "channel_attention_map");
  const Index n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<Scalar> out(Shape{n, c, c});
  parallel_for(n, [&](Index s) {
    CMatMap<Scalar> am(a.data() + s * c * hw, c, hw);
    MatMap<Scalar> x(out.data() + s * c * c, c, c);
    x.noalias() = am * am.transpose();
    softmax_rows(x);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> channel_branch(const Tensor<Scalar>& a, const ChannelBranchParams<Scalar>& p) {
  require_nchw(a.shape(), "channel_branch");
  require_shape(p.beta, Shape{1}, "channel_branch beta");
  const Index n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const Scalar beta = p.beta[0];
  const Tensor<Scalar> att = channel_attention_map(a);
  Tensor<Scalar> out(a.shape());
  parallel_for(n, [&](Index s) {
    CMatMap<Scalar> am(a.data() + s * c * hw, c, hw);
    CMatMap<Scalar> x(att.data() + s * c * c, c, c);
    MatMap<Scalar> om(out.data() + s * c * hw, c, hw);
    RowMatrix<Scalar> mixed = x * am;
    om = beta * mixed + am;
  });
  return out;
}

namespace {

struct SpatialDims {
  Index n, c, hw;
};

template <typename Scalar>
SpatialDims check_spatial(const Tensor<Scalar>& a, const SpatialBranchParams<Scalar>& p) {
  require_nchw(a.shape(), "spatial_branch");
  const Index c = a.dim(1);
  const Shape proj{c, c, 1, 1};
  require_shape(p.wb, proj, "spatial wb");
  require_shape(p.wc, proj, "spatial wc");
  require_shape(p.wd, proj, "spatial wd");
  require_shape(p.alpha, Shape{1}, "spatial alpha");
  return {a.dim(0), c, a.dim(2) * a.dim(3)};
}

// Attention rows for one sample: S[j, i] = softmax_i(<B_i, C_j>).
template <typename Scalar>
RowMatrix<Scalar> spatial_attention_sample(const CMatMap<Scalar>& src, const SpatialBranchParams<Scalar>& p,
                                           Index c) {
  const RowMatrix<Scalar> b = p.wb.matrix(c, c) * src;
  const RowMatrix<Scalar> cm = p.wc.matrix(c, c) * src;
  RowMatrix<Scalar> s = cm.transpose() * b;
  softmax_rows(s);
  return s;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> spatial_attention_map(const Tensor<Scalar>& a, const SpatialBranchParams<Scalar>& p) {
  const auto d = check_spatial(a, p);
  Tensor<Scalar> out(Shape{d.n, d.hw, d.hw});
  parallel_for(d.n, [&](Index s) {
    CMatMap<Scalar> src(a.data() + s * d.c * d.hw, d.c, d.hw);
    MatMap<Scalar>(out.data() + s * d.hw * d.hw, d.hw, d.hw) = spatial_attention_sample(src, p, d.c);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> spatial_branch(const Tensor<Scalar>& a, const SpatialBranchParams<Scalar>& p) {
  return spatial_branch(a, a, p);
}

template <typename Scalar>
Tensor<Scalar> spatial_branch(const Tensor<Scalar>& source, const Tensor<Scalar>& residual,
                              const SpatialBranchParams<Scalar>& p) {
  const auto d = check_spatial(source, p);
  require_shape(residual, source.shape(), "spatial_branch residual");
  const Scalar alpha = p.alpha[0];
  Tensor<Scalar> out(source.shape());
  parallel_for(d.n, [&](Index s) {
    CMatMap<Scalar> src(source.data() + s * d.c * d.hw, d.c, d.hw);
    CMatMap<Scalar> res(residual.data() + s * d.c * d.hw, d.c, d.hw);
    const RowMatrix<Scalar> att = spatial_attention_sample(src, p, d.c);
    const RowMatrix<Scalar> dm = p.wd.matrix(d.c, d.c) * src;
    RowMatrix<Scalar> mixed = dm * att.transpose();
    MatMap<Scalar>(out.data() + s * d.c * d.hw, d.c, d.hw) = alpha * mixed + res;
  });
  return out;
}

template <typename Scalar>
SaUnitParams<Scalar> SaUnitParams<Scalar>::init(Index sub_channels, FcVariant fc) {
  SaUnitParams p;
  const Shape gate{std::vector<Index>{sub_channels, 1, 1}, {Axis::channel, Axis::height, Axis::width}};
  switch (fc) {
    case FcVariant::affine_gate:
      p.w2 = Tensor<Scalar>(gate);
      p.b2 = Tensor<Scalar>(gate, Scalar(1));
      break;
    case FcVariant::conv1x1:
      p.fc_weight = Tensor<Scalar>(Shape{sub_channels, sub_channels, 1, 1});
      p.fc_bias = Tensor<Scalar>(Shape{sub_channels}, Scalar(1));
      break;
    case FcVariant::none:
      return p;
  }
  p.norm_gamma = Tensor<Scalar>::ones(Shape{sub_channels});
  p.norm_beta = Tensor<Scalar>::zeros(Shape{sub_channels});
  return p;
}

template <typename Scalar>
Tensor<Scalar> sa_normalize(const Tensor<Scalar>& x, const SaUnitParams<Scalar>& p, NormVariant norm) {
  const Index c = x.dim(1);
  switch (norm) {
    case NormVariant::instance:
      return instance_norm(x, p.norm_gamma, p.norm_beta);
    case NormVariant::batch:
      return batch_norm_inference(x, p.norm_gamma, p.norm_beta, Tensor<Scalar>::zeros(Shape{c}),
                                  Tensor<Scalar>::ones(Shape{c}));
    case NormVariant::group:
      return group_norm(x, sa_norm_groups(c), p.norm_gamma, p.norm_beta);
    case NormVariant::shuffle: {
      const Index g = sa_norm_groups(c);
      const Tensor<Scalar> z = channel_shuffle(x, g);
      const Tensor<Scalar> u = group_norm(z, g, Tensor<Scalar>::ones(Shape{c}), Tensor<Scalar>::zeros(Shape{c}));
      const Tensor<Scalar> v = channel_shuffle_backward(u, g);
      return add(mul(v, as_nchw_vector(p.norm_gamma)), as_nchw_vector(p.norm_beta));
    }
  }
  throw UnknownVariant("unknown norm variant");
}

namespace {

template <typename Scalar>
void check_sa(const Tensor<Scalar>& x, const SaUnitParams<Scalar>& p, FcVariant fc) {
  require_nchw(x.shape(), "sa_spatial_unit");
  const Index c = x.dim(1);
  const Shape gate{std::vector<Index>{c, 1, 1}, {Axis::channel, Axis::height, Axis::width}};
  if (fc == FcVariant::none) return;
  require_shape(p.norm_gamma, Shape{c}, "sa_spatial_unit norm_gamma");
  require_shape(p.norm_beta, Shape{c}, "sa_spatial_unit norm_beta");
  if (fc == FcVariant::affine_gate) {
    require_shape(p.w2, gate, "sa_spatial_unit w2");
    require_shape(p.b2, gate, "sa_spatial_unit b2");
  } else {
    require_shape(p.fc_weight, Shape{c, c, 1, 1}, "sa_spatial_unit fc_weight");
    require_shape(p.fc_bias, Shape{c}, "sa_spatial_unit fc_bias");
  }
}

template <typename Scalar>
Tensor<Scalar> sa_logits(const Tensor<Scalar>& normed, const SaUnitParams<Scalar>& p, FcVariant fc) {
  if (fc == FcVariant::affine_gate) {
    return add(mul(normed, as_nchw_vector(p.w2)), as_nchw_vector(p.b2));
  }
  return conv2d(normed, p.fc_weight, p.fc_bias, 1, 0, 1);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> sa_spatial_unit(const Tensor<Scalar>& xk2, const SaUnitParams<Scalar>& p, NormVariant norm,
                               FcVariant fc) {
  check_sa(xk2, p, fc);
  if (fc == FcVariant::none) return xk2;
  const Tensor<Scalar> gate = sigmoid(sa_logits(sa_normalize(xk2, p, norm), p, fc));
  return mul(gate, xk2);
}

template <typename Scalar>
Tensor<Scalar> channel_shuffle(const Tensor<Scalar>& x, Index groups) {
  require_nchw(x.shape(), "channel_shuffle");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0) {
    throw InvalidGroups("channel_shuffle: " + std::to_string(c) + " channels not divisible by " +
                        std::to_string(groups));
  }
  const Index per = c / groups;
  Tensor<Scalar> out(x.shape());
  for (Index s = 0; s < n; ++s) {
    for (Index g = 0; g < groups; ++g) {
      for (Index j = 0; j < per; ++j) {
        std::copy_n(x.data() + (s * c + g * per + j) * hw, hw, out.data() + (s * c + j * groups + g) * hw);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> channel_shuffle_backward(const Tensor<Scalar>& dy, Index groups) {
  return channel_shuffle(dy, dy.dim(1) / groups);
}

// ---- Backward ---------------------------------------------------------------

template <typename Scalar>
SeGrad<Scalar> se_weight_backward(const Tensor<Scalar>& x, const SeDescriptorParams<Scalar>& p,
                                  const Tensor<Scalar>& dy) {
  const auto s = check_se(x, p);
  require_shape(dy, Shape{s.n, s.c, 1, 1}, "se_weight_backward dy");
  const Tensor<Scalar> gap = global_avg_pool(x);
  const auto g = gap.matrix(s.n, s.c);
  const auto w0 = p.w0.matrix(s.hidden, s.c);
  const auto w1 = p.w1.matrix(s.c, s.hidden);
  const RowMatrix<Scalar> pre = g * w0.transpose();
  const RowMatrix<Scalar> hidden = pre.cwiseMax(Scalar(0));
  const RowMatrix<Scalar> z = hidden * w1.transpose();
  RowMatrix<Scalar> dz(s.n, s.c);
  for (Index i = 0; i < s.n; ++i) {
    for (Index j = 0; j < s.c; ++j) {
      const Scalar v = z(i, j);
      const Scalar y = v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
      dz(i, j) = dy[i * s.c + j] * y * (Scalar(1) - y);
    }
  }
  SeGrad<Scalar> out;
  out.dp.reduction = p.reduction;
  out.dp.w1 = Tensor<Scalar>(p.w1.shape());
  out.dp.w1.matrix(s.c, s.hidden).noalias() = dz.transpose() * hidden;
  RowMatrix<Scalar> dh = dz * w1;
  for (Index i = 0; i < dh.size(); ++i) {
    if (!(pre.data()[i] > 0)) dh.data()[i] = 0;
  }
  out.dp.w0 = Tensor<Scalar>(p.w0.shape());
  out.dp.w0.matrix(s.hidden, s.c).noalias() = dh.transpose() * g;
  Tensor<Scalar> dgap(Shape{s.n, s.c, 1, 1});
  dgap.matrix(s.n, s.c).noalias() = dh * w0;
  out.dx = global_avg_pool_backward(x.shape(), dgap);
  return out;
}

template <typename Scalar>
ChannelBranchGrad<Scalar> channel_branch_backward(const Tensor<Scalar>& a, const ChannelBranchParams<Scalar>& p,
                                                  const Tensor<Scalar>& dy) {
  require_nchw(a.shape(), "channel_branch_backward");
  require_shape(dy, a.shape(), "channel_branch_backward dy");
  const Index n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const Scalar beta = p.beta[0];
  ChannelBranchGrad<Scalar> g{Tensor<Scalar>(a.shape()), ChannelBranchParams<Scalar>::zero()};
  std::vector<Scalar> dbeta(static_cast<std::size_t>(n), Scalar(0));
  parallel_for(n, [&](Index s) {
    CMatMap<Scalar> am(a.data() + s * c * hw, c, hw);
    CMatMap<Scalar> dym(dy.data() + s * c * hw, c, hw);
    MatMap<Scalar> dam(g.da.data() + s * c * hw, c, hw);
    RowMatrix<Scalar> x = am * am.transpose();
    softmax_rows(x);
    const RowMatrix<Scalar> mixed = x * am;
    dbeta[static_cast<std::size_t>(s)] = dym.cwiseProduct(mixed).sum();
    const RowMatrix<Scalar> dmixed = beta * dym;
    RowMatrix<Scalar> dx = dmixed * am.transpose();
    softmax_rows_backward(x, dx);
    dam = dym + x.transpose() * dmixed + (dx + dx.transpose()) * am;
  });
  for (Scalar v : dbeta) g.dp.beta[0] += v;
  return g;
}

template <typename Scalar>
SpatialBranchGrad<Scalar> spatial_branch_backward(const Tensor<Scalar>& source, const Tensor<Scalar>& residual,
                                                  const SpatialBranchParams<Scalar>& p, const Tensor<Scalar>& dy) {
  const auto d = check_spatial(source, p);
  require_shape(residual, source.shape(), "spatial_branch_backward residual");
  require_shape(dy, source.shape(), "spatial_branch_backward dy");
  const Scalar alpha = p.alpha[0];
  const auto wb = p.wb.matrix(d.c, d.c), wc = p.wc.matrix(d.c, d.c), wd = p.wd.matrix(d.c, d.c);

  SpatialBranchGrad<Scalar> g;
  g.dsource = Tensor<Scalar>(source.shape());
  g.dresidual = dy;
  std::vector<RowMatrix<Scalar>> dwb(static_cast<std::size_t>(d.n)), dwc(dwb.size()), dwd(dwb.size());
  std::vector<Scalar> dalpha(dwb.size(), Scalar(0));
  parallel_for(d.n, [&](Index s) {
    const auto u = static_cast<std::size_t>(s);
    CMatMap<Scalar> src(source.data() + s * d.c * d.hw, d.c, d.hw);
    CMatMap<Scalar> dym(dy.data() + s * d.c * d.hw, d.c, d.hw);
    const RowMatrix<Scalar> b = wb * src, cm = wc * src, dm = wd * src;
    RowMatrix<Scalar> att = cm.transpose() * b;
    softmax_rows(att);
    const RowMatrix<Scalar> mixed = dm * att.transpose();
    dalpha[u] = dym.cwiseProduct(mixed).sum();
    const RowMatrix<Scalar> dmixed = alpha * dym;
    const RowMatrix<Scalar> ddm = dmixed * att;
    RowMatrix<Scalar> datt = dmixed.transpose() * dm;
    softmax_rows_backward(att, datt);
    const RowMatrix<Scalar> dcm = b * datt.transpose();
    const RowMatrix<Scalar> db = cm * datt;
    dwb[u] = db * src.transpose();
    dwc[u] = dcm * src.transpose();
    dwd[u] = ddm * src.transpose();
    MatMap<Scalar>(g.dsource.data() + s * d.c * d.hw, d.c, d.hw) =
        wb.transpose() * db + wc.transpose() * dcm + wd.transpose() * ddm;
  });
  g.dp.wb = Tensor<Scalar>(p.wb.shape());
  g.dp.wc = Tensor<Scalar>(p.wc.shape());
  g.dp.wd = Tensor<Scalar>(p.wd.shape());
  g.dp.alpha = Tensor<Scalar>(Shape{1});
  for (std::size_t s = 0; s < dwb.size(); ++s) {
    g.dp.wb.matrix(d.c, d.c) += dwb[s];
    g.dp.wc.matrix(d.c, d.c) += dwc[s];
    g.dp.wd.matrix(d.c, d.c) += dwd[s];
    g.dp.alpha[0] += dalpha[s];
  }
  return g;
}

template <typename Scalar>
SaUnitGrad<Scalar> sa_spatial_unit_backward(const Tensor<Scalar>& xk2, const SaUnitParams<Scalar>& p,
                                            NormVariant norm, FcVariant fc, const Tensor<Scalar>& dy) {
  check_sa(xk2, p, fc);
  require_shape(dy, xk2.shape(), "sa_spatial_unit_backward dy");
  SaUnitGrad<Scalar> g;
  if (fc == FcVariant::none) {
    g.dx = dy;
    return g;
  }
  const Index c = xk2.dim(1);
  const Tensor<Scalar> normed = sa_normalize(xk2, p, norm);
  const Tensor<Scalar> gate = sigmoid(sa_logits(normed, p, fc));
  Tensor<Scalar> dx = mul(dy, gate);
  const Tensor<Scalar> dlogit = sigmoid_backward(gate, mul(dy, xk2));

  Tensor<Scalar> dnormed;
  if (fc == FcVariant::affine_gate) {
    g.dp.w2 = channel_sum(mul(dlogit, normed)).reshaped(p.w2.shape());
    g.dp.b2 = channel_sum(dlogit).reshaped(p.b2.shape());
    dnormed = mul(dlogit, as_nchw_vector(p.w2));
  } else {
    auto cg = conv2d_backward(normed, p.fc_weight, dlogit, 1, 0, 1, true);
    g.dp.fc_weight = std::move(cg.dw);
    g.dp.fc_bias = std::move(cg.dbias);
    dnormed = std::move(cg.dx);
  }

  NormGrad<Scalar> ng;
  switch (norm) {
    case NormVariant::instance:
      ng = instance_norm_backward(xk2, p.norm_gamma, dnormed);
      break;
    case NormVariant::batch:
      ng = batch_norm_inference_backward(xk2, p.norm_gamma, Tensor<Scalar>::zeros(Shape{c}),
                                         Tensor<Scalar>::ones(Shape{c}), dnormed);
      break;
    case NormVariant::group:
      ng = group_norm_backward(xk2, sa_norm_groups(c), p.norm_gamma, dnormed);
      break;
    case NormVariant::shuffle: {
      const Index gr = sa_norm_groups(c);
      const Tensor<Scalar> z = channel_shuffle(xk2, gr);
      const Tensor<Scalar> ones = Tensor<Scalar>::ones(Shape{c});
      const Tensor<Scalar> v =
          channel_shuffle_backward(group_norm(z, gr, ones, Tensor<Scalar>::zeros(Shape{c})), gr);
      ng.dgamma = channel_sum(mul(dnormed, v));
      ng.dbeta = channel_sum(dnormed);
      const Tensor<Scalar> du = channel_shuffle(mul(dnormed, as_nchw_vector(p.norm_gamma)), gr);
      ng.dx = channel_shuffle_backward(group_norm_backward(z, gr, ones, du).dx, gr);
      break;
    }
  }
  dx.vec() += ng.dx.vec();
  g.dx = std::move(dx);
  g.dp.norm_gamma = std::move(ng.dgamma);
  g.dp.norm_beta = std::move(ng.dbeta);
  return g;
}

#define DMSA_INSTANTIATE_ATTENTION(S)                                                                         \
  template std::vector<Tensor<S>> group_features(const Tensor<S>&, Index);                                    \
  template std::pair<Tensor<S>, Tensor<S>> split_subfeature(const Tensor<S>&);                                \
  template Tensor<S> se_weight(const Tensor<S>&, const SeDescriptorParams<S>&);                               \
  template Tensor<S> channel_attention_map(const Tensor<S>&);                                                 \
  template Tensor<S> channel_branch(const Tensor<S>&, const ChannelBranchParams<S>&);                         \
  template Tensor<S> spatial_attention_map(const Tensor<S>&, const SpatialBranchParams<S>&);                  \
  template Tensor<S> spatial_branch(const Tensor<S>&, const SpatialBranchParams<S>&);                         \
  template Tensor<S> spatial_branch(const Tensor<S>&, const Tensor<S>&, const SpatialBranchParams<S>&);       \
  template struct SaUnitParams<S>;                                                                            \
  template Tensor<S> sa_normalize(const Tensor<S>&, const SaUnitParams<S>&, NormVariant);                     \
  template Tensor<S> sa_spatial_unit(const Tensor<S>&, const SaUnitParams<S>&, NormVariant, FcVariant);       \
  template Tensor<S> channel_shuffle(const Tensor<S>&, Index);                                                \
  template Tensor<S> channel_shuffle_backward(const Tensor<S>&, Index);                                       \
  template SeGrad<S> se_weight_backward(const Tensor<S>&, const SeDescriptorParams<S>&, const Tensor<S>&);    \
  template ChannelBranchGrad<S> channel_branch_backward(const Tensor<S>&, const ChannelBranchParams<S>&,       \
                                                        const Tensor<S>&);                                    \
  template SpatialBranchGrad<S> spatial_branch_backward(const Tensor<S>&, const Tensor<S>&,                   \
                                                        const SpatialBranchParams<S>&, const Tensor<S>&);     \
  template SaUnitGrad<S> sa_spatial_unit_backward(const Tensor<S>&, const SaUnitParams<S>&, NormVariant,      \
                                                  FcVariant, const Tensor<S>&);

DMSA_INSTANTIATE_ATTENTION(float)
DMSA_INSTANTIATE_ATTENTION(double)

}  // namespace dmsa
