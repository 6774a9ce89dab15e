#include "docmamba/mamba_block.hpp"

#include <cmath>

namespace docmamba {

void BlockDims::validate() const {
  require(hidden >= 1, "BlockDims: hidden must be >= 1");
  require(conv_width >= 1, "BlockDims: conv_width must be >= 1");
  ssm().validate();
}

template <typename Scalar>
BlockParams<Scalar> BlockParams<Scalar>::zeros(const BlockDims& dims) {
  dims.validate();
  BlockParams p;
  p.norm_weight = Vector<Scalar>::Zero(dims.hidden);
  p.norm_bias = Vector<Scalar>::Zero(dims.norm == NormKind::layer ? dims.hidden : 0);
  p.in_proj = Matrix<Scalar>::Zero(2 * dims.d_inner, dims.hidden);
  p.conv_fwd = Matrix<Scalar>::Zero(dims.d_inner, dims.conv_width);
  p.conv_bwd = Matrix<Scalar>::Zero(dims.d_inner, dims.conv_width);
  p.scan_fwd = ScanParams<Scalar>::zeros(dims.ssm());
  p.scan_bwd = ScanParams<Scalar>::zeros(dims.ssm());
  p.out_proj = Matrix<Scalar>::Zero(dims.hidden, dims.d_inner);
  return p;
}

template <typename Scalar>
BlockParams<Scalar> BlockParams<Scalar>::init(const BlockDims& dims, Rng& rng) {
  BlockParams p = zeros(dims);
  p.norm_weight.setOnes();
  fill_xavier(p.in_proj, rng);
  const double bound = 1.0 / std::sqrt(double(dims.conv_width));
  std::uniform_real_distribution<double> conv(-bound, bound);
  for (Matrix<Scalar>* k : {&p.conv_fwd, &p.conv_bwd})
    for (Index j = 0; j < k->cols(); ++j)
      for (Index i = 0; i < k->rows(); ++i) (*k)(i, j) = Scalar(conv(rng));
  p.scan_fwd = ScanParams<Scalar>::init(dims.ssm(), rng);
  p.scan_bwd = ScanParams<Scalar>::init(dims.ssm(), rng);
  fill_xavier(p.out_proj, rng);
  return p;
}

template <typename Scalar>
BlockDims BlockParams<Scalar>::dims() const {
  const SsmDims ssm = scan_fwd.dims();
  return {norm_weight.size(), ssm.d_inner, ssm.n_state, ssm.dt_rank, conv_fwd.cols(),
          norm_bias.size() > 0 ? NormKind::layer : NormKind::rms};
}

template <typename Scalar>
void BlockParams<Scalar>::append_to(Inventory<Scalar>& out, const std::string& prefix) {
  add_tensor(out, prefix + "norm.weight", ParamFamily::norm, norm_weight);
  if (norm_bias.size() > 0) add_tensor(out, prefix + "norm.bias", ParamFamily::norm, norm_bias);
  add_tensor(out, prefix + "in_proj", ParamFamily::projection, in_proj);
  add_tensor(out, prefix + "conv_fwd", ParamFamily::conv, conv_fwd);
  add_tensor(out, prefix + "conv_bwd", ParamFamily::conv, conv_bwd);
  scan_fwd.append_to(out, prefix + "scan_fwd.");
  scan_bwd.append_to(out, prefix + "scan_bwd.");
  add_tensor(out, prefix + "out_proj", ParamFamily::projection, out_proj);
}

template <typename Scalar>
Vector<Scalar> rms_normalize(const Vector<Scalar>& s, const Vector<Scalar>& weight) {
  require(s.size() == weight.size(), "rms_normalize: width mismatch");
  const Scalar inv = Scalar(1) / std::sqrt(s.squaredNorm() / Scalar(s.size()) + Scalar(kNormEps));
  return weight.cwiseProduct(s) * inv;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, const Vector<Scalar>& weight,
                              const Vector<Scalar>& bias, NormKind kind, NormTape<Scalar>* tape) {
  const Index width = x.cols();
  require(weight.size() == width, "normalize_rows: weight width mismatch");
  require(kind == NormKind::rms || bias.size() == width, "normalize_rows: bias width mismatch");
  Matrix<Scalar> xhat(x.rows(), width);
  Vector<Scalar> inv_std(x.rows());
  for (Index t = 0; t < x.rows(); ++t) {
    if (kind == NormKind::rms) {
      inv_std(t) = Scalar(1) / std::sqrt(x.row(t).squaredNorm() / Scalar(width) + Scalar(kNormEps));
      xhat.row(t) = x.row(t) * inv_std(t);
    } else {
      const Scalar mean = x.row(t).mean();
      const auto centered = (x.row(t).array() - mean).matrix();
      inv_std(t) = Scalar(1) / std::sqrt(centered.squaredNorm() / Scalar(width) + Scalar(kNormEps));
      xhat.row(t) = centered * inv_std(t);
    }
  }
  Matrix<Scalar> out = xhat * weight.asDiagonal();
  if (kind == NormKind::layer) out.rowwise() += bias.transpose();
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const NormTape<Scalar>& tape, const Vector<Scalar>& weight,
                                       NormKind kind, const Matrix<Scalar>& dy,
                                       Vector<Scalar>& dweight, Vector<Scalar>& dbias) {
  const Index width = dy.cols();
  dweight += (dy.array() * tape.xhat.array()).colwise().sum().transpose().matrix();
  if (kind == NormKind::layer) dbias += dy.colwise().sum().transpose();
  const Matrix<Scalar> dxhat = dy * weight.asDiagonal();
  Matrix<Scalar> dx(dy.rows(), width);
  for (Index t = 0; t < dy.rows(); ++t) {
    const Scalar proj = dxhat.row(t).dot(tape.xhat.row(t)) / Scalar(width);
    auto row = (dxhat.row(t) - tape.xhat.row(t) * proj).eval();
    if (kind == NormKind::layer) row.array() -= dxhat.row(t).mean();
    dx.row(t) = row * tape.inv_std(t);
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> causal_conv(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel) {
  require(kernel.cols() >= 1, "causal_conv: kernel width must be >= 1");
  require(kernel.rows() == x.cols(), "causal_conv: kernel channels != input channels");
  const Index len = x.rows(), w = kernel.cols();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(len, x.cols());
  for (Index j = 0; j < w; ++j) {
    const Index shift = w - 1 - j;  // tap j reads x(t - shift)
    if (shift >= len) continue;
    out.bottomRows(len - shift).array() +=
        x.topRows(len - shift).array().rowwise() * kernel.col(j).transpose().array();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> causal_conv_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel,
                                    const Matrix<Scalar>& dy, Matrix<Scalar>& dkernel) {
  require(dy.rows() == x.rows() && dy.cols() == x.cols(), "causal_conv_backward: shape mismatch");
  const Index len = x.rows(), w = kernel.cols();
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(len, x.cols());
  for (Index j = 0; j < w; ++j) {
    const Index shift = w - 1 - j;
    if (shift >= len) continue;
    dx.topRows(len - shift).array() +=
        dy.bottomRows(len - shift).array().rowwise() * kernel.col(j).transpose().array();
    dkernel.col(j) +=
        (dy.bottomRows(len - shift).array() * x.topRows(len - shift).array())
            .colwise()
            .sum()
            .transpose()
            .matrix();
  }
  return dx;
}

namespace {

template <typename Scalar>
Matrix<Scalar> silu_of(const Matrix<Scalar>& m) {
  return m.unaryExpr([](Scalar v) { return silu(v); });
}

template <typename Scalar>
Matrix<Scalar> silu_grad_of(const Matrix<Scalar>& m) {
  return m.unaryExpr([](Scalar v) { return silu_grad(v); });
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> bimamba_block(const Matrix<Scalar>& s_prev, const BlockParams<Scalar>& params,
                             BlockTape<Scalar>* tape) {
  const BlockDims dims = params.dims();
  require(s_prev.rows() >= 1, "bimamba_block: empty sequence");
  require(s_prev.cols() == dims.hidden, "bimamba_block: input width != hidden");
  const Index d = dims.d_inner;

  BlockTape<Scalar> local;
  BlockTape<Scalar>& tp = tape ? *tape : local;

  tp.normed = normalize_rows(s_prev, params.norm_weight, params.norm_bias, dims.norm, &tp.norm);
  const Matrix<Scalar> xz = tp.normed * params.in_proj.transpose();
  tp.x = xz.leftCols(d);
  tp.z = xz.rightCols(d);

  tp.conv_f = causal_conv(tp.x, params.conv_fwd);
  tp.x_f = silu_of(tp.conv_f);
  tp.y_f = selective_scan(tp.x_f, params.scan_fwd, &tp.proj_f);

  tp.x_rev = reverse_rows(tp.x);
  tp.conv_b = causal_conv(tp.x_rev, params.conv_bwd);
  tp.x_b = silu_of(tp.conv_b);
  tp.y_b = reverse_rows(selective_scan(tp.x_b, params.scan_bwd, &tp.proj_b));

  tp.mixed = ((tp.y_f + tp.y_b).array() * silu_of(tp.z).array()).matrix();
  Matrix<Scalar> out = s_prev;
  out.noalias() += tp.mixed * params.out_proj.transpose();
  return out;
}

template <typename Scalar>
Matrix<Scalar> bimamba_block_backward(const BlockTape<Scalar>& tp,
                                      const BlockParams<Scalar>& params,
                                      const Matrix<Scalar>& dout, BlockParams<Scalar>& grads) {
  const BlockDims dims = params.dims();
  const Index d = dims.d_inner;
  require(dout.rows() == tp.x.rows() && dout.cols() == dims.hidden,
          "bimamba_block_backward: gradient shape mismatch");

  grads.out_proj.noalias() += dout.transpose() * tp.mixed;
  const Matrix<Scalar> dmixed = dout * params.out_proj;
  const Matrix<Scalar> dy = (dmixed.array() * silu_of(tp.z).array()).matrix();
  const Matrix<Scalar> dz =
      (dmixed.array() * (tp.y_f + tp.y_b).array() * silu_grad_of(tp.z).array()).matrix();

  Matrix<Scalar> dx_f = selective_scan_backward(tp.x_f, params.scan_fwd, tp.proj_f, dy, grads.scan_fwd);
  dx_f.array() *= silu_grad_of(tp.conv_f).array();
  Matrix<Scalar> dx = causal_conv_backward(tp.x, params.conv_fwd, dx_f, grads.conv_fwd);

  Matrix<Scalar> dx_b =
      selective_scan_backward(tp.x_b, params.scan_bwd, tp.proj_b, reverse_rows(dy), grads.scan_bwd);
  dx_b.array() *= silu_grad_of(tp.conv_b).array();
  dx += reverse_rows(causal_conv_backward(tp.x_rev, params.conv_bwd, dx_b, grads.conv_bwd));

  Matrix<Scalar> dxz(dout.rows(), 2 * d);
  dxz.leftCols(d) = dx;
  dxz.rightCols(d) = dz;
  grads.in_proj.noalias() += dxz.transpose() * tp.normed;
  const Matrix<Scalar> dnormed = dxz * params.in_proj;
  Matrix<Scalar> ds = dout;
  ds += normalize_rows_backward(tp.norm, params.norm_weight, dims.norm, dnormed, grads.norm_weight,
                                grads.norm_bias);
  return ds;
}

template <typename Scalar>
ForwardStream<Scalar>::ForwardStream(const BlockParams<Scalar>& params)
    : params_(&params),
      window_(Matrix<Scalar>::Zero(params.conv_fwd.cols(), params.conv_fwd.rows())),
      scan_(params.scan_fwd) {}

template <typename Scalar>
Vector<Scalar> ForwardStream<Scalar>::step(const Vector<Scalar>& s_t) {
  const BlockParams<Scalar>& p = *params_;
  const BlockDims dims = p.dims();
  const Index d = dims.d_inner, w = dims.conv_width;
  require(s_t.size() == dims.hidden, "ForwardStream::step: width != hidden");

  const Matrix<Scalar> row = s_t.transpose();
  const Vector<Scalar> normed =
      normalize_rows(row, p.norm_weight, p.norm_bias, dims.norm).transpose();
  const Vector<Scalar> xz = p.in_proj * normed;

  for (Index i = 0; i + 1 < w; ++i) window_.row(i) = window_.row(i + 1);
  window_.row(w - 1) = xz.head(d).transpose();
  Vector<Scalar> conv(d);
  for (Index c = 0; c < d; ++c) conv(c) = p.conv_fwd.row(c).dot(window_.col(c));

  const Vector<Scalar> x_f = conv.unaryExpr([](Scalar v) { return silu(v); });
  const Vector<Scalar> y_f = scan_.step(x_f);
  const Vector<Scalar> gate = xz.tail(d).unaryExpr([](Scalar v) { return silu(v); });
  return s_t + p.out_proj * y_f.cwiseProduct(gate);
}

#define DOCMAMBA_INSTANTIATE(S)                                                                   \
  template struct BlockParams<S>;                                                                 \
  template Vector<S> rms_normalize<S>(const Vector<S>&, const Vector<S>&);                        \
  template Matrix<S> normalize_rows<S>(const Matrix<S>&, const Vector<S>&, const Vector<S>&,      \
                                       NormKind, NormTape<S>*);                                   \
  template Matrix<S> normalize_rows_backward<S>(const NormTape<S>&, const Vector<S>&, NormKind,   \
                                                const Matrix<S>&, Vector<S>&, Vector<S>&);        \
  template Matrix<S> causal_conv<S>(const Matrix<S>&, const Matrix<S>&);                          \
  template Matrix<S> causal_conv_backward<S>(const Matrix<S>&, const Matrix<S>&,                  \
                                             const Matrix<S>&, Matrix<S>&);                       \
  template Matrix<S> bimamba_block<S>(const Matrix<S>&, const BlockParams<S>&, BlockTape<S>*);    \
  template Matrix<S> bimamba_block_backward<S>(const BlockTape<S>&, const BlockParams<S>&,        \
                                               const Matrix<S>&, BlockParams<S>&);                \
  template class ForwardStream<S>;

DOCMAMBA_INSTANTIATE(float)
DOCMAMBA_INSTANTIATE(double)

}  // namespace docmamba
