#include "docmamba/ssm_core.hpp"

#include <cmath>
#include <vector>

namespace docmamba {

namespace {

constexpr Index kBackwardChunk = 64;

// Gain multiplying B_t x_t in the ZOH update, (exp(delta a) - 1) / a,
// evaluated elementwise over a d_inner x n_state block.
template <typename Scalar>
void zoh_gain(const Array2<Scalar>& arg, const Array2<Scalar>& a,
              const Eigen::Array<Scalar, Eigen::Dynamic, 1>& delta, Array2<Scalar>& gain) {
  const Index n = a.cols();
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < a.rows(); ++i) {
      const Scalar z = arg(i, j);
      gain(i, j) = std::abs(z) < Scalar(kZohLimitThreshold) ? delta(i) : std::expm1(z) / a(i, j);
    }
}

}  // namespace

SsmDims SsmDims::for_width(Index d_inner, Index n_state) {
  SsmDims dims{d_inner, n_state, (d_inner + 15) / 16};
  dims.validate();
  return dims;
}

void SsmDims::validate() const {
  require(d_inner >= 1, "SsmDims: d_inner must be >= 1");
  require(n_state >= 1, "SsmDims: n_state must be >= 1");
  require(dt_rank >= 1, "SsmDims: dt_rank must be >= 1");
}

template <typename Scalar>
ScanParams<Scalar> ScanParams<Scalar>::zeros(const SsmDims& dims) {
  dims.validate();
  ScanParams p;
  p.a_log = Matrix<Scalar>::Zero(dims.d_inner, dims.n_state);
  p.d_skip = Vector<Scalar>::Zero(dims.d_inner);
  p.b_proj = Matrix<Scalar>::Zero(dims.n_state, dims.d_inner);
  p.c_proj = Matrix<Scalar>::Zero(dims.n_state, dims.d_inner);
  p.dt_down = Matrix<Scalar>::Zero(dims.dt_rank, dims.d_inner);
  p.dt_up = Matrix<Scalar>::Zero(dims.d_inner, dims.dt_rank);
  p.dt_bias = Vector<Scalar>::Zero(dims.d_inner);
  return p;
}

template <typename Scalar>
ScanParams<Scalar> ScanParams<Scalar>::init(const SsmDims& dims, Rng& rng) {
  ScanParams p = zeros(dims);
  for (Index c = 0; c < dims.d_inner; ++c)
    for (Index n = 0; n < dims.n_state; ++n) p.a_log(c, n) = Scalar(std::log(double(n + 1)));
  p.d_skip.setOnes();
  fill_xavier(p.b_proj, rng);
  fill_xavier(p.c_proj, rng);
  fill_xavier(p.dt_down, rng);
  fill_xavier(p.dt_up, rng);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(0.1));
  for (Index c = 0; c < dims.d_inner; ++c) {
    const double dt = std::exp(log_dt(rng));
    // inverse softplus
    p.dt_bias(c) = Scalar(dt + std::log(-std::expm1(-dt)));
  }
  return p;
}

template <typename Scalar>
SsmDims ScanParams<Scalar>::dims() const {
  return {a_log.rows(), a_log.cols(), dt_down.rows()};
}

template <typename Scalar>
void ScanParams<Scalar>::check_finite() const {
  const bool ok = a_log.allFinite() && d_skip.allFinite() && b_proj.allFinite() &&
                  c_proj.allFinite() && dt_down.allFinite() && dt_up.allFinite() &&
                  dt_bias.allFinite();
  if (!ok) throw ContractError("ScanParams: non-finite parameter");
}

template <typename Scalar>
void ScanParams<Scalar>::append_to(Inventory<Scalar>& out, const std::string& prefix) {
  add_tensor(out, prefix + "a_log", ParamFamily::a_log, a_log);
  add_tensor(out, prefix + "d_skip", ParamFamily::skip, d_skip);
  add_tensor(out, prefix + "b_proj", ParamFamily::projection, b_proj);
  add_tensor(out, prefix + "c_proj", ParamFamily::projection, c_proj);
  add_tensor(out, prefix + "dt_down", ParamFamily::projection, dt_down);
  add_tensor(out, prefix + "dt_up", ParamFamily::projection, dt_up);
  add_tensor(out, prefix + "dt_bias", ParamFamily::bias, dt_bias);
}

template <typename Scalar>
Discretized<Scalar> zoh_discretize(Scalar delta, Scalar a, Scalar b) {
  if (!std::isfinite(delta) || !std::isfinite(a) || !std::isfinite(b))
    throw std::domain_error("zoh_discretize: non-finite input");
  if (delta < Scalar(0)) throw std::domain_error("zoh_discretize: delta must be >= 0");
  const Scalar z = delta * a;
  const Scalar a_bar = std::exp(z);
  if (std::abs(z) < Scalar(kZohLimitThreshold)) return {a_bar, delta * b};
  return {a_bar, std::expm1(z) / a * b};
}

template <typename Scalar>
static void check_scan_shapes(const Matrix<Scalar>& x, const ScanParams<Scalar>& params) {
  const SsmDims dims = params.dims();
  dims.validate();
  require(x.rows() >= 1, "selective_scan: sequence length must be >= 1");
  require(x.cols() == dims.d_inner, "selective_scan: x width != d_inner");
  require(params.d_skip.size() == dims.d_inner && params.b_proj.rows() == dims.n_state &&
              params.b_proj.cols() == dims.d_inner && params.c_proj.rows() == dims.n_state &&
              params.c_proj.cols() == dims.d_inner && params.dt_up.rows() == dims.d_inner &&
              params.dt_up.cols() == dims.dt_rank && params.dt_down.cols() == dims.d_inner &&
              params.dt_bias.size() == dims.d_inner,
          "selective_scan: inconsistent parameter shapes");
}

template <typename Scalar>
ScanProjections<Scalar> project_scan_inputs(const Matrix<Scalar>& x,
                                            const ScanParams<Scalar>& params) {
  ScanProjections<Scalar> p;
  p.low.noalias() = x * params.dt_down.transpose();
  p.delta_raw.noalias() = p.low * params.dt_up.transpose();
  p.delta_raw.rowwise() += params.dt_bias.transpose();
  p.delta = p.delta_raw.unaryExpr([](Scalar r) { return softplus(r); });
  p.b.noalias() = x * params.b_proj.transpose();
  p.c.noalias() = x * params.c_proj.transpose();
  return p;
}

template <typename Scalar>
Matrix<Scalar> selective_scan_naive(const Matrix<Scalar>& x, const ScanParams<Scalar>& params) {
  check_scan_shapes(x, params);
  const Index len = x.rows();
  const SsmDims dims = params.dims();
  const Index d = dims.d_inner, n_state = dims.n_state, rank = dims.dt_rank;

  Matrix<Scalar> y = Matrix<Scalar>::Zero(len, d);
  Matrix<Scalar> h = Matrix<Scalar>::Zero(d, n_state);
  std::vector<Scalar> low(rank), delta(d), b(n_state), c(n_state);

  for (Index t = 0; t < len; ++t) {
    for (Index r = 0; r < rank; ++r) {
      Scalar acc = 0;
      for (Index k = 0; k < d; ++k) acc += params.dt_down(r, k) * x(t, k);
      low[r] = acc;
    }
    for (Index k = 0; k < d; ++k) {
      Scalar acc = params.dt_bias(k);
      for (Index r = 0; r < rank; ++r) acc += params.dt_up(k, r) * low[r];
      delta[k] = softplus(acc);
    }
    for (Index s = 0; s < n_state; ++s) {
      Scalar bs = 0, cs = 0;
      for (Index k = 0; k < d; ++k) {
        bs += params.b_proj(s, k) * x(t, k);
        cs += params.c_proj(s, k) * x(t, k);
      }
      b[s] = bs;
      c[s] = cs;
    }
    bool finite = true;
    for (Index k = 0; k < d; ++k) {
      Scalar out = 0;
      for (Index s = 0; s < n_state; ++s) {
        const Scalar a = -std::exp(params.a_log(k, s));
        const auto disc = zoh_discretize(delta[k], a, b[s]);
        h(k, s) = disc.a_bar * h(k, s) + disc.b_bar * x(t, k);
        out += c[s] * h(k, s);
        finite = finite && std::isfinite(h(k, s));
      }
      y(t, k) = out + params.d_skip(k) * x(t, k);
      finite = finite && std::isfinite(y(t, k));
    }
    if (!finite) throw NumericError("selective_scan_naive: non-finite value in recurrence", t);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> selective_scan(const Matrix<Scalar>& x, const ScanParams<Scalar>& params,
                              ScanProjections<Scalar>* proj_out) {
  check_scan_shapes(x, params);
  const Index len = x.rows();
  const Index d = params.a_log.rows(), n_state = params.a_log.cols();

  ScanProjections<Scalar> local;
  ScanProjections<Scalar>& proj = proj_out ? *proj_out : local;
  proj = project_scan_inputs(x, params);

  const Array2<Scalar> a = params.a();
  Array2<Scalar> h = Array2<Scalar>::Zero(d, n_state);
  Array2<Scalar> arg(d, n_state), gain(d, n_state);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> delta(d), xt(d);
  Matrix<Scalar> y(len, d);

  for (Index t = 0; t < len; ++t) {
    delta = proj.delta.row(t).transpose().array();
    xt = x.row(t).transpose().array();
    arg = a.colwise() * delta;
    zoh_gain(arg, a, delta, gain);
    h = arg.exp() * h + (gain.rowwise() * proj.b.row(t).array()).colwise() * xt;
    if (!h.allFinite()) throw NumericError("selective_scan: non-finite value in recurrence", t);
    y.row(t).noalias() = proj.c.row(t) * h.matrix().transpose();
    y.row(t).array() += params.d_skip.transpose().array() * x.row(t).array();
    if (!y.row(t).allFinite()) throw NumericError("selective_scan: non-finite output", t);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> selective_scan_backward(const Matrix<Scalar>& x, const ScanParams<Scalar>& params,
                                       const ScanProjections<Scalar>& proj,
                                       const Matrix<Scalar>& dy, ScanParams<Scalar>& grads) {
  check_scan_shapes(x, params);
  require(dy.rows() == x.rows() && dy.cols() == x.cols(),
          "selective_scan_backward: upstream gradient shape mismatch");
  require(grads.dims() == params.dims(), "selective_scan_backward: gradient buffer shape mismatch");
  require(proj.delta.rows() == x.rows(), "selective_scan_backward: stale projections");

  const Index len = x.rows();
  const Index d = params.a_log.rows(), n_state = params.a_log.cols();
  const Array2<Scalar> a = params.a();
  using Col = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  auto advance = [&](const Array2<Scalar>& prev, Index t, Array2<Scalar>& next) {
    Col delta = proj.delta.row(t).transpose().array();
    Array2<Scalar> arg = a.colwise() * delta;
    Array2<Scalar> gain(d, n_state);
    zoh_gain(arg, a, delta, gain);
    next = arg.exp() * prev +
           (gain.rowwise() * proj.b.row(t).array()).colwise() * x.row(t).transpose().array();
  };

  const Index n_chunks = (len + kBackwardChunk - 1) / kBackwardChunk;
  std::vector<Array2<Scalar>> checkpoints(n_chunks);
  {
    Array2<Scalar> h = Array2<Scalar>::Zero(d, n_state), next;
    for (Index t = 0; t < len; ++t) {
      if (t % kBackwardChunk == 0) checkpoints[t / kBackwardChunk] = h;
      advance(h, t, next);
      h.swap(next);
    }
  }

  Matrix<Scalar> dx = Matrix<Scalar>::Zero(len, d);
  Matrix<Scalar> d_delta(len, d), d_b(len, n_state), d_c(len, n_state);
  Array2<Scalar> dh = Array2<Scalar>::Zero(d, n_state);
  Array2<Scalar> da = Array2<Scalar>::Zero(d, n_state);
  Col d_skip = Col::Zero(d);
  std::vector<Array2<Scalar>> hs(kBackwardChunk + 1);
  Array2<Scalar> arg(d, n_state), a_bar(d, n_state), gain(d, n_state);
  Array2<Scalar> dgain(d, n_state), dh_gain(d, n_state), darg(d, n_state);

  for (Index k = n_chunks - 1; k >= 0; --k) {
    const Index t0 = k * kBackwardChunk;
    const Index t1 = std::min(len, t0 + kBackwardChunk);
    hs[0] = checkpoints[k];
    for (Index t = t0; t < t1; ++t) advance(hs[t - t0], t, hs[t - t0 + 1]);

    for (Index t = t1 - 1; t >= t0; --t) {
      const Array2<Scalar>& h_t = hs[t - t0 + 1];
      const Array2<Scalar>& h_prev = hs[t - t0];
      const Col delta = proj.delta.row(t).transpose().array();
      const Col xt = x.row(t).transpose().array();
      const Col dyt = dy.row(t).transpose().array();
      arg = a.colwise() * delta;
      a_bar = arg.exp();
      zoh_gain(arg, a, delta, gain);

      // y_t = h_t c_t + d_skip * x_t
      d_c.row(t).noalias() = (h_t.matrix().transpose() * dyt.matrix()).transpose();
      d_skip += dyt * xt;
      Col dxt = dyt * params.d_skip.array();
      dh += (dyt.matrix() * proj.c.row(t)).array();

      // h_t = a_bar h_{t-1} + gain * b_t * x_t
      dh_gain = dh * gain;
      dgain = (dh.rowwise() * proj.b.row(t).array()).colwise() * xt;
      d_b.row(t).noalias() = (dh_gain.matrix().transpose() * xt.matrix()).transpose();
      dxt += (dh_gain.matrix() * proj.b.row(t).transpose()).array();
      darg = dh * h_prev * a_bar;  // d a_bar / d arg = a_bar

      Array2<Scalar> dgain_ddelta(d, n_state), dgain_da(d, n_state);
      for (Index j = 0; j < n_state; ++j)
        for (Index i = 0; i < d; ++i) {
          const Scalar z = arg(i, j);
          if (std::abs(z) < Scalar(kZohLimitThreshold)) {
            dgain_ddelta(i, j) = Scalar(1);
            dgain_da(i, j) = delta(i) * delta(i) / Scalar(2);
          } else {
            dgain_ddelta(i, j) = a_bar(i, j);
            dgain_da(i, j) = (z * a_bar(i, j) - std::expm1(z)) / (a(i, j) * a(i, j));
          }
        }
      d_delta.row(t) = (darg * a + dgain * dgain_ddelta).rowwise().sum().transpose().matrix();
      da += darg.colwise() * delta + dgain * dgain_da;
      dh = dh * a_bar;
      dx.row(t) = dxt.transpose().matrix();
    }
  }

  grads.a_log.array() += da * a;  // d(-exp(a_log)) / d a_log = A
  grads.d_skip.array() += d_skip;

  const Matrix<Scalar> d_raw =
      (d_delta.array() * proj.delta_raw.unaryExpr([](Scalar r) { return sigmoid(r); }).array())
          .matrix();
  grads.dt_bias += d_raw.colwise().sum().transpose();
  grads.dt_up.noalias() += d_raw.transpose() * proj.low;
  const Matrix<Scalar> d_low = d_raw * params.dt_up;
  grads.dt_down.noalias() += d_low.transpose() * x;
  dx.noalias() += d_low * params.dt_down;
  grads.b_proj.noalias() += d_b.transpose() * x;
  dx.noalias() += d_b * params.b_proj;
  grads.c_proj.noalias() += d_c.transpose() * x;
  dx.noalias() += d_c * params.c_proj;
  return dx;
}

template <typename Scalar>
ScanGradients<Scalar> selective_scan_backward(const Matrix<Scalar>& x,
                                              const ScanParams<Scalar>& params,
                                              const Matrix<Scalar>& dy) {
  ScanProjections<Scalar> proj;
  selective_scan(x, params, &proj);
  ScanGradients<Scalar> out{Matrix<Scalar>(), ScanParams<Scalar>::zeros(params.dims())};
  out.dx = selective_scan_backward(x, params, proj, dy, out.dparams);
  return out;
}

template <typename Scalar>
ScanState<Scalar>::ScanState(const ScanParams<Scalar>& params)
    : params_(&params),
      a_(params.a()),
      h_(Array2<Scalar>::Zero(params.a_log.rows(), params.a_log.cols())) {}

template <typename Scalar>
void ScanState<Scalar>::reset() {
  h_.setZero();
  steps_ = 0;
}

template <typename Scalar>
Vector<Scalar> ScanState<Scalar>::step(const Vector<Scalar>& x_t) {
  const ScanParams<Scalar>& p = *params_;
  const Index d = a_.rows();
  require(x_t.size() == d, "ScanState::step: x_t width != d_inner");
  const Vector<Scalar> low = p.dt_down * x_t;
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> delta =
      (p.dt_up * low + p.dt_bias).unaryExpr([](Scalar r) { return softplus(r); }).array();
  const RowVector<Scalar> b = (p.b_proj * x_t).transpose();
  const Vector<Scalar> c = p.c_proj * x_t;
  const Array2<Scalar> arg = a_.colwise() * delta;
  Array2<Scalar> gain(d, a_.cols());
  zoh_gain(arg, a_, delta, gain);
  h_ = arg.exp() * h_ + (gain.rowwise() * b.array()).colwise() * x_t.array();
  if (!h_.allFinite()) throw NumericError("ScanState::step: non-finite state", steps_);
  ++steps_;
  return h_.matrix() * c + p.d_skip.cwiseProduct(x_t);
}

#define DOCMAMBA_INSTANTIATE(S)                                                                  \
  template struct ScanParams<S>;                                                                 \
  template Discretized<S> zoh_discretize<S>(S, S, S);                                            \
  template ScanProjections<S> project_scan_inputs<S>(const Matrix<S>&, const ScanParams<S>&);    \
  template Matrix<S> selective_scan_naive<S>(const Matrix<S>&, const ScanParams<S>&);            \
  template Matrix<S> selective_scan<S>(const Matrix<S>&, const ScanParams<S>&,                   \
                                       ScanProjections<S>*);                                     \
  template Matrix<S> selective_scan_backward<S>(const Matrix<S>&, const ScanParams<S>&,          \
                                                const ScanProjections<S>&, const Matrix<S>&,     \
                                                ScanParams<S>&);                                 \
  template ScanGradients<S> selective_scan_backward<S>(const Matrix<S>&, const ScanParams<S>&,   \
                                                       const Matrix<S>&);                        \
  template class ScanState<S>;

DOCMAMBA_INSTANTIATE(float)
DOCMAMBA_INSTANTIATE(double)

}  // namespace docmamba
