#pragma once

#include <string>

#include "docmamba/params.hpp"
#include "docmamba/tensor.hpp"

namespace docmamba {

struct SsmDims {
  Index d_inner = 1;
  Index n_state = 16;
  Index dt_rank = 1;

  /// dt_rank = ceil(d_inner / 16).
  static SsmDims for_width(Index d_inner, Index n_state = 16);
  void validate() const;
  bool operator==(const SsmDims&) const = default;
};

/// Parameters of one selective scan. A = -exp(a_log) is kept strictly
/// negative by construction. B_t = b_proj x_t, C_t = c_proj x_t and
/// delta_t = softplus(dt_up dt_down x_t + dt_bias) are computed per token.
template <typename Scalar>
struct ScanParams {
  Matrix<Scalar> a_log;    // d_inner x n_state
  Vector<Scalar> d_skip;   // d_inner
  Matrix<Scalar> b_proj;   // n_state x d_inner
  Matrix<Scalar> c_proj;   // n_state x d_inner
  Matrix<Scalar> dt_down;  // dt_rank x d_inner
  Matrix<Scalar> dt_up;    // d_inner x dt_rank
  Vector<Scalar> dt_bias;  // d_inner

  static ScanParams zeros(const SsmDims& dims);
  /// S4D-real A, unit skip, Xavier projections, dt_bias set so that the
  /// initial delta is log-uniform in [1e-3, 0.1].
  static ScanParams init(const SsmDims& dims, Rng& rng);

  SsmDims dims() const;
  Array2<Scalar> a() const { return -a_log.array().exp(); }
  void check_finite() const;
  void append_to(Inventory<Scalar>& out, const std::string& prefix);
};

template <typename Scalar>
struct Discretized {
  Scalar a_bar;
  Scalar b_bar;
};

/// Zero-order hold: a_bar = exp(delta a), b_bar = (exp(delta a) - 1) / a * b,
/// with b_bar = delta * b when |delta a| < 1e-8.
template <typename Scalar>
Discretized<Scalar> zoh_discretize(Scalar delta, Scalar a, Scalar b);

/// Threshold on |delta a| below which the ZOH input gain uses its limit.
inline constexpr double kZohLimitThreshold = 1e-8;

/// Per-token quantities derived from the scan input.
template <typename Scalar>
struct ScanProjections {
  Matrix<Scalar> low;        // L x dt_rank
  Matrix<Scalar> delta_raw;  // L x d_inner, pre-softplus
  Matrix<Scalar> delta;      // L x d_inner
  Matrix<Scalar> b;          // L x n_state
  Matrix<Scalar> c;          // L x n_state
};

template <typename Scalar>
ScanProjections<Scalar> project_scan_inputs(const Matrix<Scalar>& x,
                                            const ScanParams<Scalar>& params);

/// Sequential reference recurrence, one channel and state at a time.
template <typename Scalar>
Matrix<Scalar> selective_scan_naive(const Matrix<Scalar>& x, const ScanParams<Scalar>& params);

/// Vectorized scan. Matches `selective_scan_naive` elementwise.
/// If `proj` is non-null the per-token projections are stored there for a
/// later backward pass.
template <typename Scalar>
Matrix<Scalar> selective_scan(const Matrix<Scalar>& x, const ScanParams<Scalar>& params,
                              ScanProjections<Scalar>* proj = nullptr);

/// Adjoint of `selective_scan`. Gradients of the parameters are accumulated
/// into `grads`; the gradient with respect to `x` is returned.
/// Hidden states are recomputed chunk by chunk from checkpoints, so memory
/// stays O(L * (d_inner + n_state) + (L / chunk) * d_inner * n_state).
template <typename Scalar>
Matrix<Scalar> selective_scan_backward(const Matrix<Scalar>& x, const ScanParams<Scalar>& params,
                                       const ScanProjections<Scalar>& proj,
                                       const Matrix<Scalar>& dy, ScanParams<Scalar>& grads);

template <typename Scalar>
struct ScanGradients {
  Matrix<Scalar> dx;
  ScanParams<Scalar> dparams;
};

/// Convenience overload that recomputes the projections.
template <typename Scalar>
ScanGradients<Scalar> selective_scan_backward(const Matrix<Scalar>& x,
                                              const ScanParams<Scalar>& params,
                                              const Matrix<Scalar>& dy);

/// Token-at-a-time recurrent form. Holds only the d_inner x n_state state.
template <typename Scalar>
class ScanState {
 public:
  explicit ScanState(const ScanParams<Scalar>& params);

  /// Consumes x_t (length d_inner) and returns y_t.
  Vector<Scalar> step(const Vector<Scalar>& x_t);
  void reset();
  Index steps() const { return steps_; }
  const Array2<Scalar>& state() const { return h_; }

 private:
  const ScanParams<Scalar>* params_;
  Array2<Scalar> a_;
  Array2<Scalar> h_;
  Index steps_ = 0;
};

}  // namespace docmamba
