#pragma once

#include <string>
#include <vector>

#include "docmamba/params.hpp"
#include "docmamba/ssm_core.hpp"
#include "docmamba/tensor.hpp"

namespace docmamba {

enum class NormKind { rms, layer };

inline constexpr double kNormEps = 1e-5;

struct BlockDims {
  Index hidden = 768;
  Index d_inner = 1536;
  Index n_state = 16;
  Index dt_rank = 96;
  Index conv_width = 4;
  NormKind norm = NormKind::rms;

  SsmDims ssm() const { return {d_inner, n_state, dt_rank}; }
  void validate() const;
  bool operator==(const BlockDims&) const = default;
};

/// One bidirectional block. Forward and backward directions own separate
/// convolution kernels and scan parameters.
template <typename Scalar>
struct BlockParams {
  Vector<Scalar> norm_weight;  // hidden
  Vector<Scalar> norm_bias;    // hidden for layer norm, empty for RMS norm
  Matrix<Scalar> in_proj;      // 2 d_inner x hidden; rows [0, d_inner) give X, the rest Z
  Matrix<Scalar> conv_fwd;     // d_inner x conv_width
  Matrix<Scalar> conv_bwd;     // d_inner x conv_width
  ScanParams<Scalar> scan_fwd;
  ScanParams<Scalar> scan_bwd;
  Matrix<Scalar> out_proj;     // hidden x d_inner

  static BlockParams zeros(const BlockDims& dims);
  static BlockParams init(const BlockDims& dims, Rng& rng);
  BlockDims dims() const;
  void append_to(Inventory<Scalar>& out, const std::string& prefix);
};

/// out = weight * s / sqrt(mean(s^2) + 1e-5)
template <typename Scalar>
Vector<Scalar> rms_normalize(const Vector<Scalar>& s, const Vector<Scalar>& weight);

template <typename Scalar>
struct NormTape {
  Matrix<Scalar> xhat;     // normalized rows before the affine weight
  Vector<Scalar> inv_std;  // per row
};

/// Row-wise RMS or layer normalization of an L x hidden sequence.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, const Vector<Scalar>& weight,
                              const Vector<Scalar>& bias, NormKind kind,
                              NormTape<Scalar>* tape = nullptr);

template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const NormTape<Scalar>& tape, const Vector<Scalar>& weight,
                                       NormKind kind, const Matrix<Scalar>& dy,
                                       Vector<Scalar>& dweight, Vector<Scalar>& dbias);

/// Depthwise causal convolution with w - 1 zeros of left padding:
/// out(t, c) = sum_j kernel(c, j) * x(t - w + 1 + j, c).
template <typename Scalar>
Matrix<Scalar> causal_conv(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel);

template <typename Scalar>
Matrix<Scalar> causal_conv_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel,
                                    const Matrix<Scalar>& dy, Matrix<Scalar>& dkernel);

/// Intermediate values kept by a training forward pass.
template <typename Scalar>
struct BlockTape {
  NormTape<Scalar> norm;
  Matrix<Scalar> normed;
  Matrix<Scalar> x, z;              // L x d_inner each
  Matrix<Scalar> conv_f, x_f;       // forward branch, pre/post activation
  Matrix<Scalar> x_rev, conv_b, x_b;  // backward branch in reversed time
  ScanProjections<Scalar> proj_f, proj_b;
  Matrix<Scalar> y_f, y_b;          // both in forward time order
  Matrix<Scalar> mixed;             // (y_f + y_b) * silu(z)
};

/// S_prev + out_proj((Y_f + Y_b) * silu(Z)). Pass a tape to keep the
/// intermediates for `bimamba_block_backward`.
template <typename Scalar>
Matrix<Scalar> bimamba_block(const Matrix<Scalar>& s_prev, const BlockParams<Scalar>& params,
                             BlockTape<Scalar>* tape = nullptr);

/// Accumulates parameter gradients into `grads` and returns d/dS_prev.
template <typename Scalar>
Matrix<Scalar> bimamba_block_backward(const BlockTape<Scalar>& tape,
                                      const BlockParams<Scalar>& params,
                                      const Matrix<Scalar>& dout, BlockParams<Scalar>& grads);

/// Token-at-a-time evaluation of the block's forward (causal) direction.
/// The backward direction depends on future tokens and is not part of the
/// stream. State is a conv window plus one ScanState.
template <typename Scalar>
class ForwardStream {
 public:
  explicit ForwardStream(const BlockParams<Scalar>& params);
  Vector<Scalar> step(const Vector<Scalar>& s_t);

 private:
  const BlockParams<Scalar>* params_;
  Matrix<Scalar> window_;  // conv_width x d_inner, oldest row first
  ScanState<Scalar> scan_;
};

}  // namespace docmamba
