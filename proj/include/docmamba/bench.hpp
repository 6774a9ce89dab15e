#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "docmamba/doc_model.hpp"

namespace docmamba {

// ---- allocation metering ----

namespace alloc_meter {

/// True when the malloc interposer is linked into the running binary.
bool active();
std::int64_t live_bytes();
std::int64_t peak_bytes();
/// Sets the peak to the current live byte count.
void reset_peak();

}  // namespace alloc_meter

// ---- softmax attention baseline ----

template <typename Scalar>
struct AttentionParams {
  Index heads = 4;
  Matrix<Scalar> w_q, w_k, w_v, w_o;  // hidden x hidden
  Vector<Scalar> norm_weight;

  static AttentionParams init(Index hidden, Index heads, Rng& rng);
  Index hidden() const { return w_q.rows(); }
};

/// Multi-head softmax self-attention, concat(softmax(Q_h K_h^T / sqrt(d_h)) V_h) W_o.
/// The full heads x L x L probability tensor is materialized; `probs`, when
/// given, receives it as one L x L matrix per head.
template <typename Scalar>
Matrix<Scalar> attention_baseline_forward(const Matrix<Scalar>& s, const AttentionParams<Scalar>& p,
                                          std::vector<Matrix<Scalar>>* probs = nullptr);

/// Same embedding front-end as the encoder, then pre-norm residual attention
/// layers and the final norm.
template <typename Scalar>
Matrix<Scalar> attention_encode(const std::vector<TokenRecord>& records,
                                const ModelParams<Scalar>& embeddings,
                                const std::vector<AttentionParams<Scalar>>& layers);

/// Token-at-a-time inference through the causal branch of every block, with
/// state independent of the sequence length.
template <typename Scalar>
class StreamingEncoder {
 public:
  explicit StreamingEncoder(const ModelParams<Scalar>& params);
  Vector<Scalar> step(const TokenRecord& record);

 private:
  const ModelParams<Scalar>* params_;
  std::vector<ForwardStream<Scalar>> layers_;
};

// ---- scaling measurements ----

/// Least-squares slope of log y against log x.
double fit_power_law(const std::vector<std::pair<double, double>>& points);

enum class BenchModel { docmamba, attention_baseline, docmamba_streaming };

std::string bench_model_name(BenchModel model);

struct BenchOptions {
  ModelConfig model = ModelConfig::tiny();
  Index attention_heads = 4;
  int reps = 3;
  std::uint64_t seed = 0;
};

struct ScalingSample {
  Index length = 0;
  double wall_time_s = 0.0;
  std::int64_t peak_bytes = 0;
};

struct ScalingReport {
  std::string model_tag;
  std::vector<ScalingSample> samples;
  double fitted_time_exponent = 0.0;
  double fitted_mem_exponent = 0.0;
  std::string memory_method;            // "allocator" or "analytic"
  std::vector<Index> truncated_lengths;  // lengths that ran out of memory
  int reps = 0;

  std::string to_json() const;
};

/// Forward-only timing (median over `reps` after one discarded warm-up run)
/// and peak heap growth per length. Lengths must be strictly increasing,
/// at least four, each >= 64. Allocation failure at a length ends the sweep
/// and is recorded.
ScalingReport bench_scaling(BenchModel model, const std::vector<Index>& lengths,
                            const BenchOptions& options = {});

/// Log-log SVG plot of time and peak memory for each report.
std::string render_scaling_svg(const std::vector<ScalingReport>& reports);

/// Random sequence of `length` tokens ([CLS] first) for benchmarks.
std::vector<TokenRecord> random_sequence(Index length, Index vocab_size, Rng& rng);

}  // namespace docmamba
