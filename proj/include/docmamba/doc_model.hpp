#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "docmamba/mamba_block.hpp"
#include "docmamba/params.hpp"
#include "docmamba/tensor.hpp"

namespace docmamba {

inline constexpr int kCoordMax = 1000;
inline constexpr int kPolyCoords = 8;

/// Quadrilateral (x1, y1, ..., x4, y4) clockwise from the upper-left corner,
/// each coordinate an integer in [0, 1000].
using Poly = std::array<int, kPolyCoords>;
/// Same layout in page units.
using Quad = std::array<double, kPolyCoords>;

struct SpecialTokens {
  int pad_id = 0;
  int cls_id = 1;
  int mask_id = 2;
  int unk_id = 3;
  int count = 4;  // ids below `count` are reserved

  bool is_special(int id) const { return id >= 0 && id < count; }
};

struct ModelConfig {
  Index hidden = 768;
  Index layers = 24;
  Index d_inner = 1536;
  Index n_state = 16;
  Index dt_rank = 0;  // 0 selects ceil(d_inner / 16)
  Index conv_width = 4;
  Index vocab_size = 260;
  Index coord_bins = kCoordMax + 1;
  Index num_coord_types = kPolyCoords;
  Index num_tags = 9;
  double dropout_rate = 0.1;
  NormKind norm = NormKind::rms;

  static ModelConfig tiny(Index vocab_size = 260);
  static ModelConfig gradcheck_tiny();

  Index sub_width() const { return hidden / num_coord_types; }
  Index resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (d_inner + 15) / 16; }
  BlockDims block_dims() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> word_emb;     // vocab x hidden; also the MLM output matrix
  Matrix<Scalar> coord_value;  // coord_bins x hidden/8, shared by X and Y
  Matrix<Scalar> coord_type;   // 8 x hidden/8
  std::vector<BlockParams<Scalar>> blocks;
  Vector<Scalar> final_norm_weight;
  Vector<Scalar> final_norm_bias;  // empty for RMS norm
  Vector<Scalar> mlm_bias;         // vocab
  Matrix<Scalar> tag_weight;       // num_tags x hidden
  Vector<Scalar> tag_bias;         // num_tags

  static ModelParams zeros(const ModelConfig& config);
  /// Tables ~ N(0, 0.02), projections Xavier-uniform, head biases zero.
  static ModelParams init(const ModelConfig& config, Rng& rng);

  Inventory<Scalar> inventory();
  Index parameter_count();
  template <typename Other>
  ModelParams<Other> cast() const;
};

/// One token of an encoder input.
struct TokenRecord {
  int token_id = 0;
  Poly poly{};
  int segment_id = 0;

  bool operator==(const TokenRecord&) const = default;
};

/// Scales page coordinates to [0, 1000], rounding half up and clamping.
Poly normalize_box(const Quad& quad, double page_w, double page_h);

/// Concatenation over the eight coordinates of value_table[poly[t]] + type_table[t].
template <typename Scalar>
Vector<Scalar> embed_2d_position(const Poly& poly, const ModelParams<Scalar>& params);

/// Word embedding plus 2-D position embedding. There is no 1-D position term.
template <typename Scalar>
Vector<Scalar> embed_tokens(const TokenRecord& record, const ModelParams<Scalar>& params);

template <typename Scalar>
struct EncodeTape {
  std::vector<BlockTape<Scalar>> blocks;
  NormTape<Scalar> final_norm;
};

/// Embeds the sequence, runs every block, and applies the final norm.
template <typename Scalar>
Matrix<Scalar> encode(const std::vector<TokenRecord>& records, const ModelParams<Scalar>& params,
                      EncodeTape<Scalar>* tape = nullptr);

/// Back-propagates d/d(hidden states) through the stack into `grads`,
/// including the embedding tables.
template <typename Scalar>
void encode_backward(const std::vector<TokenRecord>& records, const ModelParams<Scalar>& params,
                     const EncodeTape<Scalar>& tape, const Matrix<Scalar>& dhidden,
                     ModelParams<Scalar>& grads);

/// hidden * word_emb^T + mlm_bias.
template <typename Scalar>
Matrix<Scalar> mlm_logits(const Matrix<Scalar>& hidden, const ModelParams<Scalar>& params);

inline constexpr int kIgnoreLabel = -1;

struct LossSum {
  double sum = 0.0;
  Index count = 0;
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / double(count);
  }
  LossSum& operator+=(const LossSum& o) {
    sum += o.sum;
    count += o.count;
    return *this;
  }
};

/// Summed softmax cross-entropy over rows whose label is not kIgnoreLabel.
/// If `dlogits` is given it receives weight * d(sum)/d(logits).
template <typename Scalar>
LossSum cross_entropy(const Matrix<Scalar>& logits, const std::vector<int>& labels,
                      Matrix<Scalar>* dlogits = nullptr, Scalar weight = Scalar(1));

/// Inverted dropout driven by an explicit random stream.
class Dropout {
 public:
  Dropout(double rate, std::uint64_t seed);
  double rate() const { return rate_; }
  template <typename Scalar>
  Matrix<Scalar> mask(Index rows, Index cols);

 private:
  double rate_;
  Rng rng_;
};

/// Dropout (when `dropout` is non-null) then the linear tagging head.
/// Passing `applied_mask` stores the mask that was used.
template <typename Scalar>
Matrix<Scalar> tag_logits(const Matrix<Scalar>& hidden, const ModelParams<Scalar>& params,
                          Dropout* dropout = nullptr, Matrix<Scalar>* applied_mask = nullptr);

/// Masked-LM loss for one sequence. Accumulates weight * gradient into
/// `grads` when non-null.
template <typename Scalar>
LossSum mlm_objective(const std::vector<TokenRecord>& records, const std::vector<int>& labels,
                      const ModelParams<Scalar>& params, ModelParams<Scalar>* grads = nullptr,
                      Scalar weight = Scalar(1));

/// Tagging loss for one sequence; `labels` holds tag indices or kIgnoreLabel.
template <typename Scalar>
LossSum tag_objective(const std::vector<TokenRecord>& records, const std::vector<int>& labels,
                      const ModelParams<Scalar>& params, Dropout* dropout = nullptr,
                      ModelParams<Scalar>* grads = nullptr, Scalar weight = Scalar(1),
                      bool backbone_grads = true);

/// Greedy tag indices per token, dropout disabled.
template <typename Scalar>
std::vector<int> predict_tags(const std::vector<TokenRecord>& records,
                              const ModelParams<Scalar>& params);

// ---- entity-level scoring ----

/// Tag vocabulary: index 0 is "O", then B-/I- pairs per entity type.
class TagSet {
 public:
  TagSet() = default;
  explicit TagSet(std::vector<std::string> entity_types);

  const std::vector<std::string>& entity_types() const { return types_; }
  int size() const { return 2 * int(types_.size()) + 1; }
  int index_of(const std::string& tag) const;  // throws ContractError on unknown tags
  std::string name_of(int index) const;

 private:
  std::vector<std::string> types_;
};

struct Entity {
  std::string type;
  Index start;
  Index end;  // inclusive
  bool operator==(const Entity&) const = default;
  auto operator<=>(const Entity&) const = default;
};

/// Maximal BIO spans. A stray I-X (not continuing an X span) starts a new span.
std::vector<Entity> extract_entities(const std::vector<std::string>& tags);

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Index predicted = 0;
  Index gold = 0;
  Index correct = 0;
  F1Score& operator+=(const F1Score& o);  // pools counts, recomputes P/R/F1
};

F1Score entity_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold);

// ---- checkpoints ----

inline constexpr const char* kCheckpointMagic = "docmamba-ckpt-v1";

template <typename Scalar>
struct Checkpoint {
  ModelConfig config;
  ModelParams<Scalar> params;
  std::string metadata_json = "{}";
};

/// Binary container: magic line, length-prefixed JSON header (config and a
/// tensor directory with names, shapes, and offsets), then raw little-endian
/// tensor data.
template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     ModelParams<Scalar>& params, const std::string& metadata_json = "{}");

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json);

}  // namespace docmamba
