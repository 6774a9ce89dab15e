#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "docmamba/datapipe.hpp"
#include "docmamba/doc_model.hpp"

namespace docmamba {

enum class LrSchedule { linear, constant };

struct TrainConfig {
  double lr = 5e-5;
  double warmup_fraction = 0.1;
  int total_steps = 1000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::optional<double> grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::linear;
  Index token_budget = 1024;  // k for bucketed MLM batches
  Index bucket_width = kBucketWidth;
  Index max_length = kMaxSequenceLength;
  int batch_docs = 8;         // documents per fine-tuning batch
  int checkpoint_every = 500;
  bool freeze_backbone = false;
  double mask_prob = 0.15;

  void validate() const;
  /// Keys are the field names; "adam_betas" is a two-element array and
  /// "grad_clip_norm" may be null. Unknown keys throw ContractError.
  static TrainConfig from_json(const std::string& json_text);
  std::string to_json() const;
};

/// Piecewise-linear multiplier: step / W up to W = warmup_fraction * total,
/// then (total - step) / (total - W), floored at 0.
double lr_multiplier(int step, int total_steps, double warmup_fraction);
double scheduled_lr(const TrainConfig& config, int step);

template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  int updates = 0;   // applied steps, drives bias correction
  int rejected = 0;  // steps skipped for non-finite gradients

  static AdamState like(const Inventory<Scalar>& params);
};

/// AdamW with bias correction at learning rate scheduled_lr(config, step).
/// Weight decay is decoupled and applies only to tensors whose decays() is
/// true. Gradients are clipped by global norm when configured. Returns false
/// (and counts the rejection) if any gradient is non-finite.
template <typename Scalar>
bool adam_step(const Inventory<Scalar>& params, const Inventory<Scalar>& grads,
               AdamState<Scalar>& state, const TrainConfig& config, int step);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
};

std::string step_record_json(const StepRecord& r);

struct TrainOptions {
  std::string output_dir;  // checkpoints and metrics.jsonl; empty disables file output
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepRecord> curve;
  int rejected_steps = 0;
  BucketStats buckets;
};

/// Masked-LM pre-training over bucketed batches of SFBS-ordered byte tokens.
/// `init` overrides the seeded initialization.
TrainResult train_mlm(const std::vector<Document>& corpus, const ModelConfig& model,
                      const TrainConfig& config, const TrainOptions& options = {},
                      const ModelParams<float>* init = nullptr);

/// Mean masked-LM loss over `seqs` under a seeded mask.
LossSum evaluate_mlm(const std::vector<TokenizedDoc>& seqs, const ModelParams<float>& params,
                     const MaskingPolicy& policy, std::uint64_t seed);

struct EvalPoint {
  int step = 0;
  F1Score f1;
};

struct FinetuneResult {
  ModelParams<float> params;
  std::vector<StepRecord> curve;
  std::vector<EvalPoint> eval_curve;  // after every pass over the training split
  F1Score train_f1;
  F1Score eval_f1;
  int rejected_steps = 0;
};

/// Deterministic split by shuffled document order; the eval split holds
/// round(fraction * n) documents.
std::pair<std::vector<Document>, std::vector<Document>> split_corpus(
    const std::vector<Document>& docs, double eval_fraction, std::uint64_t seed);

/// Entity-level F1 pooled over documents, on token-level BIO spans.
F1Score evaluate_tagging(const std::vector<Document>& docs, const ModelParams<float>& params,
                         const TagSet& tags);

/// BIO fine-tuning with the dropout + linear head. Batches hold
/// `batch_docs` whole documents. The train and eval splits must have
/// disjoint doc_ids.
FinetuneResult finetune_tagging(const std::vector<Document>& train,
                                const std::vector<Document>& eval, const ModelConfig& model,
                                ModelParams<float> init, const TrainConfig& config,
                                const TagSet& tags, const TrainOptions& options = {});

// ---- gradient check ----

struct GradcheckOptions {
  Index samples = 240;
  double step = 1e-5;
  Index sequence_length = 8;
  std::set<ParamFamily> families;  // empty = all
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  Index checked = 0;
  Index parameter_count = 0;
  std::vector<std::string> families;

  std::string to_json() const;
};

/// Central differences against the analytic gradient of MLM loss plus
/// tagging loss, in double precision, on a seeded random sequence.
GradcheckReport gradcheck(const ModelConfig& config, std::uint64_t seed,
                          const GradcheckOptions& options = {});

}  // namespace docmamba
