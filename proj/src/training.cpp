#include "docmamba/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace docmamba {

using nlohmann::json;

// ---- configuration ----

void TrainConfig::validate() const {
  require(std::isfinite(lr) && lr >= 0, "TrainConfig: lr must be non-negative");
  require(warmup_fraction >= 0 && warmup_fraction < 1, "TrainConfig: warmup_fraction outside [0, 1)");
  require(total_steps >= 0, "TrainConfig: total_steps must be non-negative");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "TrainConfig: adam betas outside [0, 1)");
  require(adam_eps > 0, "TrainConfig: adam_eps must be positive");
  require(weight_decay >= 0, "TrainConfig: weight_decay must be non-negative");
  require(!grad_clip_norm || *grad_clip_norm > 0, "TrainConfig: grad_clip_norm must be positive");
  require(token_budget >= bucket_width && bucket_width >= 1,
          "TrainConfig: token_budget must be at least bucket_width");
  require(max_length >= 2, "TrainConfig: max_length must be at least 2");
  require(batch_docs >= 1, "TrainConfig: batch_docs must be positive");
  require(checkpoint_every >= 1, "TrainConfig: checkpoint_every must be positive");
  require(mask_prob >= 0 && mask_prob <= 1, "TrainConfig: mask_prob outside [0, 1]");
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("train_config", e.what());
  }
  require(j.is_object(), "TrainConfig: expected a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") c.lr = value.get<double>();
      else if (key == "warmup_fraction") c.warmup_fraction = value.get<double>();
      else if (key == "total_steps") c.total_steps = value.get<int>();
      else if (key == "adam_betas") {
        require(value.is_array() && value.size() == 2, "TrainConfig: adam_betas needs two numbers");
        c.adam_beta1 = value[0].get<double>();
        c.adam_beta2 = value[1].get<double>();
      } else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "grad_clip_norm") {
        if (value.is_null()) c.grad_clip_norm.reset();
        else c.grad_clip_norm = value.get<double>();
      } else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "schedule") {
        const auto s = value.get<std::string>();
        require(s == "linear" || s == "constant", "TrainConfig: schedule must be linear or constant");
        c.schedule = s == "linear" ? LrSchedule::linear : LrSchedule::constant;
      } else if (key == "token_budget") c.token_budget = value.get<Index>();
      else if (key == "bucket_width") c.bucket_width = value.get<Index>();
      else if (key == "max_length") c.max_length = value.get<Index>();
      else if (key == "batch_docs") c.batch_docs = value.get<int>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
      else if (key == "freeze_backbone") c.freeze_backbone = value.get<bool>();
      else if (key == "mask_prob") c.mask_prob = value.get<double>();
      else throw ContractError("TrainConfig: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("TrainConfig: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  json j = {{"lr", lr},
            {"warmup_fraction", warmup_fraction},
            {"total_steps", total_steps},
            {"adam_betas", {adam_beta1, adam_beta2}},
            {"adam_eps", adam_eps},
            {"weight_decay", weight_decay},
            {"grad_clip_norm", grad_clip_norm ? json(*grad_clip_norm) : json(nullptr)},
            {"seed", seed},
            {"schedule", schedule == LrSchedule::linear ? "linear" : "constant"},
            {"token_budget", token_budget},
            {"bucket_width", bucket_width},
            {"max_length", max_length},
            {"batch_docs", batch_docs},
            {"checkpoint_every", checkpoint_every},
            {"freeze_backbone", freeze_backbone},
            {"mask_prob", mask_prob}};
  return j.dump();
}

double lr_multiplier(int step, int total_steps, double warmup_fraction) {
  if (total_steps <= 0) return 0.0;
  const double t = step, total = total_steps, warm = warmup_fraction * total;
  if (t < warm) return t / warm;
  if (total <= warm) return 1.0;
  return std::max(0.0, (total - t) / (total - warm));
}

double scheduled_lr(const TrainConfig& config, int step) {
  if (config.schedule == LrSchedule::constant) return config.lr;
  return config.lr * lr_multiplier(step, config.total_steps, config.warmup_fraction);
}

// ---- optimizer ----

template <typename Scalar>
AdamState<Scalar> AdamState<Scalar>::like(const Inventory<Scalar>& params) {
  AdamState s;
  for (const auto& t : params) {
    s.m.push_back(Matrix<Scalar>::Zero(t.rows, t.cols));
    s.v.push_back(Matrix<Scalar>::Zero(t.rows, t.cols));
  }
  return s;
}

template <typename Scalar>
bool adam_step(const Inventory<Scalar>& params, const Inventory<Scalar>& grads,
               AdamState<Scalar>& state, const TrainConfig& config, int step) {
  require(step >= 1, "adam_step: step must be >= 1");
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: parameter/gradient/state count mismatch");
  double sq = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    require(params[k].rows == grads[k].rows && params[k].cols == grads[k].cols,
            "adam_step: shape mismatch for " + params[k].name);
    const auto g = grads[k].map();
    if (!all_finite(g)) {
      ++state.rejected;
      return false;
    }
    sq += g.template cast<double>().squaredNorm();
  }
  double clip = 1.0;
  if (config.grad_clip_norm && std::sqrt(sq) > *config.grad_clip_norm)
    clip = *config.grad_clip_norm / std::sqrt(sq);

  ++state.updates;
  const double lr = scheduled_lr(config, step);
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, state.updates);
  const double bc2 = 1.0 - std::pow(b2, state.updates);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].map().array();
    const auto g = (grads[k].map().array() * Scalar(clip)).eval();
    auto m = state.m[k].array();
    auto v = state.v[k].array();
    m = Scalar(b1) * m + Scalar(1 - b1) * g;
    v = Scalar(b2) * v + Scalar(1 - b2) * g.square();
    const auto update =
        ((m / Scalar(bc1)) / ((v / Scalar(bc2)).sqrt() + Scalar(config.adam_eps))).eval();
    if (params[k].decays() && config.weight_decay > 0)
      p -= Scalar(lr * config.weight_decay) * p;
    p -= Scalar(lr) * update;
  }
  return true;
}

std::string step_record_json(const StepRecord& r) {
  return json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall_time", r.wall_time}}.dump();
}

// ---- loops ----

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename Scalar>
void zero_all(const Inventory<Scalar>& inv) {
  for (const auto& t : inv) t.map().setZero();
}

class RunOutput {
 public:
  explicit RunOutput(const TrainOptions& options) : options_(options) {
    if (options_.output_dir.empty()) return;
    std::filesystem::create_directories(options_.output_dir);
    metrics_.open(std::filesystem::path(options_.output_dir) / "metrics.jsonl", std::ios::trunc);
    if (!metrics_) throw std::runtime_error("cannot write metrics in " + options_.output_dir);
  }

  void record(const StepRecord& r) {
    if (metrics_.is_open()) metrics_ << step_record_json(r) << '\n' << std::flush;
    if (options_.on_step) options_.on_step(r);
  }

  void checkpoint(const std::string& name, const ModelConfig& model, ModelParams<float>& params,
                  const json& metadata) {
    if (options_.output_dir.empty()) return;
    save_checkpoint((std::filesystem::path(options_.output_dir) / name).string(), model, params,
                    metadata.dump());
  }

 private:
  const TrainOptions& options_;
  std::ofstream metrics_;
};

std::string step_name(int step) {
  std::ostringstream s;
  s << "checkpoint-" << std::setw(6) << std::setfill('0') << step << ".bin";
  return s.str();
}

std::vector<TokenizedDoc> tokenize_all(const std::vector<Document>& docs, const Tokenizer& tok,
                                       const TagSet* tags) {
  std::vector<TokenizedDoc> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(tokenize_document(d, tok, ScanMode::sfbs, tags));
  return out;
}

}  // namespace

TrainResult train_mlm(const std::vector<Document>& corpus, const ModelConfig& model,
                      const TrainConfig& config, const TrainOptions& options,
                      const ModelParams<float>* init) {
  require(!corpus.empty(), "train_mlm: corpus is empty");
  config.validate();
  model.validate();
  const ByteTokenizer tok;
  require(model.vocab_size >= tok.vocab_size(), "train_mlm: model vocabulary smaller than tokenizer's");
  const std::vector<TokenizedDoc> seqs = tokenize_all(corpus, tok, nullptr);

  TrainResult result;
  Rng init_rng(config.seed);
  result.params = init ? *init : ModelParams<float>::init(model, init_rng);
  ModelParams<float> grads = ModelParams<float>::zeros(model);
  const Inventory<float> pinv = result.params.inventory();
  const Inventory<float> ginv = grads.inventory();
  AdamState<float> state = AdamState<float>::like(pinv);

  MaskingPolicy policy;
  policy.p_mask = config.mask_prob;
  Rng mask_rng(config.seed ^ 0x6d61736b5f726e67ULL);
  RunOutput out(options);
  const auto start = Clock::now();

  int step = 0;
  for (std::uint64_t epoch = 0; step < config.total_steps; ++epoch) {
    const std::vector<Batch> batches = bucket_batches(seqs, config.token_budget, config.bucket_width,
                                                      config.seed + epoch, &result.buckets,
                                                      config.max_length);
    require(!batches.empty(), "train_mlm: no sequence has more than [CLS]");
    for (const Batch& batch : batches) {
      if (step >= config.total_steps) break;
      std::vector<std::vector<TokenRecord>> inputs;
      std::vector<std::vector<int>> labels;
      Index count = 0;
      for (const auto& records : batch.records) {
        std::vector<int> ids(records.size());
        std::transform(records.begin(), records.end(), ids.begin(),
                       [](const TokenRecord& r) { return r.token_id; });
        MaskedTokens m = apply_mlm_mask(ids, policy, tok.specials(), tok.vocab_size(), mask_rng);
        std::vector<TokenRecord> masked = records;
        for (std::size_t i = 0; i < masked.size(); ++i) masked[i].token_id = m.ids[i];
        count += Index(std::count_if(m.labels.begin(), m.labels.end(),
                                     [](int l) { return l != kIgnoreLabel; }));
        inputs.push_back(std::move(masked));
        labels.push_back(std::move(m.labels));
      }
      if (count == 0) continue;

      ++step;
      zero_all(ginv);
      LossSum loss;
      const float weight = 1.0f / float(count);
      for (std::size_t s = 0; s < inputs.size(); ++s)
        loss += mlm_objective(inputs[s], labels[s], result.params, &grads, weight);
      const double mean = *loss.mean();
      const double lr = scheduled_lr(config, step);
      if (!std::isfinite(mean))
        ++state.rejected;
      else
        adam_step(pinv, ginv, state, config, step);

      const StepRecord rec{step, mean, lr, seconds_since(start)};
      result.curve.push_back(rec);
      out.record(rec);
      if (step % config.checkpoint_every == 0 && step < config.total_steps)
        out.checkpoint(step_name(step), model, result.params, {{"kind", "mlm"}, {"step", step}});
    }
  }
  out.checkpoint("checkpoint-final.bin", model, result.params, {{"kind", "mlm"}, {"step", step}});
  result.rejected_steps = state.rejected;
  return result;
}

LossSum evaluate_mlm(const std::vector<TokenizedDoc>& seqs, const ModelParams<float>& params,
                     const MaskingPolicy& policy, std::uint64_t seed) {
  const ByteTokenizer tok;
  Rng rng(seed);
  LossSum total;
  for (const auto& seq : seqs) {
    MaskedTokens m = apply_mlm_mask(seq.token_ids(), policy, tok.specials(), tok.vocab_size(), rng);
    std::vector<TokenRecord> masked = seq.records;
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i].token_id = m.ids[i];
    total += mlm_objective(masked, m.labels, params);
  }
  return total;
}

std::pair<std::vector<Document>, std::vector<Document>> split_corpus(
    const std::vector<Document>& docs, double eval_fraction, std::uint64_t seed) {
  require(eval_fraction >= 0 && eval_fraction <= 1, "split_corpus: fraction outside [0, 1]");
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_eval = std::size_t(std::llround(eval_fraction * double(docs.size())));
  std::pair<std::vector<Document>, std::vector<Document>> out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_eval ? out.second : out.first).push_back(docs[order[i]]);
  return out;
}

namespace {

F1Score score_sequences(const std::vector<TokenizedDoc>& seqs, const ModelParams<float>& params,
                        const TagSet& tags) {
  F1Score pooled;
  for (const auto& seq : seqs) {
    const std::vector<int> pred = predict_tags(seq.records, params);
    std::vector<std::string> p, g;
    for (std::size_t i = 1; i < pred.size(); ++i) {
      p.push_back(tags.name_of(pred[i]));
      g.push_back(tags.name_of(seq.tags[i]));
    }
    pooled += entity_f1(p, g);
  }
  return pooled;
}

}  // namespace

F1Score evaluate_tagging(const std::vector<Document>& docs, const ModelParams<float>& params,
                         const TagSet& tags) {
  const ByteTokenizer tok;
  return score_sequences(tokenize_all(docs, tok, &tags), params, tags);
}

FinetuneResult finetune_tagging(const std::vector<Document>& train,
                                const std::vector<Document>& eval, const ModelConfig& model,
                                ModelParams<float> init, const TrainConfig& config,
                                const TagSet& tags, const TrainOptions& options) {
  config.validate();
  model.validate();
  require(!train.empty(), "finetune_tagging: training split is empty");
  require(model.num_tags == tags.size(), "finetune_tagging: num_tags does not match the tag set");
  std::set<std::string> train_ids;
  for (const auto& d : train) {
    require(d.has_tags(), "finetune_tagging: document '" + d.doc_id + "' has no BIO tags");
    train_ids.insert(d.doc_id);
  }
  for (const auto& d : eval)
    require(!train_ids.count(d.doc_id), "finetune_tagging: '" + d.doc_id + "' is in both splits");

  const ByteTokenizer tok;
  const auto train_seqs = tokenize_all(train, tok, &tags);
  const auto eval_seqs = tokenize_all(eval, tok, &tags);

  FinetuneResult result;
  result.params = std::move(init);
  ModelParams<float> grads = ModelParams<float>::zeros(model);
  Inventory<float> pinv, ginv;
  {
    const Inventory<float> all_p = result.params.inventory(), all_g = grads.inventory();
    for (std::size_t k = 0; k < all_p.size(); ++k) {
      if (config.freeze_backbone && all_p[k].name != "tag_weight" && all_p[k].name != "tag_bias")
        continue;
      pinv.push_back(all_p[k]);
      ginv.push_back(all_g[k]);
    }
  }
  AdamState<float> state = AdamState<float>::like(pinv);
  Dropout dropout(model.dropout_rate, config.seed ^ 0x64726f706f7574ULL);
  Rng order_rng(config.seed);
  RunOutput out(options);
  const auto start = Clock::now();

  std::vector<std::size_t> order(train_seqs.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  while (step < config.total_steps) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t b = 0; b < order.size() && step < config.total_steps;
         b += std::size_t(config.batch_docs)) {
      const std::size_t e = std::min(order.size(), b + std::size_t(config.batch_docs));
      Index count = 0;
      for (std::size_t i = b; i < e; ++i)
        for (int t : train_seqs[order[i]].tags) count += t != kIgnoreLabel;
      if (count == 0) continue;

      ++step;
      zero_all(ginv);
      LossSum loss;
      for (std::size_t i = b; i < e; ++i) {
        const auto& seq = train_seqs[order[i]];
        loss += tag_objective(seq.records, seq.tags, result.params, &dropout, &grads,
                              1.0f / float(count), !config.freeze_backbone);
      }
      const double mean = *loss.mean();
      const double lr = scheduled_lr(config, step);
      if (!std::isfinite(mean))
        ++state.rejected;
      else
        adam_step(pinv, ginv, state, config, step);
      const StepRecord rec{step, mean, lr, seconds_since(start)};
      result.curve.push_back(rec);
      out.record(rec);
      if (step % config.checkpoint_every == 0 && step < config.total_steps)
        out.checkpoint(step_name(step), model, result.params, {{"kind", "finetune"}, {"step", step}});
    }
    if (!eval_seqs.empty())
      result.eval_curve.push_back({step, score_sequences(eval_seqs, result.params, tags)});
    if (config.total_steps == 0) break;
  }
  out.checkpoint("checkpoint-final.bin", model, result.params, {{"kind", "finetune"}, {"step", step}});
  result.train_f1 = score_sequences(train_seqs, result.params, tags);
  result.eval_f1 = score_sequences(eval_seqs, result.params, tags);
  result.rejected_steps = state.rejected;
  return result;
}

// ---- gradient check ----

std::string GradcheckReport::to_json() const {
  return json{{"max_rel_err", max_rel_err},
              {"worst_param", worst_param},
              {"checked", checked},
              {"parameter_count", parameter_count},
              {"families", families}}
      .dump();
}

GradcheckReport gradcheck(const ModelConfig& config, std::uint64_t seed,
                          const GradcheckOptions& options) {
  config.validate();
  require(options.sequence_length >= 2, "gradcheck: sequence_length must be at least 2");
  Rng rng(seed);
  ModelParams<double> params = ModelParams<double>::init(config, rng);
  // Non-trivial values for parameters that start at constants.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& t : params.inventory())
    if (t.family == ParamFamily::norm || t.family == ParamFamily::head || t.family == ParamFamily::skip)
      for (Index i = 0; i < t.size(); ++i) t.data[i] += jitter(rng);

  const SpecialTokens sp;
  std::uniform_int_distribution<int> token(sp.count, int(config.vocab_size) - 1), coord(0, kCoordMax),
      tag(0, int(config.num_tags) - 1);
  std::vector<TokenRecord> records = {{sp.cls_id, Poly{}, 0}};
  std::vector<int> mlm_labels = {kIgnoreLabel}, tag_labels = {kIgnoreLabel};
  for (Index i = 1; i < options.sequence_length; ++i) {
    TokenRecord r;
    r.token_id = token(rng);
    for (int& c : r.poly) c = coord(rng);
    records.push_back(r);
    mlm_labels.push_back(i % 2 == 1 ? token(rng) : kIgnoreLabel);
    tag_labels.push_back(tag(rng));
  }
  auto loss = [&] {
    return mlm_objective(records, mlm_labels, params).sum +
           tag_objective(records, tag_labels, params).sum;
  };
  ModelParams<double> grads = ModelParams<double>::zeros(config);
  mlm_objective(records, mlm_labels, params, &grads);
  tag_objective(records, tag_labels, params, nullptr, &grads);

  const Inventory<double> pinv = params.inventory(), ginv = grads.inventory();
  std::vector<std::size_t> chosen;
  Index pool = 0;
  for (std::size_t k = 0; k < pinv.size(); ++k)
    if (options.families.empty() || options.families.count(pinv[k].family)) {
      chosen.push_back(k);
      pool += pinv[k].size();
    }
  require(!chosen.empty(), "gradcheck: no parameter matches the requested families");

  GradcheckReport report;
  report.parameter_count = params.parameter_count();
  std::set<std::string> families;
  for (std::size_t k : chosen) {
    const auto& p = pinv[k];
    const auto& g = ginv[k];
    const Index quota = std::min(
        p.size(), std::max<Index>(2, (options.samples * p.size() + pool - 1) / pool));
    // Entries with a non-zero analytic gradient are preferred so that most
    // comparisons are not 0 against 0.
    std::vector<Index> live, dead;
    for (Index i = 0; i < p.size(); ++i) (g.data[i] != 0.0 ? live : dead).push_back(i);
    std::shuffle(live.begin(), live.end(), rng);
    std::shuffle(dead.begin(), dead.end(), rng);
    const Index from_dead = std::min<Index>(
        Index(dead.size()), std::max<Index>(0, quota - Index(live.size())) + quota / 10);
    std::vector<Index> picks(dead.begin(), dead.begin() + from_dead);
    for (std::size_t i = 0; i < live.size() && Index(picks.size()) < quota; ++i)
      picks.push_back(live[i]);

    for (Index i : picks) {
      double* slot = p.data + i;
      const double saved = *slot;
      *slot = saved + options.step;
      const double up = loss();
      *slot = saved - options.step;
      const double down = loss();
      *slot = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = g.data[i];
      const double err = std::abs(analytic - numeric) /
                         (std::max(std::abs(analytic), std::abs(numeric)) + 1e-8 / 1e-4);
      ++report.checked;
      if (err >= report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
    }
    families.insert(std::string(family_name(p.family)));
  }
  report.families.assign(families.begin(), families.end());
  return report;
}

#define DOCMAMBA_INSTANTIATE(S)                                                                  \
  template struct AdamState<S>;                                                                  \
  template bool adam_step<S>(const Inventory<S>&, const Inventory<S>&, AdamState<S>&,            \
                             const TrainConfig&, int);

DOCMAMBA_INSTANTIATE(float)
DOCMAMBA_INSTANTIATE(double)

}  // namespace docmamba
