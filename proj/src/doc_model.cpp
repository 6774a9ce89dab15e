#include "docmamba/doc_model.hpp"

#include <algorithm>
#include <cmath>

namespace docmamba {

ModelConfig ModelConfig::tiny(Index vocab_size) {
  ModelConfig c;
  c.hidden = 32;
  c.layers = 2;
  c.d_inner = 64;
  c.n_state = 8;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::gradcheck_tiny() {
  ModelConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.d_inner = 32;
  c.n_state = 4;
  c.vocab_size = 37;
  c.num_tags = 3;
  return c;
}

BlockDims ModelConfig::block_dims() const {
  return {hidden, d_inner, n_state, resolved_dt_rank(), conv_width, norm};
}

void ModelConfig::validate() const {
  require(hidden >= 8 && hidden % 8 == 0, "ModelConfig: hidden must be a positive multiple of 8");
  require(num_coord_types == kPolyCoords, "ModelConfig: num_coord_types must be 8");
  require(coord_bins == kCoordMax + 1, "ModelConfig: coord_bins must be 1001");
  require(layers >= 0, "ModelConfig: layers must be >= 0");
  require(vocab_size >= 1, "ModelConfig: vocab_size must be >= 1");
  require(num_tags >= 1, "ModelConfig: num_tags must be >= 1");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "ModelConfig: dropout_rate must be in [0, 1)");
  block_dims().validate();
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  const Index h = config.hidden;
  p.word_emb = Matrix<Scalar>::Zero(config.vocab_size, h);
  p.coord_value = Matrix<Scalar>::Zero(config.coord_bins, config.sub_width());
  p.coord_type = Matrix<Scalar>::Zero(config.num_coord_types, config.sub_width());
  for (Index i = 0; i < config.layers; ++i)
    p.blocks.push_back(BlockParams<Scalar>::zeros(config.block_dims()));
  p.final_norm_weight = Vector<Scalar>::Zero(h);
  p.final_norm_bias = Vector<Scalar>::Zero(config.norm == NormKind::layer ? h : 0);
  p.mlm_bias = Vector<Scalar>::Zero(config.vocab_size);
  p.tag_weight = Matrix<Scalar>::Zero(config.num_tags, h);
  p.tag_bias = Vector<Scalar>::Zero(config.num_tags);
  return p;
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::init(const ModelConfig& config, Rng& rng) {
  ModelParams p = zeros(config);
  fill_normal(p.word_emb, Scalar(0.02), rng);
  fill_normal(p.coord_value, Scalar(0.02), rng);
  fill_normal(p.coord_type, Scalar(0.02), rng);
  for (auto& block : p.blocks) block = BlockParams<Scalar>::init(config.block_dims(), rng);
  p.final_norm_weight.setOnes();
  fill_xavier(p.tag_weight, rng);
  return p;
}

template <typename Scalar>
Inventory<Scalar> ModelParams<Scalar>::inventory() {
  Inventory<Scalar> out;
  add_tensor(out, "word_emb", ParamFamily::table, word_emb);
  add_tensor(out, "coord_value", ParamFamily::table, coord_value);
  add_tensor(out, "coord_type", ParamFamily::table, coord_type);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].append_to(out, "blocks." + std::to_string(i) + ".");
  add_tensor(out, "final_norm.weight", ParamFamily::norm, final_norm_weight);
  if (final_norm_bias.size() > 0)
    add_tensor(out, "final_norm.bias", ParamFamily::norm, final_norm_bias);
  add_tensor(out, "mlm_bias", ParamFamily::head, mlm_bias);
  add_tensor(out, "tag_weight", ParamFamily::head, tag_weight);
  add_tensor(out, "tag_bias", ParamFamily::head, tag_bias);
  return out;
}

template <typename Scalar>
Index ModelParams<Scalar>::parameter_count() {
  Index n = 0;
  for (const auto& t : inventory()) n += t.size();
  return n;
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out;
  out.word_emb = word_emb.template cast<Other>();
  out.coord_value = coord_value.template cast<Other>();
  out.coord_type = coord_type.template cast<Other>();
  for (const auto& b : blocks) {
    BlockParams<Other> o;
    o.norm_weight = b.norm_weight.template cast<Other>();
    o.norm_bias = b.norm_bias.template cast<Other>();
    o.in_proj = b.in_proj.template cast<Other>();
    o.conv_fwd = b.conv_fwd.template cast<Other>();
    o.conv_bwd = b.conv_bwd.template cast<Other>();
    for (int dir = 0; dir < 2; ++dir) {
      const ScanParams<Scalar>& s = dir == 0 ? b.scan_fwd : b.scan_bwd;
      ScanParams<Other>& t = dir == 0 ? o.scan_fwd : o.scan_bwd;
      t.a_log = s.a_log.template cast<Other>();
      t.d_skip = s.d_skip.template cast<Other>();
      t.b_proj = s.b_proj.template cast<Other>();
      t.c_proj = s.c_proj.template cast<Other>();
      t.dt_down = s.dt_down.template cast<Other>();
      t.dt_up = s.dt_up.template cast<Other>();
      t.dt_bias = s.dt_bias.template cast<Other>();
    }
    o.out_proj = b.out_proj.template cast<Other>();
    out.blocks.push_back(std::move(o));
  }
  out.final_norm_weight = final_norm_weight.template cast<Other>();
  out.final_norm_bias = final_norm_bias.template cast<Other>();
  out.mlm_bias = mlm_bias.template cast<Other>();
  out.tag_weight = tag_weight.template cast<Other>();
  out.tag_bias = tag_bias.template cast<Other>();
  return out;
}

Poly normalize_box(const Quad& quad, double page_w, double page_h) {
  if (!(page_w > 0.0) || !(page_h > 0.0) || !std::isfinite(page_w) || !std::isfinite(page_h))
    throw std::domain_error("normalize_box: page dimensions must be positive");
  Poly poly{};
  for (int i = 0; i < kPolyCoords; ++i) {
    const double extent = (i % 2 == 0) ? page_w : page_h;
    if (!std::isfinite(quad[i])) throw std::domain_error("normalize_box: non-finite coordinate");
    const double scaled = std::floor(quad[i] * double(kCoordMax) / extent + 0.5);
    poly[i] = int(std::clamp(scaled, 0.0, double(kCoordMax)));
  }
  return poly;
}

namespace {

template <typename Scalar>
void check_poly(const Poly& poly, const ModelParams<Scalar>& params) {
  for (int v : poly)
    require(v >= 0 && v < params.coord_value.rows(), "embed_2d_position: coordinate out of range");
}

template <typename Scalar>
Matrix<Scalar> embed_sequence(const std::vector<TokenRecord>& records,
                              const ModelParams<Scalar>& params) {
  const Index hidden = params.word_emb.cols();
  Matrix<Scalar> s(Index(records.size()), hidden);
  for (std::size_t i = 0; i < records.size(); ++i)
    s.row(Index(i)) = embed_tokens(records[i], params).transpose();
  return s;
}

}  // namespace

template <typename Scalar>
Vector<Scalar> embed_2d_position(const Poly& poly, const ModelParams<Scalar>& params) {
  check_poly(poly, params);
  const Index w = params.coord_value.cols();
  Vector<Scalar> out(w * kPolyCoords);
  for (int t = 0; t < kPolyCoords; ++t)
    out.segment(t * w, w) = (params.coord_value.row(poly[t]) + params.coord_type.row(t)).transpose();
  return out;
}

template <typename Scalar>
Vector<Scalar> embed_tokens(const TokenRecord& record, const ModelParams<Scalar>& params) {
  require(record.token_id >= 0 && record.token_id < params.word_emb.rows(),
          "embed_tokens: token_id out of range");
  return params.word_emb.row(record.token_id).transpose() + embed_2d_position(record.poly, params);
}

template <typename Scalar>
Matrix<Scalar> encode(const std::vector<TokenRecord>& records, const ModelParams<Scalar>& params,
                      EncodeTape<Scalar>* tape) {
  require(!records.empty(), "encode: empty sequence");
  Matrix<Scalar> s = embed_sequence(records, params);
  if (tape) tape->blocks.assign(params.blocks.size(), BlockTape<Scalar>{});
  for (std::size_t i = 0; i < params.blocks.size(); ++i)
    s = bimamba_block(s, params.blocks[i], tape ? &tape->blocks[i] : nullptr);
  const NormKind kind = params.final_norm_bias.size() > 0 ? NormKind::layer : NormKind::rms;
  return normalize_rows(s, params.final_norm_weight, params.final_norm_bias, kind,
                        tape ? &tape->final_norm : nullptr);
}

template <typename Scalar>
void encode_backward(const std::vector<TokenRecord>& records, const ModelParams<Scalar>& params,
                     const EncodeTape<Scalar>& tape, const Matrix<Scalar>& dhidden,
                     ModelParams<Scalar>& grads) {
  const NormKind kind = params.final_norm_bias.size() > 0 ? NormKind::layer : NormKind::rms;
  Matrix<Scalar> ds = normalize_rows_backward(tape.final_norm, params.final_norm_weight, kind,
                                              dhidden, grads.final_norm_weight,
                                              grads.final_norm_bias);
  for (std::size_t i = params.blocks.size(); i-- > 0;)
    ds = bimamba_block_backward(tape.blocks[i], params.blocks[i], ds, grads.blocks[i]);

  const Index w = params.coord_value.cols();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = ds.row(Index(i));
    grads.word_emb.row(records[i].token_id) += row;
    for (int t = 0; t < kPolyCoords; ++t) {
      grads.coord_value.row(records[i].poly[t]) += row.segment(t * w, w);
      grads.coord_type.row(t) += row.segment(t * w, w);
    }
  }
}

template <typename Scalar>
Matrix<Scalar> mlm_logits(const Matrix<Scalar>& hidden, const ModelParams<Scalar>& params) {
  Matrix<Scalar> logits = hidden * params.word_emb.transpose();
  logits.rowwise() += params.mlm_bias.transpose();
  return logits;
}

template <typename Scalar>
LossSum cross_entropy(const Matrix<Scalar>& logits, const std::vector<int>& labels,
                      Matrix<Scalar>* dlogits, Scalar weight) {
  require(Index(labels.size()) == logits.rows(), "cross_entropy: label count != rows");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  LossSum loss;
  for (Index t = 0; t < logits.rows(); ++t) {
    const int label = labels[std::size_t(t)];
    if (label == kIgnoreLabel) continue;
    require(label >= 0 && label < logits.cols(), "cross_entropy: label out of range");
    const Scalar peak = logits.row(t).maxCoeff();
    const auto shifted = (logits.row(t).array() - peak).exp().eval();
    const Scalar total = shifted.sum();
    loss.sum += double(std::log(total) + peak - logits(t, label));
    ++loss.count;
    if (dlogits) {
      dlogits->row(t) = (shifted / total * weight).matrix();
      (*dlogits)(t, label) -= weight;
    }
  }
  return loss;
}

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  require(rate >= 0.0 && rate < 1.0, "Dropout: rate must be in [0, 1)");
}

template <typename Scalar>
Matrix<Scalar> Dropout::mask(Index rows, Index cols) {
  Matrix<Scalar> m = Matrix<Scalar>::Ones(rows, cols);
  if (rate_ == 0.0) return m;
  std::bernoulli_distribution keep(1.0 - rate_);
  const Scalar scale = Scalar(1.0 / (1.0 - rate_));
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = keep(rng_) ? scale : Scalar(0);
  return m;
}

template <typename Scalar>
Matrix<Scalar> tag_logits(const Matrix<Scalar>& hidden, const ModelParams<Scalar>& params,
                          Dropout* dropout, Matrix<Scalar>* applied_mask) {
  Matrix<Scalar> logits;
  if (dropout) {
    const Matrix<Scalar> m = dropout->mask<Scalar>(hidden.rows(), hidden.cols());
    logits = hidden.cwiseProduct(m) * params.tag_weight.transpose();
    if (applied_mask) *applied_mask = m;
  } else {
    logits = hidden * params.tag_weight.transpose();
    if (applied_mask) *applied_mask = Matrix<Scalar>::Ones(hidden.rows(), hidden.cols());
  }
  logits.rowwise() += params.tag_bias.transpose();
  return logits;
}

template <typename Scalar>
LossSum mlm_objective(const std::vector<TokenRecord>& records, const std::vector<int>& labels,
                      const ModelParams<Scalar>& params, ModelParams<Scalar>* grads,
                      Scalar weight) {
  require(labels.size() == records.size(), "mlm_objective: label count != sequence length");
  EncodeTape<Scalar> tape;
  const Matrix<Scalar> hidden = encode(records, params, grads ? &tape : nullptr);
  const Matrix<Scalar> logits = mlm_logits(hidden, params);
  Matrix<Scalar> dlogits;
  const LossSum loss = cross_entropy(logits, labels, grads ? &dlogits : nullptr, weight);
  if (grads && loss.count > 0) {
    grads->word_emb.noalias() += dlogits.transpose() * hidden;
    grads->mlm_bias += dlogits.colwise().sum().transpose();
    const Matrix<Scalar> dhidden = dlogits * params.word_emb;
    encode_backward(records, params, tape, dhidden, *grads);
  }
  return loss;
}

template <typename Scalar>
LossSum tag_objective(const std::vector<TokenRecord>& records, const std::vector<int>& labels,
                      const ModelParams<Scalar>& params, Dropout* dropout,
                      ModelParams<Scalar>* grads, Scalar weight, bool backbone_grads) {
  require(labels.size() == records.size(), "tag_objective: label count != sequence length");
  EncodeTape<Scalar> tape;
  const bool want_tape = grads && backbone_grads;
  const Matrix<Scalar> hidden = encode(records, params, want_tape ? &tape : nullptr);
  Matrix<Scalar> mask;
  const Matrix<Scalar> logits = tag_logits(hidden, params, dropout, &mask);
  Matrix<Scalar> dlogits;
  const LossSum loss = cross_entropy(logits, labels, grads ? &dlogits : nullptr, weight);
  if (grads && loss.count > 0) {
    const Matrix<Scalar> dropped = hidden.cwiseProduct(mask);
    grads->tag_weight.noalias() += dlogits.transpose() * dropped;
    grads->tag_bias += dlogits.colwise().sum().transpose();
    if (backbone_grads) {
      const Matrix<Scalar> dhidden = (dlogits * params.tag_weight).cwiseProduct(mask);
      encode_backward(records, params, tape, dhidden, *grads);
    }
  }
  return loss;
}

template <typename Scalar>
std::vector<int> predict_tags(const std::vector<TokenRecord>& records,
                              const ModelParams<Scalar>& params) {
  const Matrix<Scalar> logits = tag_logits(encode(records, params), params);
  std::vector<int> out(std::size_t(logits.rows()));
  for (Index t = 0; t < logits.rows(); ++t) {
    Index best;
    logits.row(t).maxCoeff(&best);
    out[std::size_t(t)] = int(best);
  }
  return out;
}

#define DOCMAMBA_INSTANTIATE(S)                                                                   \
  template struct ModelParams<S>;                                                                 \
  template Vector<S> embed_2d_position<S>(const Poly&, const ModelParams<S>&);                    \
  template Vector<S> embed_tokens<S>(const TokenRecord&, const ModelParams<S>&);                  \
  template Matrix<S> encode<S>(const std::vector<TokenRecord>&, const ModelParams<S>&,            \
                               EncodeTape<S>*);                                                   \
  template void encode_backward<S>(const std::vector<TokenRecord>&, const ModelParams<S>&,        \
                                   const EncodeTape<S>&, const Matrix<S>&, ModelParams<S>&);      \
  template Matrix<S> mlm_logits<S>(const Matrix<S>&, const ModelParams<S>&);                      \
  template LossSum cross_entropy<S>(const Matrix<S>&, const std::vector<int>&, Matrix<S>*, S);    \
  template Matrix<S> Dropout::mask<S>(Index, Index);                                              \
  template Matrix<S> tag_logits<S>(const Matrix<S>&, const ModelParams<S>&, Dropout*,             \
                                   Matrix<S>*);                                                   \
  template LossSum mlm_objective<S>(const std::vector<TokenRecord>&, const std::vector<int>&,     \
                                    const ModelParams<S>&, ModelParams<S>*, S);                   \
  template LossSum tag_objective<S>(const std::vector<TokenRecord>&, const std::vector<int>&,     \
                                    const ModelParams<S>&, Dropout*, ModelParams<S>*, S, bool);   \
  template std::vector<int> predict_tags<S>(const std::vector<TokenRecord>&, const ModelParams<S>&);

DOCMAMBA_INSTANTIATE(float)
DOCMAMBA_INSTANTIATE(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace docmamba
