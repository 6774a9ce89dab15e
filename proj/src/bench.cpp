#include "docmamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <new>
#include <sstream>

#include "json.hpp"

namespace docmamba {

using nlohmann::json;

// ---- attention baseline ----

template <typename Scalar>
AttentionParams<Scalar> AttentionParams<Scalar>::init(Index hidden, Index heads, Rng& rng) {
  require(heads >= 1 && hidden % heads == 0, "AttentionParams: hidden must divide into heads");
  AttentionParams p;
  p.heads = heads;
  for (Matrix<Scalar>* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) {
    w->resize(hidden, hidden);
    fill_xavier(*w, rng);
  }
  p.norm_weight = Vector<Scalar>::Ones(hidden);
  return p;
}

template <typename Scalar>
Matrix<Scalar> attention_baseline_forward(const Matrix<Scalar>& s, const AttentionParams<Scalar>& p,
                                          std::vector<Matrix<Scalar>>* probs) {
  const Index hidden = p.hidden(), len = s.rows(), dh = hidden / p.heads;
  require(s.cols() == hidden, "attention_baseline_forward: width != hidden");
  const Matrix<Scalar> q = s * p.w_q.transpose();
  const Matrix<Scalar> k = s * p.w_k.transpose();
  const Matrix<Scalar> v = s * p.w_v.transpose();
  const Scalar scale = Scalar(1.0 / std::sqrt(double(dh)));

  std::vector<Matrix<Scalar>> weights(std::size_t(p.heads));
  Matrix<Scalar> mixed(len, hidden);
  for (Index h = 0; h < p.heads; ++h) {
    Matrix<Scalar>& a = weights[std::size_t(h)];
    a.noalias() = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    a.colwise() -= a.rowwise().maxCoeff();
    a = a.array().exp();
    a.array().colwise() /= a.rowwise().sum().array();
    mixed.middleCols(h * dh, dh).noalias() = a * v.middleCols(h * dh, dh);
  }
  if (probs) *probs = std::move(weights);
  return mixed * p.w_o.transpose();
}

template <typename Scalar>
Matrix<Scalar> attention_encode(const std::vector<TokenRecord>& records,
                                const ModelParams<Scalar>& embeddings,
                                const std::vector<AttentionParams<Scalar>>& layers) {
  require(!records.empty(), "attention_encode: empty sequence");
  const Index hidden = embeddings.word_emb.cols();
  Matrix<Scalar> s(Index(records.size()), hidden);
  for (std::size_t i = 0; i < records.size(); ++i)
    s.row(Index(i)) = embed_tokens(records[i], embeddings).transpose();
  const Vector<Scalar> no_bias;
  for (const auto& layer : layers)
    s += attention_baseline_forward(
        normalize_rows(s, layer.norm_weight, no_bias, NormKind::rms), layer);
  return normalize_rows(s, embeddings.final_norm_weight, embeddings.final_norm_bias,
                        embeddings.final_norm_bias.size() > 0 ? NormKind::layer : NormKind::rms);
}

template <typename Scalar>
StreamingEncoder<Scalar>::StreamingEncoder(const ModelParams<Scalar>& params) : params_(&params) {
  for (const auto& block : params.blocks) layers_.emplace_back(block);
}

template <typename Scalar>
Vector<Scalar> StreamingEncoder<Scalar>::step(const TokenRecord& record) {
  Vector<Scalar> s = embed_tokens(record, *params_);
  for (auto& layer : layers_) s = layer.step(s);
  const Matrix<Scalar> row = s.transpose();
  const NormKind kind = params_->final_norm_bias.size() > 0 ? NormKind::layer : NormKind::rms;
  return normalize_rows(row, params_->final_norm_weight, params_->final_norm_bias, kind).transpose();
}

// ---- scaling ----

double fit_power_law(const std::vector<std::pair<double, double>>& points) {
  require(points.size() >= 2, "fit_power_law: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [x, y] : points) {
    if (!(x > 0) || !(y > 0)) throw std::domain_error("fit_power_law: values must be positive");
    const double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = double(points.size());
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::domain_error("fit_power_law: x values are all equal");
  return (n * sxy - sx * sy) / denom;
}

std::string bench_model_name(BenchModel model) {
  switch (model) {
    case BenchModel::docmamba: return "docmamba";
    case BenchModel::attention_baseline: return "attention_baseline";
    case BenchModel::docmamba_streaming: return "docmamba_streaming";
  }
  return "unknown";
}

std::vector<TokenRecord> random_sequence(Index length, Index vocab_size, Rng& rng) {
  const SpecialTokens sp;
  std::uniform_int_distribution<int> token(sp.count, int(vocab_size) - 1), coord(0, kCoordMax);
  std::vector<TokenRecord> out;
  out.reserve(std::size_t(length));
  out.push_back({sp.cls_id, Poly{}, 0});
  for (Index i = 1; i < length; ++i) {
    TokenRecord r;
    r.token_id = token(rng);
    for (int& c : r.poly) c = coord(rng);
    r.segment_id = int(i / 64);
    out.push_back(r);
  }
  return out;
}

namespace {

// Byte estimate of the largest simultaneously live buffers, used when the
// allocator is not instrumented.
std::int64_t analytic_peak(BenchModel model, const ModelConfig& c, Index heads, Index len) {
  const std::int64_t f = sizeof(float), L = len, H = c.hidden, d = c.d_inner, N = c.n_state;
  switch (model) {
    case BenchModel::docmamba: return f * L * (4 * H + 8 * d + 3 * N + 2 * d * N / 16);
    case BenchModel::attention_baseline: return f * (heads * L * L + 6 * L * H);
    case BenchModel::docmamba_streaming: return f * c.layers * (c.conv_width * d + d * N + 4 * d + 2 * H);
  }
  return 0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string ScalingReport::to_json() const {
  json samples_json = json::array();
  for (const auto& s : samples)
    samples_json.push_back(
        {{"length", s.length}, {"wall_time_s", s.wall_time_s}, {"peak_bytes", s.peak_bytes}});
  return json{{"model_tag", model_tag},
              {"samples", samples_json},
              {"fitted_time_exponent", fitted_time_exponent},
              {"fitted_mem_exponent", fitted_mem_exponent},
              {"memory_method", memory_method},
              {"truncated_lengths", truncated_lengths},
              {"reps", reps},
              {"threads", 1}}
      .dump(2);
}

ScalingReport bench_scaling(BenchModel model, const std::vector<Index>& lengths,
                            const BenchOptions& options) {
  require(lengths.size() >= 4, "bench_scaling: need at least four lengths");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    require(lengths[i] >= 64, "bench_scaling: lengths must be >= 64");
    require(i == 0 || lengths[i] > lengths[i - 1], "bench_scaling: lengths must increase strictly");
  }
  require(options.reps >= 1, "bench_scaling: reps must be >= 1");
  const ModelConfig& config = options.model;
  config.validate();

  Rng rng(options.seed);
  const ModelParams<float> params = ModelParams<float>::init(config, rng);
  std::vector<AttentionParams<float>> attention;
  if (model == BenchModel::attention_baseline)
    for (Index l = 0; l < config.layers; ++l)
      attention.push_back(AttentionParams<float>::init(config.hidden, options.attention_heads, rng));

  ScalingReport report;
  report.model_tag = bench_model_name(model) + ":hidden=" + std::to_string(config.hidden) +
                     ",layers=" + std::to_string(config.layers);
  report.reps = options.reps;
  const bool metered = alloc_meter::active();
  report.memory_method = metered ? "allocator" : "analytic";

  volatile float sink = 0.0f;
  for (Index len : lengths) {
    const std::vector<TokenRecord> records = random_sequence(len, config.vocab_size, rng);
    auto run = [&] {
      switch (model) {
        case BenchModel::docmamba: sink = sink + encode(records, params)(0, 0); break;
        case BenchModel::attention_baseline:
          sink = sink + attention_encode(records, params, attention)(0, 0);
          break;
        case BenchModel::docmamba_streaming: {
          StreamingEncoder<float> stream(params);
          for (const auto& r : records) sink = sink + stream.step(r)(0);
          break;
        }
      }
    };
    try {
      const std::int64_t base = alloc_meter::live_bytes();
      alloc_meter::reset_peak();
      run();  // warm-up, also the memory probe
      const std::int64_t peak = metered ? alloc_meter::peak_bytes() - base
                                        : analytic_peak(model, config, options.attention_heads, len);
      std::vector<double> times;
      for (int r = 0; r < options.reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        run();
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      report.samples.push_back({len, median(times), std::max<std::int64_t>(peak, 1)});
    } catch (const std::bad_alloc&) {
      report.truncated_lengths.push_back(len);
      break;
    }
  }

  if (report.samples.size() >= 2) {
    std::vector<std::pair<double, double>> t, m;
    for (const auto& s : report.samples) {
      t.push_back({double(s.length), std::max(s.wall_time_s, 1e-9)});
      m.push_back({double(s.length), double(s.peak_bytes)});
    }
    report.fitted_time_exponent = fit_power_law(t);
    report.fitted_mem_exponent = fit_power_law(m);
  }
  return report;
}

std::string render_scaling_svg(const std::vector<ScalingReport>& reports) {
  constexpr int panel_w = 420, panel_h = 320, pad = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << 2 * panel_w
      << "\" height=\"" << panel_h + 40 << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int panel = 0; panel < 2; ++panel) {
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    auto value = [&](const ScalingSample& s) {
      return panel == 0 ? std::max(s.wall_time_s, 1e-9) : double(std::max<std::int64_t>(s.peak_bytes, 1));
    };
    for (const auto& r : reports)
      for (const auto& s : r.samples) {
        x_lo = std::min(x_lo, std::log10(double(s.length)));
        x_hi = std::max(x_hi, std::log10(double(s.length)));
        y_lo = std::min(y_lo, std::log10(value(s)));
        y_hi = std::max(y_hi, std::log10(value(s)));
      }
    if (x_hi <= x_lo) x_hi = x_lo + 1;
    if (y_hi <= y_lo) y_hi = y_lo + 1;
    const int ox = panel * panel_w;
    auto px = [&](double lx) { return ox + pad + (lx - x_lo) / (x_hi - x_lo) * (panel_w - 2 * pad); };
    auto py = [&](double ly) { return panel_h - pad + 20 - (ly - y_lo) / (y_hi - y_lo) * (panel_h - 2 * pad); };

    svg << "<g>\n<text x=\"" << ox + panel_w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">"
        << (panel == 0 ? "wall time (s)" : "peak heap (bytes)") << " vs length, log-log</text>\n"
        << "<rect x=\"" << ox + pad << "\" y=\"" << pad - 30 + 20 << "\" width=\"" << panel_w - 2 * pad
        << "\" height=\"" << panel_h - 2 * pad + 30 << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (std::size_t r = 0; r < reports.size(); ++r) {
      svg << "<polyline fill=\"none\" stroke=\"" << colors[r % 5] << "\" stroke-width=\"2\" points=\"";
      for (const auto& s : reports[r].samples)
        svg << px(std::log10(double(s.length))) << "," << py(std::log10(value(s))) << " ";
      svg << "\"/>\n";
      const double slope =
          panel == 0 ? reports[r].fitted_time_exponent : reports[r].fitted_mem_exponent;
      svg << "<text x=\"" << ox + pad + 8 << "\" y=\"" << pad + 8 + 16 * int(r)
          << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << colors[r % 5] << "\">"
          << reports[r].model_tag << " slope " << std::fixed << std::setprecision(2) << slope
          << std::defaultfloat << std::setprecision(6) << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

#define DOCMAMBA_INSTANTIATE(S)                                                                  \
  template struct AttentionParams<S>;                                                            \
  template Matrix<S> attention_baseline_forward<S>(const Matrix<S>&, const AttentionParams<S>&,  \
                                                   std::vector<Matrix<S>>*);                     \
  template Matrix<S> attention_encode<S>(const std::vector<TokenRecord>&, const ModelParams<S>&, \
                                         const std::vector<AttentionParams<S>>&);                \
  template class StreamingEncoder<S>;

DOCMAMBA_INSTANTIATE(float)
DOCMAMBA_INSTANTIATE(double)

}  // namespace docmamba
