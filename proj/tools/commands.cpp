#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cli.hpp"
#include "docmamba/bench.hpp"
#include "docmamba/datapipe.hpp"
#include "docmamba/training.hpp"

namespace docmamba::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradcheckTolerance = 1e-4;

// Runs `f`, reporting any invalid config value as a usage error.
template <typename F>
auto resolve(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const json::exception& e) {
    throw UsageError(what + ": " + e.what(), what);
  } catch (const ContractError& e) {
    throw UsageError(what + ": " + e.what(), what);
  } catch (const ParseError& e) {
    throw UsageError(what + ": " + e.what(), what);
  }
}

std::string required_path(const json& config, const std::string& key) {
  const std::string path = resolve(key, [&] { return config.at(key).get<std::string>(); });
  if (path.empty()) throw UsageError("missing required setting: " + key, key);
  return path;
}

ModelConfig model_of(const json& config) {
  return resolve("model", [&] { return config_from_json(config.at("model").dump()); });
}

TrainConfig train_of(const json& config) {
  return resolve("train", [&] { return TrainConfig::from_json(config.at("train").dump()); });
}

TagSet tags_of(const json& config) {
  return resolve("entity_types", [&] {
    return TagSet(config.at("entity_types").get<std::vector<std::string>>());
  });
}

ScanMode scan_of(const std::string& name) {
  if (name == "sfbs") return ScanMode::sfbs;
  if (name == "wfbs") return ScanMode::wfbs;
  if (name == "input") return ScanMode::input;
  throw UsageError("scan must be one of sfbs, wfbs, input: " + name, "scan");
}

void write_text(const std::string& path, const std::string& text) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<Document> load_corpus(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("corpus directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("corpus directory holds no .json documents: " + dir);
  std::vector<Document> docs;
  for (const auto& f : files) docs.push_back(load_document_file(f.string()));
  return docs;
}

json f1_json(const F1Score& s) {
  return {{"precision", s.precision}, {"recall", s.recall},   {"f1", s.f1},
          {"predicted", s.predicted}, {"gold", s.gold},       {"correct", s.correct}};
}

Checkpoint<float> load_tagger(const json& config, const TagSet& tags) {
  Checkpoint<float> ckpt = load_checkpoint<float>(required_path(config, "checkpoint"));
  if (ckpt.config.num_tags != tags.size())
    throw UsageError("checkpoint has " + std::to_string(ckpt.config.num_tags) +
                         " tags but entity_types gives " + std::to_string(tags.size()),
                     "entity_types");
  return ckpt;
}

int cmd_synth(const json& config, std::ostream& out) {
  const std::string dir = required_path(config, "out_dir");
  const auto [seed, n_docs, grammar] = resolve("grammar", [&] {
    const json& g = config.at("grammar");
    GrammarConfig gc;
    gc.min_tokens = g.at("min_tokens").get<int>();
    gc.max_tokens = g.at("max_tokens").get<int>();
    gc.min_segments = g.at("min_segments").get<int>();
    gc.max_segments = g.at("max_segments").get<int>();
    gc.entity_fraction = g.at("entity_fraction").get<double>();
    gc.two_column_prob = g.at("two_column_prob").get<double>();
    gc.page_w = g.at("page_w").get<double>();
    gc.page_h = g.at("page_h").get<double>();
    gc.validate();
    const int n = config.at("n_docs").get<int>();
    if (n < 1) throw ContractError("n_docs must be at least 1");
    return std::tuple{config.at("seed").get<std::uint64_t>(), n, gc};
  });

  const std::vector<Document> docs = synth_corpus(seed, n_docs, grammar);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::ostringstream name;
    name << "doc-" << std::setw(5) << std::setfill('0') << i << ".json";
    write_text((fs::path(dir) / name.str()).string(), save_document(docs[i]) + "\n");
  }
  out << json{{"command", "synth"}, {"out_dir", dir}, {"documents", docs.size()}}.dump() << '\n';
  return kOk;
}

int cmd_scan_order(const json& config, std::ostream& out) {
  const std::string input = required_path(config, "input");
  const auto [output, svg, scan] = resolve("scan-order", [&] {
    return std::tuple{config.at("output").get<std::string>(), config.at("svg").get<std::string>(),
                      config.at("scan").get<std::string>()};
  });
  const ScanMode mode = scan_of(scan);

  const Document doc = load_document_file(input);
  const std::vector<LayoutToken> tokens = layout_tokens(doc);
  OrderedSequence ordering;
  if (mode == ScanMode::sfbs) {
    ordering = sfbs_order(tokens);
  } else if (mode == ScanMode::wfbs) {
    ordering = wfbs_order(tokens);
  } else {
    std::vector<Index> identity(tokens.size());
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = Index(i);
    ordering = OrderedSequence::from_order(identity);
  }

  const std::string text =
      json{{"doc_id", doc.doc_id}, {"scan", scan}, {"order", ordering.order}, {"inverse", ordering.inverse}}
          .dump() + "\n";
  if (output.empty())
    out << text;
  else
    write_text(output, text);
  if (!svg.empty()) write_text(svg, render_scan_svg(tokens, ordering));
  return kOk;
}

int cmd_pretrain(const json& config, std::ostream& out) {
  const std::string corpus_dir = required_path(config, "corpus");
  const std::string out_dir = required_path(config, "out_dir");
  const ModelConfig model = model_of(config);
  const TrainConfig train = train_of(config);

  const std::vector<Document> corpus = load_corpus(corpus_dir);
  TrainOptions options;
  options.output_dir = out_dir;
  const TrainResult r = train_mlm(corpus, model, train, options);

  json summary{{"command", "pretrain"},
               {"documents", corpus.size()},
               {"steps", r.curve.size()},
               {"rejected_steps", r.rejected_steps},
               {"sequences", r.buckets.sequences},
               {"skipped", r.buckets.skipped},
               {"checkpoint", (fs::path(out_dir) / "checkpoint-final.bin").string()}};
  if (!r.curve.empty()) {
    summary["first_loss"] = r.curve.front().loss;
    summary["final_loss"] = r.curve.back().loss;
  }
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_finetune(const json& config, std::ostream& out) {
  const std::string corpus_dir = required_path(config, "corpus");
  const std::string out_dir = required_path(config, "out_dir");
  const TagSet tags = tags_of(config);
  const TrainConfig train = train_of(config);
  const auto [eval_dir, eval_fraction, init_path] = resolve("finetune", [&] {
    return std::tuple{config.at("eval_corpus").get<std::string>(),
                      config.at("eval_fraction").get<double>(), config.at("init").get<std::string>()};
  });
  if (eval_dir.empty() && !(eval_fraction >= 0.0 && eval_fraction < 1.0))
    throw UsageError("eval_fraction must lie in [0, 1)", "eval_fraction");

  const std::vector<Document> docs = load_corpus(corpus_dir);
  std::vector<Document> train_docs, eval_docs;
  if (eval_dir.empty()) {
    std::tie(train_docs, eval_docs) = split_corpus(docs, eval_fraction, train.seed);
  } else {
    train_docs = docs;
    eval_docs = load_corpus(eval_dir);
  }

  ModelConfig model;
  ModelParams<float> init;
  Rng rng(train.seed);
  if (init_path.empty()) {
    model = model_of(config);
    model.num_tags = tags.size();
    init = ModelParams<float>::init(model, rng);
  } else {
    Checkpoint<float> ckpt = load_checkpoint<float>(init_path);
    model = ckpt.config;
    init = std::move(ckpt.params);
    if (model.num_tags != tags.size()) {
      // Fresh head sized for the requested tag set.
      model.num_tags = tags.size();
      const ModelParams<float> fresh = ModelParams<float>::init(model, rng);
      init.tag_weight = fresh.tag_weight;
      init.tag_bias = fresh.tag_bias;
    }
  }

  TrainOptions options;
  options.output_dir = out_dir;
  const FinetuneResult r = finetune_tagging(train_docs, eval_docs, model, init, train, tags, options);

  json curve = json::array();
  for (const auto& p : r.eval_curve) curve.push_back({{"step", p.step}, {"f1", p.f1.f1}});
  write_text((fs::path(out_dir) / "eval_curve.json").string(), curve.dump() + "\n");
  out << json{{"command", "finetune"},
              {"train_documents", train_docs.size()},
              {"eval_documents", eval_docs.size()},
              {"steps", r.curve.size()},
              {"rejected_steps", r.rejected_steps},
              {"train_f1", f1_json(r.train_f1)},
              {"eval_f1", f1_json(r.eval_f1)},
              {"checkpoint", (fs::path(out_dir) / "checkpoint-final.bin").string()}}
             .dump()
      << '\n';
  return kOk;
}

int cmd_eval(const json& config, std::ostream& out) {
  const TagSet tags = tags_of(config);
  const std::string corpus_dir = required_path(config, "corpus");
  const Checkpoint<float> ckpt = load_tagger(config, tags);
  const std::vector<Document> docs = load_corpus(corpus_dir);
  json result = f1_json(evaluate_tagging(docs, ckpt.params, tags));
  result["documents"] = docs.size();
  out << result.dump() << '\n';
  return kOk;
}

int cmd_infer(const json& config, std::ostream& out) {
  const TagSet tags = tags_of(config);
  const std::string input = required_path(config, "input");
  const std::string output = resolve("output", [&] { return config.at("output").get<std::string>(); });
  const Checkpoint<float> ckpt = load_tagger(config, tags);

  Document doc = load_document_file(input);
  const ByteTokenizer tokenizer;
  const TokenizedDoc seq = tokenize_document(doc, tokenizer);
  const std::vector<int> predicted = predict_tags(seq.records, ckpt.params);

  // A word takes the tag predicted for its first token.
  std::vector<bool> seen(doc.words.size(), false);
  for (std::size_t i = 1; i < predicted.size(); ++i) {
    const auto w = std::size_t(seq.word_index[i]);
    if (seen[w]) continue;
    seen[w] = true;
    doc.words[w].entity_tag = tags.name_of(predicted[i]);
  }
  const std::string text = save_document(doc) + "\n";
  if (output.empty())
    out << text;
  else
    write_text(output, text);
  return kOk;
}

int cmd_gradcheck(const json& config, std::ostream& out) {
  const ModelConfig model = model_of(config);
  const auto [seed, options] = resolve("gradcheck", [&] {
    GradcheckOptions o;
    o.samples = config.at("samples").get<Index>();
    o.step = config.at("step").get<double>();
    o.sequence_length = config.at("sequence_length").get<Index>();
    for (const auto& name : config.at("families").get<std::vector<std::string>>()) {
      bool found = false;
      for (auto f : {ParamFamily::a_log, ParamFamily::skip, ParamFamily::conv,
                     ParamFamily::projection, ParamFamily::bias, ParamFamily::table,
                     ParamFamily::norm, ParamFamily::head}) {
        if (family_name(f) == name) {
          o.families.insert(f);
          found = true;
        }
      }
      if (!found) throw ContractError("unknown parameter family " + name);
    }
    if (o.samples < 1 || o.step <= 0 || o.sequence_length < 1)
      throw ContractError("samples, step and sequence_length must be positive");
    return std::pair{config.at("seed").get<std::uint64_t>(), o};
  });

  const GradcheckReport report = gradcheck(model, seed, options);
  json j = json::parse(report.to_json());
  j["tolerance"] = kGradcheckTolerance;
  j["passed"] = report.max_rel_err < kGradcheckTolerance;
  out << j.dump() << '\n';
  return report.max_rel_err < kGradcheckTolerance ? kOk : kRuntimeFailure;
}

int cmd_bench(const json& config, std::ostream& out) {
  const ModelConfig model = model_of(config);
  const auto [models, lengths, options, output, svg] = resolve("bench", [&] {
    std::vector<BenchModel> ms;
    for (const auto& name : config.at("models").get<std::vector<std::string>>()) {
      bool found = false;
      for (auto m : {BenchModel::docmamba, BenchModel::attention_baseline,
                     BenchModel::docmamba_streaming}) {
        if (bench_model_name(m) == name) {
          ms.push_back(m);
          found = true;
        }
      }
      if (!found) throw ContractError("unknown bench model " + name);
    }
    BenchOptions o;
    o.model = model;
    o.reps = config.at("reps").get<int>();
    o.seed = config.at("seed").get<std::uint64_t>();
    o.attention_heads = config.at("attention_heads").get<Index>();
    std::vector<Index> ls = config.at("lengths").get<std::vector<Index>>();
    require(ls.size() >= 4, "need at least four lengths");
    for (std::size_t i = 0; i < ls.size(); ++i)
      require(ls[i] >= 64 && (i == 0 || ls[i] > ls[i - 1]),
              "lengths must be >= 64 and strictly increasing");
    require(o.reps >= 1, "reps must be >= 1");
    require(o.attention_heads >= 1 && model.hidden % o.attention_heads == 0,
            "attention_heads must divide model.hidden");
    return std::tuple{ms, ls, o, config.at("output").get<std::string>(),
                      config.at("svg").get<std::string>()};
  });

  std::vector<ScalingReport> reports;
  json result{{"reports", json::array()}};
  for (BenchModel m : models) {
    reports.push_back(bench_scaling(m, lengths, options));
    result["reports"].push_back(json::parse(reports.back().to_json()));
  }
  const std::string text = result.dump(2) + "\n";
  if (!output.empty()) write_text(output, text);
  if (!svg.empty()) write_text(svg, render_scaling_svg(reports));
  out << text;
  return kOk;
}

}  // namespace

int run_command(const std::string& command, const json& config, std::ostream& out) {
  if (command == "synth") return cmd_synth(config, out);
  if (command == "scan-order") return cmd_scan_order(config, out);
  if (command == "pretrain") return cmd_pretrain(config, out);
  if (command == "finetune") return cmd_finetune(config, out);
  if (command == "eval") return cmd_eval(config, out);
  if (command == "infer") return cmd_infer(config, out);
  if (command == "gradcheck") return cmd_gradcheck(config, out);
  if (command == "bench") return cmd_bench(config, out);
  throw UsageError("unknown command: " + command);
}

}  // namespace docmamba::cli
