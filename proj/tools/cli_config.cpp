#include <algorithm>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "docmamba/datapipe.hpp"
#include "docmamba/training.hpp"

namespace docmamba::cli {

namespace {

json model_section(const ModelConfig& config) {
  json j = json::parse(config_to_json(config));
  j.erase("resolved_dt_rank");
  return j;
}

json train_section(const TrainConfig& config) { return json::parse(config.to_json()); }

json grammar_section() {
  const GrammarConfig g;
  return {{"min_tokens", g.min_tokens},           {"max_tokens", g.max_tokens},
          {"min_segments", g.min_segments},       {"max_segments", g.max_segments},
          {"entity_fraction", g.entity_fraction}, {"two_column_prob", g.two_column_prob},
          {"page_w", g.page_w},                   {"page_h", g.page_h}};
}

TrainConfig pretrain_defaults() {
  TrainConfig c;
  c.lr = 3e-3;
  c.total_steps = 2000;
  c.token_budget = 512;
  return c;
}

TrainConfig finetune_defaults() {
  TrainConfig c;
  c.lr = 1e-3;
  c.total_steps = 2000;
  return c;
}

const std::map<std::string, std::string>& descriptions() {
  static const std::map<std::string, std::string> d = {
      {"synth", "Write a synthetic tagged document corpus"},
      {"scan-order", "Serialize a document's words into scan order"},
      {"pretrain", "Masked-LM pre-training on a corpus directory"},
      {"finetune", "BIO tagging fine-tuning"},
      {"eval", "Entity-level precision/recall/F1 of a checkpoint on a corpus"},
      {"infer", "Tag the words of one document"},
      {"gradcheck", "Compare analytic gradients with central differences"},
      {"bench", "Time and memory scaling against sequence length"},
  };
  return d;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth", "scan-order", "pretrain", "finetune",
                                                 "eval",  "infer",      "gradcheck", "bench"};
  return names;
}

json default_config(const std::string& command) {
  const json entity_types = synth_entity_types();
  if (command == "synth")
    return {{"out_dir", "corpus"}, {"seed", 0}, {"n_docs", 100}, {"grammar", grammar_section()}};
  if (command == "scan-order")
    return {{"input", ""}, {"output", ""}, {"svg", ""}, {"scan", "sfbs"}};
  if (command == "pretrain")
    return {{"corpus", "corpus"},
            {"out_dir", "pretrain"},
            {"model", model_section(ModelConfig::tiny())},
            {"train", train_section(pretrain_defaults())}};
  if (command == "finetune")
    return {{"corpus", "corpus"},
            {"eval_corpus", ""},
            {"eval_fraction", 0.2},
            {"init", ""},
            {"out_dir", "finetune"},
            {"entity_types", entity_types},
            {"model", model_section(ModelConfig::tiny())},
            {"train", train_section(finetune_defaults())}};
  if (command == "eval")
    return {{"checkpoint", ""}, {"corpus", "corpus"}, {"entity_types", entity_types}};
  if (command == "infer")
    return {{"checkpoint", ""}, {"input", ""}, {"output", ""}, {"entity_types", entity_types}};
  if (command == "gradcheck")
    return {{"seed", 11},
            {"samples", 240},
            {"step", 1e-5},
            {"sequence_length", 8},
            {"families", json::array()},
            {"model", model_section(ModelConfig::gradcheck_tiny())}};
  if (command == "bench")
    return {{"models", {"docmamba", "attention_baseline", "docmamba_streaming"}},
            {"lengths", {512, 1024, 2048, 4096}},
            {"reps", 3},
            {"seed", 0},
            {"attention_heads", 4},
            {"output", "bench.json"},
            {"svg", "bench.svg"},
            {"model", model_section(ModelConfig::tiny())}};
  throw UsageError("unknown command: " + command);
}

void merge_config(json& base, const json& layer, const std::string& prefix) {
  if (!layer.is_object()) throw UsageError("config must be a JSON object", prefix.empty() ? "$" : prefix);
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("unknown config key: " + key, key);
    json& slot = base[it.key()];
    if (slot.is_object())
      merge_config(slot, it.value(), key);
    else
      slot = it.value();
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);

  json* slot = &config;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!slot->is_object() || !slot->contains(part))
      throw UsageError("unknown config key: " + key, key);
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw UsageError("cannot override a whole section: " + key, key);

  json value = json::parse(text, nullptr, false);
  if (value.is_discarded() || (slot->is_string() && !value.is_string())) value = text;
  *slot = std::move(value);
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path, path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw UsageError("config file is not valid JSON: " + path, path);
  return j;
}

std::string error_json(const std::string& kind, const std::string& message,
                       const std::string& path) {
  json j{{"error", kind}, {"message", message}};
  if (!path.empty()) j["path"] = path;
  return j.dump();
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layout-aware document encoder: corpora, scan ordering, training, evaluation",
               "docmamba"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");
  app.footer("Every config key is listed by `docmamba <command> --print-config`.");

  struct Args {
    std::string config_path;
    std::vector<std::string> overrides;
    bool print_config = false;
  };
  std::map<std::string, Args> args;
  for (const auto& name : command_names()) {
    Args& a = args[name];
    CLI::App* sub = app.add_subcommand(name, descriptions().at(name));
    sub->add_option("-c,--config", a.config_path, "JSON config file");
    sub->add_option("overrides", a.overrides, "key=value overrides; dotted keys reach sections");
    sub->add_flag("--print-config", a.print_config, "Print the resolved config and exit");
  }

  if (argc > 1 && argv[1][0] != '-' &&
      std::find(command_names().begin(), command_names().end(), argv[1]) == command_names().end()) {
    err << error_json("usage", std::string("unknown command: ") + argv[1]) << '\n';
    return kUsageError;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()) << '\n';
    return kUsageError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const Args& a = args.at(command);
  json config;
  try {
    config = default_config(command);
    if (!a.config_path.empty()) merge_config(config, read_config_file(a.config_path));
    for (const auto& o : a.overrides) apply_override(config, o);
  } catch (const UsageError& e) {
    err << error_json("usage", e.what(), e.path()) << '\n';
    return kUsageError;
  }
  if (a.print_config) {
    out << config.dump(2) << '\n';
    return kOk;
  }

  try {
    return run_command(command, config, out);
  } catch (const UsageError& e) {
    err << error_json("usage", e.what(), e.path()) << '\n';
    return kUsageError;
  } catch (const ParseError& e) {
    err << error_json("parse", e.what(), e.path()) << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    err << error_json("runtime", e.what()) << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace docmamba::cli
