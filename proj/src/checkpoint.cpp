#include <cstring>
#include <fstream>
#include <sstream>

#include "docmamba/doc_model.hpp"
#include "json.hpp"

namespace docmamba {

using nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  return json{{"hidden", c.hidden},
              {"layers", c.layers},
              {"d_inner", c.d_inner},
              {"n_state", c.n_state},
              {"dt_rank", c.dt_rank},
              {"resolved_dt_rank", c.resolved_dt_rank()},
              {"conv_width", c.conv_width},
              {"vocab_size", c.vocab_size},
              {"coord_bins", c.coord_bins},
              {"num_coord_types", c.num_coord_types},
              {"num_tags", c.num_tags},
              {"dropout_rate", c.dropout_rate},
              {"norm", c.norm == NormKind::rms ? "rms" : "layer"}};
}

ModelConfig config_of(const json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden", c.hidden);
  get("layers", c.layers);
  get("d_inner", c.d_inner);
  get("n_state", c.n_state);
  get("dt_rank", c.dt_rank);
  get("conv_width", c.conv_width);
  get("vocab_size", c.vocab_size);
  get("coord_bins", c.coord_bins);
  get("num_coord_types", c.num_coord_types);
  get("num_tags", c.num_tags);
  get("dropout_rate", c.dropout_rate);
  if (j.contains("norm")) {
    const std::string norm = j.at("norm").get<std::string>();
    if (norm == "rms") c.norm = NormKind::rms;
    else if (norm == "layer") c.norm = NormKind::layer;
    else throw ParseError("norm", "expected \"rms\" or \"layer\"");
  }
  c.validate();
  return c;
}

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_of(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError("config", e.what());
  }
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     ModelParams<Scalar>& params, const std::string& metadata_json) {
  const Inventory<Scalar> inv = params.inventory();
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : inv) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
    offset += std::uint64_t(t.size()) * sizeof(Scalar);
  }
  json header{{"format", kCheckpointMagic},
              {"dtype", dtype_name<Scalar>()},
              {"config", config_json(config)},
              {"metadata", json::parse(metadata_json)},
              {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << kCheckpointMagic << '\n';
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& t : inv)
    out.write(reinterpret_cast<const char*>(t.data), std::streamsize(t.size() * sizeof(Scalar)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename Scalar>
Checkpoint<Scalar> read_body(std::istream& in, const json& header, const std::string& path);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open checkpoint");
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw ParseError(path, "not a docmamba-ckpt-v1 file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw ParseError(path, "truncated header");

  try {
    return read_body<Scalar>(in, json::parse(text), path);
  } catch (const json::exception& e) {
    throw ParseError(path, e.what());
  }
}

template <typename Scalar>
Checkpoint<Scalar> read_body(std::istream& in, const json& header, const std::string& path) {
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") throw ParseError(path + ":dtype", "unsupported " + dtype);
  const std::size_t width = dtype == "f32" ? 4 : 8;

  Checkpoint<Scalar> ck;
  ck.config = config_of(header.at("config"));
  ck.metadata_json = header.at("metadata").dump();
  ck.params = ModelParams<Scalar>::zeros(ck.config);
  Inventory<Scalar> inv = ck.params.inventory();
  const json& tensors = header.at("tensors");
  if (tensors.size() != inv.size()) throw ParseError(path, "tensor count does not match config");

  const std::streamoff data_start = in.tellg();
  for (std::size_t i = 0; i < inv.size(); ++i) {
    const json& entry = tensors[i];
    auto& t = inv[i];
    if (entry.at("name") != t.name || entry.at("rows") != t.rows || entry.at("cols") != t.cols)
      throw ParseError(path + ":tensors[" + std::to_string(i) + "]", "shape or name mismatch");
    in.seekg(data_start + std::streamoff(entry.at("offset").get<std::uint64_t>()));
    std::vector<char> raw(std::size_t(t.size()) * width);
    in.read(raw.data(), std::streamsize(raw.size()));
    if (!in) throw ParseError(path, "truncated tensor data for " + t.name);
    for (Index k = 0; k < t.size(); ++k) {
      if (width == 4) {
        float v;
        std::memcpy(&v, raw.data() + k * 4, 4);
        t.data[k] = Scalar(v);
      } else {
        double v;
        std::memcpy(&v, raw.data() + k * 8, 8);
        t.data[k] = Scalar(v);
      }
    }
  }
  return ck;
}

template void save_checkpoint<float>(const std::string&, const ModelConfig&, ModelParams<float>&,
                                     const std::string&);
template void save_checkpoint<double>(const std::string&, const ModelConfig&, ModelParams<double>&,
                                      const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace docmamba
