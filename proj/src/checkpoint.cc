#include "pin/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>

#include "json.hpp"

namespace pin {

namespace {

using nlohmann::ordered_json;

constexpr std::string_view kMagic = "PINCKPT 1";

template <typename T>
constexpr std::string_view dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
void append_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_le(const char* src) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct Parsed {
  ordered_json manifest;
  std::string_view blob;
};

Parsed split(const std::string& bytes) {
  const std::size_t first = bytes.find('\n');
  if (first == std::string::npos || std::string_view(bytes).substr(0, first) != kMagic) {
    throw CorruptCheckpointError("not a checkpoint (missing '" + std::string(kMagic) + "' header)");
  }
  const std::size_t second = bytes.find('\n', first + 1);
  if (second == std::string::npos) throw CorruptCheckpointError("checkpoint manifest is truncated");
  Parsed p;
  try {
    p.manifest = ordered_json::parse(bytes.substr(first + 1, second - first - 1));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  p.blob = std::string_view(bytes).substr(second + 1);
  return p;
}

}  // namespace

template <typename T>
std::string checkpoint_bytes(const PinModel<T>& model) {
  const ModelConfig& c = model.config();
  ordered_json manifest;
  manifest["format"] = "pin-checkpoint";
  manifest["dtype"] = dtype_name<T>();
  manifest["config"] = {{"hidden_dim", c.hidden_dim},
                        {"embed_dim", c.embed_dim},
                        {"word_dropout", c.word_dropout},
                        {"embedding_dropout", c.embedding_dropout},
                        {"max_decode_len", c.max_decode_len}};
  manifest["vocab"] = model.vocab().tokens();
  ordered_json pairs = ordered_json::array();
  for (const SlotKey& k : model.ontology().pairs()) pairs.push_back({k.domain, k.slot});
  manifest["ontology"] = pairs;
  ordered_json params = ordered_json::array();
  std::size_t offset = 0;
  std::string blob;
  for (const auto& [name, p] : model.params()) {
    params.push_back({{"name", name},
                      {"dtype", dtype_name<T>()},
                      {"shape", p.value.shape()},
                      {"byte_offset", offset}});
    for (T v : p.value.values()) append_le(blob, v);
    offset += p.value.size() * sizeof(T);
  }
  manifest["params"] = params;
  manifest["blob_bytes"] = blob.size();
  std::string out(kMagic);
  out += '\n';
  out += manifest.dump();
  out += '\n';
  out += blob;
  return out;
}

template <typename T>
void save_checkpoint(const PinModel<T>& model, const std::filesystem::path& path) {
  write_file(path, checkpoint_bytes(model));
}

template <typename T>
PinModel<T> checkpoint_from_bytes(const std::string& bytes) {
  Parsed parsed = split(bytes);
  const ordered_json& m = parsed.manifest;
  try {
    const std::string dtype = m.at("dtype").get<std::string>();
    if (dtype != dtype_name<T>()) {
      throw SchemaError("checkpoint holds " + dtype + " parameters, requested " +
                        std::string(dtype_name<T>()));
    }
    const std::size_t blob_bytes = m.at("blob_bytes").get<std::size_t>();
    if (parsed.blob.size() != blob_bytes) {
      throw CorruptCheckpointError("checkpoint blob has " + std::to_string(parsed.blob.size()) +
                                   " bytes, manifest declares " + std::to_string(blob_bytes));
    }
    ModelConfig config;
    const auto& jc = m.at("config");
    config.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
    config.embed_dim = jc.at("embed_dim").get<std::size_t>();
    config.word_dropout = jc.at("word_dropout").get<double>();
    config.embedding_dropout = jc.at("embedding_dropout").get<double>();
    config.max_decode_len = jc.at("max_decode_len").get<std::size_t>();

    std::vector<std::string> tokens = m.at("vocab").get<std::vector<std::string>>();
    if (tokens.size() < static_cast<std::size_t>(kReservedCount)) {
      throw CorruptCheckpointError("checkpoint vocabulary lacks the reserved tokens");
    }
    Vocabulary vocab(std::vector<std::string>(tokens.begin() + kReservedCount, tokens.end()));
    if (vocab.tokens() != tokens) {
      throw CorruptCheckpointError("checkpoint vocabulary is malformed");
    }
    std::vector<SlotKey> pairs;
    for (const auto& jp : m.at("ontology")) {
      pairs.push_back({jp.at(0).get<std::string>(), jp.at(1).get<std::string>()});
    }

    PinModel<T> model(config, std::move(vocab), Ontology(std::move(pairs)), 0);
    const auto& jparams = m.at("params");
    if (jparams.size() != model.params().size()) {
      throw CorruptCheckpointError("checkpoint lists " + std::to_string(jparams.size()) +
                                   " parameters, the model config needs " +
                                   std::to_string(model.params().size()));
    }
    std::size_t expected_offset = 0;
    for (const auto& jp : jparams) {
      const std::string name = jp.at("name").get<std::string>();
      if (!model.params().contains(name)) {
        throw CorruptCheckpointError("checkpoint parameter '" + name + "' is not part of the model");
      }
      Parameter<T>& p = model.params().get(name);
      const Shape shape = jp.at("shape").get<Shape>();
      if (shape != p.value.shape()) {
        throw CorruptCheckpointError("checkpoint parameter '" + name + "' has shape " +
                                     shape_to_string(shape) + ", the model config needs " +
                                     shape_to_string(p.value.shape()));
      }
      const std::size_t offset = jp.at("byte_offset").get<std::size_t>();
      const std::size_t bytes_needed = p.value.size() * sizeof(T);
      if (offset != expected_offset || offset + bytes_needed > parsed.blob.size()) {
        throw CorruptCheckpointError("checkpoint parameter '" + name +
                                     "' lies outside the blob or out of order");
      }
      const char* src = parsed.blob.data() + offset;
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = read_le<T>(src + i * sizeof(T));
      expected_offset += bytes_needed;
    }
    if (expected_offset != parsed.blob.size()) {
      throw CorruptCheckpointError("checkpoint blob has trailing bytes");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint manifest is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

template <typename T>
PinModel<T> load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes<T>(read_file(path));
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  Parsed parsed = split(read_file(path));
  try {
    return precision_from_name(parsed.manifest.at("dtype").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint manifest is incomplete: ") + e.what());
  }
}

template std::string checkpoint_bytes(const PinModel<float>&);
template std::string checkpoint_bytes(const PinModel<double>&);
template void save_checkpoint(const PinModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const PinModel<double>&, const std::filesystem::path&);
template PinModel<float> checkpoint_from_bytes(const std::string&);
template PinModel<double> checkpoint_from_bytes(const std::string&);
template PinModel<float> load_checkpoint(const std::filesystem::path&);
template PinModel<double> load_checkpoint(const std::filesystem::path&);

}  // namespace pin
