#include "pin/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pin {

using nlohmann::json;

namespace {

bool is_split_punct(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == ':' || c == ';';
}

bool is_reserved(std::string_view tok) {
  return tok == kPadToken || tok == kUnkToken || tok == kSosToken || tok == kEosToken;
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else if (is_split_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  flush();
  if (out.empty()) out.emplace_back(kPadToken);
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- Ontology ------------------------------------------------------------------

Ontology::Ontology(std::vector<SlotKey> pairs) : pairs_(std::move(pairs)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    const SlotKey& k = pairs_[i];
    if (k.domain.empty() || k.slot.empty()) throw SchemaError("ontology pair with empty name");
    if (!index_.emplace(k, i).second) {
      throw SchemaError("duplicate ontology pair (" + k.domain + ", " + k.slot + ")");
    }
    auto d = std::find(domains_.begin(), domains_.end(), k.domain);
    if (d == domains_.end()) d = domains_.insert(domains_.end(), k.domain);
    domain_of_pair_.push_back(static_cast<std::size_t>(d - domains_.begin()));
    auto s = std::find(slot_names_.begin(), slot_names_.end(), k.slot);
    if (s == slot_names_.end()) s = slot_names_.insert(slot_names_.end(), k.slot);
    slot_of_pair_.push_back(static_cast<std::size_t>(s - slot_names_.begin()));
  }
}

std::optional<std::size_t> Ontology::find(const SlotKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Corpus::turn_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogues) n += d.turns.size();
  return n;
}

const Dialogue* Corpus::find(std::string_view id) const {
  for (const auto& d : dialogues)
    if (d.id == id) return &d;
  return nullptr;
}

// ---- JSON I/O ------------------------------------------------------------------

namespace {

Ontology ontology_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("ontology must be an array of [domain, slot] pairs");
  std::vector<SlotKey> pairs;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
      throw SchemaError("ontology entry must be [domain, slot], got " + p.dump());
    }
    pairs.push_back({p[0].get<std::string>(), p[1].get<std::string>()});
  }
  return Ontology(std::move(pairs));
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + ": missing \"" + key + "\"");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + ": \"" + key + "\" must be a string");
  return v.get<std::string>();
}

json parse_json_text(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": malformed JSON at line " +
                     std::to_string(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                     ": " + e.what());
  }
}

}  // namespace

Corpus parse_corpus(std::string_view json_text, const Ontology* ontology) {
  json root = parse_json_text(json_text, "corpus");
  if (!root.is_object()) throw SchemaError("corpus root must be an object");

  Corpus corpus;
  if (auto it = root.find("ontology"); it != root.end()) {
    corpus.ontology = ontology_from_json(*it);
  }
  if (ontology != nullptr) {
    for (const auto& k : corpus.ontology.pairs()) {
      if (!ontology->contains(k)) {
        throw SchemaError("corpus ontology pair (" + k.domain + ", " + k.slot +
                          ") is not in the supplied ontology");
      }
    }
    corpus.ontology = *ontology;
  } else if (root.find("ontology") == root.end()) {
    throw SchemaError("corpus has no \"ontology\" and none was supplied");
  }

  const json& dialogues = require(root, "dialogues", "corpus");
  if (!dialogues.is_array()) throw SchemaError("\"dialogues\" must be an array");
  for (const auto& dj : dialogues) {
    Dialogue d;
    d.id = require_string(dj, "id", "dialogue");
    const std::string where = "dialogue " + d.id;
    const json& turns = require(dj, "turns", where);
    if (!turns.is_array()) throw SchemaError(where + ": \"turns\" must be an array");
    for (const auto& tj : turns) {
      Turn t;
      t.system = tokenize(require_string(tj, "system", where));
      t.user = tokenize(require_string(tj, "user", where));
      const json& state = require(tj, "state", where);
      if (!state.is_array()) throw SchemaError(where + ": \"state\" must be an array");
      for (const auto& s : state) {
        if (!s.is_array() || s.size() != 3 || !s[0].is_string() || !s[1].is_string() ||
            !s[2].is_string()) {
          throw SchemaError(where + ": state entry must be [domain, slot, value], got " +
                            s.dump());
        }
        SlotKey key{s[0].get<std::string>(), s[1].get<std::string>()};
        if (!corpus.ontology.contains(key)) {
          throw SchemaError(where + ": unknown (domain, slot) pair (" + key.domain + ", " +
                            key.slot + ")");
        }
        Tokens value = tokenize(s[2].get<std::string>());
        if (value.size() == 1 && value[0] == kPadToken) {
          throw SchemaError(where + ": empty value for " + key.str());
        }
        if (!t.state.emplace(key, std::move(value)).second) {
          throw SchemaError(where + ": two values for " + key.str() + " in one turn");
        }
      }
      d.turns.push_back(std::move(t));
    }
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const Ontology* ontology) {
  return parse_corpus(read_file(path), ontology);
}

std::string corpus_to_json(const Corpus& corpus) {
  auto utterance = [](const Tokens& t) {
    if (t.size() == 1 && t[0] == kPadToken) return std::string();
    return join_tokens(t);
  };
  nlohmann::ordered_json root;
  nlohmann::ordered_json onto = nlohmann::ordered_json::array();
  for (const auto& k : corpus.ontology.pairs()) onto.push_back({k.domain, k.slot});
  root["ontology"] = std::move(onto);
  nlohmann::ordered_json dialogues = nlohmann::ordered_json::array();
  for (const auto& d : corpus.dialogues) {
    nlohmann::ordered_json dj;
    dj["id"] = d.id;
    nlohmann::ordered_json turns = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
      nlohmann::ordered_json tj;
      tj["system"] = utterance(t.system);
      tj["user"] = utterance(t.user);
      nlohmann::ordered_json state = nlohmann::ordered_json::array();
      for (const auto& [k, v] : t.state) state.push_back({k.domain, k.slot, join_tokens(v)});
      tj["state"] = std::move(state);
      turns.push_back(std::move(tj));
    }
    dj["turns"] = std::move(turns);
    dialogues.push_back(std::move(dj));
  }
  root["dialogues"] = std::move(dialogues);
  return root.dump(1) + "\n";
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file(path, corpus_to_json(corpus));
}

Ontology load_ontology(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json root = parse_json_text(text, "ontology");
  if (root.is_object()) return ontology_from_json(require(root, "ontology", "ontology file"));
  return ontology_from_json(root);
}

// ---- Vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (std::string_view r : {kPadToken, kUnkToken, kSosToken, kEosToken}) {
    index_.emplace(std::string(r), static_cast<int>(tokens_.size()));
    tokens_.emplace_back(r);
  }
  for (const auto& t : tokens) {
    if (is_reserved(t)) continue;
    if (index_.emplace(t, static_cast<int>(tokens_.size())).second) tokens_.push_back(t);
  }
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::ids(const Tokens& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Vocabulary build_vocab(std::span<const Corpus> corpora, int min_freq) {
  std::unordered_map<std::string, long> freq;
  std::unordered_map<std::string, bool> forced;
  forced[std::string(kNoneValue)] = true;
  forced[std::string(kDontcareValue)] = true;
  for (const Corpus& c : corpora) {
    for (const auto& d : c.dialogues) {
      for (const auto& t : d.turns) {
        for (const auto& tok : t.system) ++freq[tok];
        for (const auto& tok : t.user) ++freq[tok];
        for (const auto& [_, value] : t.state)
          for (const auto& tok : value) forced[tok] = true;
      }
    }
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, n] : freq) {
    if (is_reserved(tok)) continue;
    if (n >= min_freq || forced.count(tok)) kept.emplace_back(tok, n);
  }
  for (const auto& [tok, _] : forced) {
    if (!freq.count(tok) && !is_reserved(tok)) kept.emplace_back(tok, 0);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, _] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(tokens);
}

Vocabulary build_vocab(const Corpus& corpus, int min_freq) {
  return build_vocab(std::span<const Corpus>(&corpus, 1), min_freq);
}

// ---- embeddings ----------------------------------------------------------------

template <typename T>
EmbeddingTable<T> load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingTable<T> out{Tensor<T>({vocab.size(), dim}), 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (T& v : out.table.values()) v = static_cast<T>(dist(rng));

  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path.string());
  std::vector<bool> found(vocab.size(), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> values;
    std::string field;
    while (ss >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" +
                          field + "'");
      }
    }
    if (values.size() != dim) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(dim) + " values, found " + std::to_string(values.size()));
    }
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    if (found[id]) continue;
    found[id] = true;
    for (std::size_t c = 0; c < dim; ++c) out.table.at(id, c) = static_cast<T>(values[c]);
  }
  std::size_t hits = 0;
  for (std::size_t i = kReservedCount; i < vocab.size(); ++i) hits += found[i] ? 1 : 0;
  const std::size_t denom = vocab.size() - kReservedCount;
  out.coverage = denom == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(denom);
  return out;
}

template EmbeddingTable<float> load_embeddings(const std::filesystem::path&, const Vocabulary&,
                                               std::size_t, std::uint64_t);
template EmbeddingTable<double> load_embeddings(const std::filesystem::path&, const Vocabulary&,
                                                std::size_t, std::uint64_t);

std::vector<int> word_dropout(std::span<const int> ids, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("word_dropout: rate must be in [0, 1)");
  std::vector<int> out(ids.begin(), ids.end());
  if (rate == 0.0) return out;
  std::bernoulli_distribution drop(rate);
  for (int& id : out) {
    if (id < kReservedCount) continue;
    if (drop(rng)) id = kUnkId;
  }
  return out;
}

// ---- files ---------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace pin
