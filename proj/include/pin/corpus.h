#ifndef PIN_CORPUS_H_
#define PIN_CORPUS_H_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pin/tensor.h"

namespace pin {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kReservedCount = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kSosToken = "<sos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kNoneValue = "none";
inline constexpr std::string_view kDontcareValue = "dontcare";

using Tokens = std::vector<std::string>;

// Lowercases, splits on whitespace and detaches . , ? ! : ; as separate
// tokens. Empty input yields a single pad token.
Tokens tokenize(std::string_view text);
std::string join_tokens(const Tokens& tokens);

struct SlotKey {
  std::string domain;
  std::string slot;

  std::string str() const { return domain + "-" + slot; }
  auto operator<=>(const SlotKey&) const = default;
};

// Belief state of a turn: at most one value per (domain, slot).
using BeliefState = std::map<SlotKey, Tokens>;

struct Turn {
  Tokens system;
  Tokens user;
  BeliefState state;  // cumulative
  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  bool operator==(const Dialogue&) const = default;
};

// Ordered set of (domain, slot) pairs; the position of a pair is its slot
// index everywhere in the model.
class Ontology {
 public:
  Ontology() = default;
  explicit Ontology(std::vector<SlotKey> pairs);

  const std::vector<SlotKey>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  std::optional<std::size_t> find(const SlotKey& key) const;
  bool contains(const SlotKey& key) const { return find(key).has_value(); }

  // Distinct domains and slot names in order of first appearance.
  const std::vector<std::string>& domains() const { return domains_; }
  const std::vector<std::string>& slot_names() const { return slot_names_; }
  std::size_t domain_index(std::size_t pair) const { return domain_of_pair_[pair]; }
  std::size_t slot_name_index(std::size_t pair) const { return slot_of_pair_[pair]; }

  bool operator==(const Ontology& other) const { return pairs_ == other.pairs_; }

 private:
  std::vector<SlotKey> pairs_;
  std::map<SlotKey, std::size_t> index_;
  std::vector<std::string> domains_;
  std::vector<std::string> slot_names_;
  std::vector<std::size_t> domain_of_pair_;
  std::vector<std::size_t> slot_of_pair_;
};

struct Corpus {
  Ontology ontology;
  std::vector<Dialogue> dialogues;
  bool operator==(const Corpus&) const = default;

  std::size_t turn_count() const;
  const Dialogue* find(std::string_view id) const;
};

// Parses the canonical corpus JSON. When `ontology` is given the file's pairs
// must all belong to it and it becomes the corpus ontology.
Corpus parse_corpus(std::string_view json_text, const Ontology* ontology = nullptr);
Corpus load_corpus(const std::filesystem::path& path, const Ontology* ontology = nullptr);
std::string corpus_to_json(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Accepts either a bare list of [domain, slot] pairs or an object with an
// "ontology" member (so a corpus file doubles as an ontology file).
Ontology load_ontology(const std::filesystem::path& path);

class Vocabulary {
 public:
  Vocabulary();
  // Reserved tokens first, then `tokens` in the given order.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // Unknown tokens map to kUnkId.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::vector<int> ids(const Tokens& tokens) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Utterance tokens with frequency >= min_freq plus every gold value token and
// the special values, ordered by frequency (descending) then lexicographically.
Vocabulary build_vocab(std::span<const Corpus> corpora, int min_freq);
Vocabulary build_vocab(const Corpus& corpus, int min_freq);

template <typename T>
struct EmbeddingTable {
  Tensor<T> table;  // |V| x dim
  double coverage = 0.0;  // fraction of non-reserved vocabulary rows found in the file
};

// Reads "token v1 ... v_dim" lines. Rows not in the file are drawn from
// uniform(-0.1, 0.1) with the given seed.
template <typename T>
EmbeddingTable<T> load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t dim, std::uint64_t seed);

// Replaces each non-reserved id by kUnkId with probability `rate`.
std::vector<int> word_dropout(std::span<const int> ids, double rate, std::mt19937_64& rng);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace pin

#endif  // PIN_CORPUS_H_
