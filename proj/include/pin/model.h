#ifndef PIN_MODEL_H_
#define PIN_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pin/autodiff.h"
#include "pin/corpus.h"
#include "pin/encoder.h"
#include "pin/generator.h"
#include "pin/params.h"

namespace pin {

struct ModelConfig {
  std::size_t hidden_dim = 400;
  // Must equal hidden_dim: the embedding table also scores decoder states.
  std::size_t embed_dim = 400;
  double word_dropout = 0.3;
  double embedding_dropout = 0.3;
  std::size_t max_decode_len = 10;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Predicted or gold value string per ontology pair.
using StateMap = std::map<SlotKey, std::string>;

// Parameters plus the vocabulary and ontology they were sized for.
template <typename T>
class PinModel {
 public:
  struct Weights {
    EncoderWeights<T> encoder;
    GeneratorWeights<T> generator;
  };

  PinModel(ModelConfig config, Vocabulary vocab, Ontology ontology, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Ontology& ontology() const { return ontology_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Overwrites the word embedding table (|V| x embed_dim).
  void set_embeddings(const Tensor<T>& table);

  Weights bind(ad::Tape<T>& tape);

  // Domain and slot-name row of every ontology pair, in ontology order.
  const std::vector<int>& pair_domains() const { return pair_domains_; }
  const std::vector<int>& pair_slot_names() const { return pair_slot_names_; }

  // Encodes the first `turns` turns. `dropout_rng` enables word and embedding
  // dropout; the copy maps always hold the original word ids.
  EncoderOutput<T> encode(ad::Tape<T>& tape, const Weights& w, const Dialogue& dialogue,
                          std::size_t turns, std::mt19937_64* dropout_rng = nullptr) const;

  // Greedy decode of every ontology pair against one encoding.
  std::vector<SlotDecode> decode_all(const EncoderOutput<T>& enc, const Weights& w,
                                     bool with_trace = false) const;

  // Resolved values for every pair.
  StateMap resolve(std::span<const SlotDecode> decodes) const;

  // Predicted state after each turn of the dialogue (encoded once; each turn
  // uses the prefix of the full encoding).
  std::vector<StateMap> predict_dialogue(const Dialogue& dialogue);

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  Ontology ontology_;
  ParamStore<T> params_;
  std::vector<int> pair_domains_;
  std::vector<int> pair_slot_names_;
};

// Gold value string per pair; absent pairs are "none".
StateMap gold_state(const Ontology& ontology, const BeliefState& state);

}  // namespace pin

#endif  // PIN_MODEL_H_
