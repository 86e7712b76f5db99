#include "pin/model.h"

namespace pin {

void ModelConfig::validate() const {
  if (hidden_dim == 0 || embed_dim == 0) throw ConfigError("model dimensions must be positive");
  if (embed_dim != hidden_dim) {
    throw ConfigError("embed_dim (" + std::to_string(embed_dim) + ") must equal hidden_dim (" +
                      std::to_string(hidden_dim) +
                      "): the word embedding table also scores decoder states");
  }
  if (word_dropout < 0.0 || word_dropout >= 1.0 || embedding_dropout < 0.0 ||
      embedding_dropout >= 1.0) {
    throw ConfigError("dropout rates must be in [0, 1)");
  }
  if (max_decode_len == 0) throw ConfigError("max_decode_len must be at least 1");
}

template <typename T>
PinModel<T>::PinModel(ModelConfig config, Vocabulary vocab, Ontology ontology,
                      std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), ontology_(std::move(ontology)), params_(seed) {
  config_.validate();
  if (ontology_.size() == 0) throw ConfigError("model needs a nonempty ontology");
  const std::size_t d = config_.hidden_dim;
  add_encoder_params(params_, config_.embed_dim, d);
  add_generator_params(params_, vocab_.size(), ontology_.domains().size(),
                       ontology_.slot_names().size(), d);
  for (std::size_t p = 0; p < ontology_.size(); ++p) {
    pair_domains_.push_back(static_cast<int>(ontology_.domain_index(p)));
    pair_slot_names_.push_back(static_cast<int>(ontology_.slot_name_index(p)));
  }
}

template <typename T>
void PinModel<T>::set_embeddings(const Tensor<T>& table) {
  Parameter<T>& p = params_.get("embedding");
  if (table.shape() != p.value.shape()) {
    throw DimensionError("embedding table " + shape_to_string(table.shape()) +
                         " does not match model " + shape_to_string(p.value.shape()));
  }
  p.value = table;
}

template <typename T>
typename PinModel<T>::Weights PinModel<T>::bind(ad::Tape<T>& tape) {
  return {bind_encoder(tape, params_), bind_generator(tape, params_)};
}

template <typename T>
EncoderOutput<T> PinModel<T>::encode(ad::Tape<T>& tape, const Weights& w,
                                     const Dialogue& dialogue, std::size_t turns,
                                     std::mt19937_64* dropout_rng) const {
  if (turns == 0 || turns > dialogue.turns.size()) {
    throw IndexError("encode: " + std::to_string(turns) + " turns requested of dialogue '" +
                     dialogue.id + "' with " + std::to_string(dialogue.turns.size()));
  }
  const bool training = dropout_rng != nullptr;
  std::vector<TurnInput<T>> inputs;
  inputs.reserve(turns);
  for (std::size_t l = 0; l < turns; ++l) {
    const Turn& turn = dialogue.turns[l];
    TurnInput<T> in;
    in.sys_words = vocab_.ids(turn.system);
    in.usr_words = vocab_.ids(turn.user);
    auto embed = [&](const std::vector<int>& words) {
      std::vector<int> fed = training ? word_dropout(words, config_.word_dropout, *dropout_rng)
                                      : words;
      ad::Var<T> e = ad::embedding_lookup(w.generator.embedding, fed);
      if (training) e = ad::dropout(e, config_.embedding_dropout, *dropout_rng, true);
      return e;
    };
    in.sys_embeddings = embed(in.sys_words);
    in.usr_embeddings = embed(in.usr_words);
    inputs.push_back(std::move(in));
  }
  return encode_dialogue(tape, std::span<const TurnInput<T>>(inputs), w.encoder,
                         config_.hidden_dim);
}

template <typename T>
std::vector<SlotDecode> PinModel<T>::decode_all(const EncoderOutput<T>& enc, const Weights& w,
                                                bool with_trace) const {
  return generate_values(enc, w.generator, pair_domains_, pair_slot_names_,
                         config_.max_decode_len, with_trace);
}

template <typename T>
StateMap PinModel<T>::resolve(std::span<const SlotDecode> decodes) const {
  if (decodes.size() != ontology_.size()) {
    throw ContractError("resolve: one decode per ontology pair is required");
  }
  StateMap out;
  for (std::size_t p = 0; p < decodes.size(); ++p) {
    Tokens words;
    for (int id : decodes[p].tokens) words.push_back(vocab_.token(id));
    out[ontology_.pairs()[p]] = resolve_state(decodes[p].gate, words);
  }
  return out;
}

template <typename T>
std::vector<StateMap> PinModel<T>::predict_dialogue(const Dialogue& dialogue) {
  ad::Tape<T> tape(false);
  Weights w = bind(tape);
  EncoderOutput<T> full = encode(tape, w, dialogue, dialogue.turns.size());
  std::vector<StateMap> out;
  out.reserve(dialogue.turns.size());
  for (std::size_t l = 1; l <= dialogue.turns.size(); ++l) {
    EncoderOutput<T> prefix = encoder_prefix(full, l);
    std::vector<SlotDecode> decodes = decode_all(prefix, w);
    out.push_back(resolve(decodes));
  }
  return out;
}

StateMap gold_state(const Ontology& ontology, const BeliefState& state) {
  StateMap out;
  for (const SlotKey& key : ontology.pairs()) out[key] = std::string(kNoneValue);
  for (const auto& [key, value] : state) {
    if (!ontology.contains(key)) throw SchemaError("gold state names unknown pair " + key.str());
    out[key] = join_tokens(value);
  }
  return out;
}

template class PinModel<float>;
template class PinModel<double>;

}  // namespace pin
