#include "pin/generator.h"

#include <algorithm>
#include <cmath>

#include "pin/corpus.h"

namespace pin {

using ad::Var;

template <typename T>
SlotContext<T> slot_context(Var<T> states_a, Var<T> states_u, Var<T> slot_embeddings) {
  if (states_a.cols() != slot_embeddings.cols() || states_u.cols() != slot_embeddings.cols()) {
    throw DimensionError("slot_context: slot embeddings " +
                         shape_to_string(slot_embeddings.shape()) + " vs states " +
                         shape_to_string(states_a.shape()) + ", " +
                         shape_to_string(states_u.shape()));
  }
  SlotContext<T> out;
  out.attention_a = ad::softmax(ad::matmul_nt(slot_embeddings, states_a), -1);
  out.attention_u = ad::softmax(ad::matmul_nt(slot_embeddings, states_u), -1);
  out.context_a = ad::matmul(out.attention_a, states_a);
  out.context_u = ad::matmul(out.attention_u, states_u);
  out.context = out.context_a + out.context_u;
  return out;
}

template <typename T>
CopyDistributions<T> copy_distributions(Var<T> o, Var<T> states_a, Var<T> states_u,
                                        std::span<const int> words_a,
                                        std::span<const int> words_u, Var<T> embedding) {
  if (words_a.size() != states_a.rows() || words_u.size() != states_u.rows()) {
    throw DimensionError("copy_distributions: word maps do not match the context lengths");
  }
  const std::size_t vocab = embedding.rows();
  CopyDistributions<T> out;
  out.p_vocab = ad::softmax(ad::matmul_nt(o, embedding), -1);
  out.q_sys = ad::softmax(ad::matmul_nt(o, states_a), -1);
  out.q_usr = ad::softmax(ad::matmul_nt(o, states_u), -1);
  out.p_sys = ad::scatter_add_by_word(out.q_sys, words_a, vocab);
  out.p_usr = ad::scatter_add_by_word(out.q_usr, words_u, vocab);
  return out;
}

template <typename T>
FeatureVectors<T> feature_vectors(Var<T> q_sys, Var<T> q_usr, Var<T> states_a,
                                  Var<T> states_u) {
  return {ad::matmul(q_sys, states_a), ad::matmul(q_usr, states_u)};
}

template <typename T>
MixtureWeights<T> mixture_weights(Var<T> x, Var<T> o, Var<T> feat_sys, Var<T> feat_usr,
                                  Var<T> w_vocab, Var<T> w_copy) {
  Var<T> alpha = ad::sigmoid(ad::matmul(ad::concat({x, o, feat_sys, feat_usr}, 1), w_vocab));
  Var<T> rho_a = ad::matmul(ad::concat({x, o, feat_sys}, 1), w_copy);
  Var<T> rho_u = ad::matmul(ad::concat({x, o, feat_usr}, 1), w_copy);
  return {alpha, ad::sigmoid(rho_a - rho_u)};
}

template <typename T>
Var<T> final_distribution(Var<T> alpha, Var<T> beta, Var<T> p_vocab, Var<T> p_sys,
                          Var<T> p_usr) {
  Var<T> copy = ad::mul_rows(p_sys, beta) + ad::mul_rows(p_usr, ad::complement(beta));
  return ad::mul_rows(p_vocab, alpha) + ad::mul_rows(copy, ad::complement(alpha));
}

template <typename T>
Var<T> slot_gate(Var<T> feat_sys_first, Var<T> feat_usr_first, Var<T> w_gate) {
  return ad::softmax(ad::matmul(ad::concat({feat_sys_first, feat_usr_first}, 1), w_gate), -1);
}

template <typename T>
void add_generator_params(ParamStore<T>& store, std::size_t vocab_size, std::size_t n_domains,
                          std::size_t n_slot_names, std::size_t d) {
  // Word vectors start at unit scale, close to that of pretrained vectors;
  // much smaller rows leave the encoder nearly blind to token identity early on.
  store.add_uniform("embedding", {vocab_size, d}, -1.0, 1.0);
  store.add_uniform("domain_embedding", {n_domains, d}, -0.1, 0.1);
  store.add_uniform("slot_embedding", {n_slot_names, d}, -0.1, 0.1);
  add_gru_params(store, "decoder.gru", d, d);
  const double b4 = 1.0 / std::sqrt(4.0 * static_cast<double>(d));
  const double b3 = 1.0 / std::sqrt(3.0 * static_cast<double>(d));
  const double b2 = 1.0 / std::sqrt(2.0 * static_cast<double>(d));
  store.add_uniform("mixture.w_vocab", {4 * d, 1}, -b4, b4);
  store.add_uniform("mixture.w_copy", {3 * d, 1}, -b3, b3);
  store.add_uniform("gate.w", {2 * d, kGateClasses}, -b2, b2);
}

template <typename T>
GeneratorWeights<T> bind_generator(ad::Tape<T>& tape, ParamStore<T>& store) {
  GeneratorWeights<T> w;
  w.embedding = tape.param(store.get("embedding"));
  w.domain_embedding = tape.param(store.get("domain_embedding"));
  w.slot_embedding = tape.param(store.get("slot_embedding"));
  w.decoder = bind_gru(tape, store, "decoder.gru");
  w.w_vocab = tape.param(store.get("mixture.w_vocab"));
  w.w_copy = tape.param(store.get("mixture.w_copy"));
  w.w_gate = tape.param(store.get("gate.w"));
  return w;
}

template <typename T>
Var<T> slot_embeddings(const GeneratorWeights<T>& w, std::span<const int> domain_ids,
                       std::span<const int> slot_name_ids) {
  if (domain_ids.size() != slot_name_ids.size() || domain_ids.empty()) {
    throw ContractError("slot_embeddings: need equally many (nonzero) domain and slot ids");
  }
  return ad::embedding_lookup(w.domain_embedding, domain_ids) +
         ad::embedding_lookup(w.slot_embedding, slot_name_ids);
}

template <typename T>
StepOutputs<T> decode_step(Var<T> x, Var<T> o_prev, const EncoderOutput<T>& enc,
                           const GeneratorWeights<T>& w) {
  StepOutputs<T> s;
  s.hidden = decode_step_hidden(x, o_prev, w.decoder);
  s.copy = copy_distributions(s.hidden, enc.states_a, enc.states_u, enc.words_a, enc.words_u,
                              w.embedding);
  s.features = feature_vectors(s.copy.q_sys, s.copy.q_usr, enc.states_a, enc.states_u);
  s.mixture = mixture_weights(x, s.hidden, s.features.sys, s.features.usr, w.w_vocab, w.w_copy);
  s.p_final = final_distribution(s.mixture.alpha, s.mixture.beta, s.copy.p_vocab, s.copy.p_sys,
                                 s.copy.p_usr);
  return s;
}

template <typename T>
int argmax(std::span<const T> values) {
  if (values.empty()) throw ContractError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

template <typename T>
TrainingDecode<T> decode_for_training(const EncoderOutput<T>& enc, const GeneratorWeights<T>& w,
                                      std::span<const int> domain_ids,
                                      std::span<const int> slot_name_ids,
                                      const DecodeTargets& targets) {
  const std::size_t rows = domain_ids.size();
  if (targets.targets.size() != rows || targets.teacher_forced.size() != rows) {
    throw ContractError("decode_for_training: one target sequence per slot row is required");
  }
  std::size_t steps = 0;
  for (const auto& t : targets.targets) {
    if (t.empty()) throw ContractError("decode_for_training: empty target sequence");
    steps = std::max(steps, t.size());
  }

  Var<T> v_s = slot_embeddings(w, domain_ids, slot_name_ids);
  SlotContext<T> ctx = slot_context(enc.states_a, enc.states_u, v_s);
  Var<T> x = v_s;
  Var<T> o = ctx.context;
  TrainingDecode<T> out;
  std::vector<Var<T>> step_losses;
  std::vector<int> step_targets(rows), next(rows);
  for (std::size_t t = 0; t < steps; ++t) {
    StepOutputs<T> s = decode_step(x, o, enc, w);
    if (t == 0) out.gate = slot_gate(s.features.sys, s.features.usr, w.w_gate);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& seq = targets.targets[r];
      step_targets[r] = t < seq.size() ? seq[t] : -1;
    }
    step_losses.push_back(ad::cross_entropy_rows(s.p_final, step_targets));
    o = s.hidden;
    if (t + 1 == steps) break;
    const Tensor<T>& p = s.p_final.value();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& seq = targets.targets[r];
      if (t + 1 >= seq.size()) {
        next[r] = kPadId;  // row finished; its later steps carry no loss
      } else if (targets.teacher_forced[r]) {
        next[r] = seq[t];
      } else {
        next[r] = argmax<T>(p.row(r));
      }
    }
    x = ad::embedding_lookup(w.embedding, next);
  }
  out.value_loss = step_losses.size() == 1
                       ? step_losses[0]
                       : ad::sum(ad::concat(std::span<const Var<T>>(step_losses), 0));
  return out;
}

namespace {

template <typename T>
std::vector<double> row_as_double(const Tensor<T>& m, std::size_t r) {
  auto row = m.row(r);
  return {row.begin(), row.end()};
}

}  // namespace

template <typename T>
std::vector<SlotDecode> generate_values(const EncoderOutput<T>& enc, const GeneratorWeights<T>& w,
                                        std::span<const int> domain_ids,
                                        std::span<const int> slot_name_ids, std::size_t max_len,
                                        bool with_trace) {
  if (max_len < 1) throw ContractError("generate_values: max_len must be at least 1");
  const std::size_t rows = domain_ids.size();
  Var<T> v_s = slot_embeddings(w, domain_ids, slot_name_ids);
  SlotContext<T> ctx = slot_context(enc.states_a, enc.states_u, v_s);
  Var<T> x = v_s;
  Var<T> o = ctx.context;

  std::vector<SlotDecode> out(rows);
  std::vector<bool> done(rows, false);
  std::vector<int> next(rows, kPadId);
  std::size_t remaining = rows;
  for (std::size_t t = 1; t <= max_len && remaining > 0; ++t) {
    StepOutputs<T> s = decode_step(x, o, enc, w);
    if (t == 1) {
      Var<T> gate = slot_gate(s.features.sys, s.features.usr, w.w_gate);
      for (std::size_t r = 0; r < rows; ++r) {
        auto g = gate.value().row(r);
        for (std::size_t c = 0; c < kGateClasses; ++c) out[r].gate[c] = static_cast<double>(g[c]);
      }
    }
    const Tensor<T>& p = s.p_final.value();
    for (std::size_t r = 0; r < rows; ++r) {
      if (done[r]) {
        next[r] = kPadId;
        continue;
      }
      const int token = argmax<T>(p.row(r));
      next[r] = token;
      if (with_trace) {
        DecodeStepTrace tr;
        tr.t = t;
        tr.emitted = token;
        tr.alpha = static_cast<double>(s.mixture.alpha.value()[r]);
        tr.beta = static_cast<double>(s.mixture.beta.value()[r]);
        tr.p_vocab = row_as_double(s.copy.p_vocab.value(), r);
        tr.p_sys = row_as_double(s.copy.p_sys.value(), r);
        tr.p_usr = row_as_double(s.copy.p_usr.value(), r);
        tr.p_final = row_as_double(p, r);
        tr.q_sys = row_as_double(s.copy.q_sys.value(), r);
        tr.q_usr = row_as_double(s.copy.q_usr.value(), r);
        out[r].trace.push_back(std::move(tr));
      }
      if (token == kEosId) {
        done[r] = true;
        --remaining;
      } else {
        out[r].tokens.push_back(token);
      }
    }
    o = s.hidden;
    x = ad::embedding_lookup(w.embedding, next);
  }
  for (std::size_t r = 0; r < rows; ++r) out[r].truncated = !done[r];
  return out;
}

std::string resolve_state(std::span<const double> gate,
                          const std::vector<std::string>& generated) {
  if (gate.size() != kGateClasses) {
    throw DimensionError("resolve_state: gate must have " + std::to_string(kGateClasses) +
                         " classes");
  }
  switch (static_cast<GateClass>(argmax<double>(gate))) {
    case GateClass::kNone:
      return std::string(kNoneValue);
    case GateClass::kDontcare:
      return std::string(kDontcareValue);
    case GateClass::kGen:
      break;
  }
  if (generated.empty()) return std::string(kNoneValue);
  return join_tokens(generated);
}

#define PIN_INSTANTIATE_GENERATOR(T)                                                         \
  template SlotContext<T> slot_context(Var<T>, Var<T>, Var<T>);                              \
  template CopyDistributions<T> copy_distributions(Var<T>, Var<T>, Var<T>,                   \
                                                   std::span<const int>,                     \
                                                   std::span<const int>, Var<T>);            \
  template FeatureVectors<T> feature_vectors(Var<T>, Var<T>, Var<T>, Var<T>);                \
  template MixtureWeights<T> mixture_weights(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, Var<T>); \
  template Var<T> final_distribution(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);                \
  template Var<T> slot_gate(Var<T>, Var<T>, Var<T>);                                         \
  template void add_generator_params(ParamStore<T>&, std::size_t, std::size_t, std::size_t,  \
                                     std::size_t);                                           \
  template GeneratorWeights<T> bind_generator(ad::Tape<T>&, ParamStore<T>&);                 \
  template Var<T> slot_embeddings(const GeneratorWeights<T>&, std::span<const int>,          \
                                  std::span<const int>);                                     \
  template StepOutputs<T> decode_step(Var<T>, Var<T>, const EncoderOutput<T>&,               \
                                      const GeneratorWeights<T>&);                           \
  template int argmax(std::span<const T>);                                                   \
  template TrainingDecode<T> decode_for_training(const EncoderOutput<T>&,                    \
                                                 const GeneratorWeights<T>&,                 \
                                                 std::span<const int>, std::span<const int>, \
                                                 const DecodeTargets&);                      \
  template std::vector<SlotDecode> generate_values(const EncoderOutput<T>&,                  \
                                                   const GeneratorWeights<T>&,               \
                                                   std::span<const int>,                     \
                                                   std::span<const int>, std::size_t, bool);

PIN_INSTANTIATE_GENERATOR(float)
PIN_INSTANTIATE_GENERATOR(double)

#undef PIN_INSTANTIATE_GENERATOR

}  // namespace pin
