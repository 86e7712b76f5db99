#ifndef PIN_GENERATOR_H_
#define PIN_GENERATOR_H_

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pin/autodiff.h"
#include "pin/encoder.h"

namespace pin {

// Every operation below works on a batch of (domain, slot) pairs at once:
// row r of each matrix belongs to pair r. A single pair is a batch of one.

template <typename T>
struct SlotContext {
  ad::Var<T> attention_a;  // S x M, softmax of v_s . H_a rows
  ad::Var<T> attention_u;  // S x N
  ad::Var<T> context_a;    // S x d
  ad::Var<T> context_u;    // S x d
  ad::Var<T> context;      // S x d, context_a + context_u
};

// Attention of the slot embeddings v_s [S x d] over both context sequences.
template <typename T>
SlotContext<T> slot_context(ad::Var<T> states_a, ad::Var<T> states_u, ad::Var<T> slot_embeddings);

// Decoder GRU step; o_prev is c_s at the first step.
template <typename T>
ad::Var<T> decode_step_hidden(ad::Var<T> x, ad::Var<T> o_prev, const GruWeights<T>& w) {
  return gru_cell(x, o_prev, w);
}

template <typename T>
struct CopyDistributions {
  ad::Var<T> p_vocab;   // S x |V|, softmax of e_i . o
  ad::Var<T> p_sys;     // S x |V|, system-position attention mapped to words
  ad::Var<T> p_usr;     // S x |V|
  ad::Var<T> q_sys;     // S x M, position-level attention over H_a
  ad::Var<T> q_usr;     // S x N
};

template <typename T>
CopyDistributions<T> copy_distributions(ad::Var<T> o, ad::Var<T> states_a, ad::Var<T> states_u,
                                        std::span<const int> words_a,
                                        std::span<const int> words_u, ad::Var<T> embedding);

template <typename T>
struct FeatureVectors {
  ad::Var<T> sys;  // S x d, sum_i q_a[i] H_a[i]
  ad::Var<T> usr;  // S x d
};

template <typename T>
FeatureVectors<T> feature_vectors(ad::Var<T> q_sys, ad::Var<T> q_usr, ad::Var<T> states_a,
                                  ad::Var<T> states_u);

template <typename T>
struct MixtureWeights {
  ad::Var<T> alpha;  // S x 1, weight of generating from the vocabulary
  ad::Var<T> beta;   // S x 1, weight of copying from system (vs. user) history
};

// alpha = σ([x, o, h_a, h_u] w_vocab); rho_a = [x, o, h_a] w_copy and
// rho_u = [x, o, h_u] w_copy share w_copy; beta = exp(rho_a) / (exp(rho_a) +
// exp(rho_u)) = σ(rho_a − rho_u).
template <typename T>
MixtureWeights<T> mixture_weights(ad::Var<T> x, ad::Var<T> o, ad::Var<T> feat_sys,
                                  ad::Var<T> feat_usr, ad::Var<T> w_vocab, ad::Var<T> w_copy);

// alpha P_v + (1 − alpha)(beta P_a + (1 − beta) P_u), row by row.
template <typename T>
ad::Var<T> final_distribution(ad::Var<T> alpha, ad::Var<T> beta, ad::Var<T> p_vocab,
                              ad::Var<T> p_sys, ad::Var<T> p_usr);

enum class GateClass : int { kNone = 0, kDontcare = 1, kGen = 2 };
inline constexpr std::size_t kGateClasses = 3;

// softmax([h_a, h_u] W_s) over (none, dontcare, gen), from first-step features.
template <typename T>
ad::Var<T> slot_gate(ad::Var<T> feat_sys_first, ad::Var<T> feat_usr_first, ad::Var<T> w_gate);

template <typename T>
struct GeneratorWeights {
  ad::Var<T> embedding;        // |V| x d, shared by inputs and P_v
  ad::Var<T> domain_embedding; // #domains x d
  ad::Var<T> slot_embedding;   // #slot names x d
  GruWeights<T> decoder;
  ad::Var<T> w_vocab;          // 4d x 1
  ad::Var<T> w_copy;           // 3d x 1
  ad::Var<T> w_gate;           // 2d x 3
};

template <typename T>
void add_generator_params(ParamStore<T>& store, std::size_t vocab_size, std::size_t n_domains,
                          std::size_t n_slot_names, std::size_t d);
template <typename T>
GeneratorWeights<T> bind_generator(ad::Tape<T>& tape, ParamStore<T>& store);

// v_s = domain_emb[domain(s)] + slot_emb[slot(s)], one row per requested pair.
// Also the first decoder input x_s^0.
template <typename T>
ad::Var<T> slot_embeddings(const GeneratorWeights<T>& w, std::span<const int> domain_ids,
                           std::span<const int> slot_name_ids);

template <typename T>
struct StepOutputs {
  ad::Var<T> hidden;  // o
  CopyDistributions<T> copy;
  FeatureVectors<T> features;
  MixtureWeights<T> mixture;
  ad::Var<T> p_final;
};

// One full decode step: hidden update, three distributions, mixture.
template <typename T>
StepOutputs<T> decode_step(ad::Var<T> x, ad::Var<T> o_prev, const EncoderOutput<T>& enc,
                           const GeneratorWeights<T>& w);

// How the next decoder input is chosen per row during teacher-forced
// decoding.
struct DecodeTargets {
  // targets[r] = gold tokens for pair r, ending with EOS.
  std::vector<std::vector<int>> targets;
  // teacher_forced[r]: feed gold tokens (true) or the model's argmax (false).
  std::vector<bool> teacher_forced;
};

template <typename T>
struct TrainingDecode {
  ad::Var<T> gate;        // S x 3
  ad::Var<T> value_loss;  // scalar, summed over pairs and steps
};

// Runs the decoder for max(len(targets)) steps with per-row input selection.
template <typename T>
TrainingDecode<T> decode_for_training(const EncoderOutput<T>& enc, const GeneratorWeights<T>& w,
                                      std::span<const int> domain_ids,
                                      std::span<const int> slot_name_ids,
                                      const DecodeTargets& targets);

struct DecodeStepTrace {
  std::size_t t = 0;  // 1-based
  int emitted = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<double> p_vocab, p_sys, p_usr, p_final;  // over the vocabulary
  std::vector<double> q_sys, q_usr;                    // over positions
};

struct SlotDecode {
  std::array<double, kGateClasses> gate{};
  std::vector<int> tokens;  // emitted value tokens, EOS excluded
  bool truncated = false;   // max_len reached without EOS
  std::vector<DecodeStepTrace> trace;
};

// Greedy decoding (argmax, ties to the lowest id) for each requested pair.
// Traces are filled when `with_trace` is set.
template <typename T>
std::vector<SlotDecode> generate_values(const EncoderOutput<T>& enc, const GeneratorWeights<T>& w,
                                        std::span<const int> domain_ids,
                                        std::span<const int> slot_name_ids, std::size_t max_len,
                                        bool with_trace = false);

// Lowest index among the maxima.
template <typename T>
int argmax(std::span<const T> values);

// Gate none/dontcare override the generated tokens; gen with an empty
// generation resolves to "none".
std::string resolve_state(std::span<const double> gate, const std::vector<std::string>& generated);

}  // namespace pin

#endif  // PIN_GENERATOR_H_
