#ifndef PIN_ENCODER_H_
#define PIN_ENCODER_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pin/autodiff.h"
#include "pin/params.h"

namespace pin {

// GRU weights for input dim d_in and hidden dim d_h, split by operand:
//   w_input     [d_in x 3d_h]  input projection for (update, reset, candidate)
//   w_gates     [d_h  x 2d_h]  hidden projection for (update, reset)
//   w_candidate [d_h  x d_h]   projection of r ⊙ h for the candidate
//   bias        [3d_h]
// This is the [x, h] concatenated form with the weight matrix stored in
// blocks.
template <typename T>
struct GruWeights {
  ad::Var<T> w_input;
  ad::Var<T> w_gates;
  ad::Var<T> w_candidate;
  ad::Var<T> bias;
};

template <typename T>
struct BiGruWeights {
  GruWeights<T> fwd;
  GruWeights<T> bwd;
};

// Registers <prefix>.{w_input,w_gates,w_candidate,bias}, uniform in
// ±1/sqrt(d_h).
template <typename T>
void add_gru_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_in,
                    std::size_t d_h);
// Registers <prefix>.fwd.* and <prefix>.bwd.*.
template <typename T>
void add_bigru_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_in,
                      std::size_t d_h);

template <typename T>
GruWeights<T> bind_gru(ad::Tape<T>& tape, ParamStore<T>& store, const std::string& prefix);
template <typename T>
BiGruWeights<T> bind_bigru(ad::Tape<T>& tape, ParamStore<T>& store, const std::string& prefix);

// One GRU step for each row of x [R x d_in] and h [R x d_h]:
//   z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r)
//   ĥ = tanh(x W_c + (r ⊙ h) U_c + b_c),  h' = (1 − z) ⊙ h + z ⊙ ĥ
template <typename T>
ad::Var<T> gru_cell(ad::Var<T> x, ad::Var<T> h, const GruWeights<T>& w);

template <typename T>
struct GreOutput {
  ad::Var<T> states;  // L x d_h, forward and backward outputs summed per position
  ad::Var<T> last;    // 1 x d_h, final forward state + final backward state
};

// Bidirectional GRU over the rows of x [L x d_in]; both directions start from
// h0 [1 x d_h].
template <typename T>
GreOutput<T> gre(ad::Var<T> x, ad::Var<T> h0, const BiGruWeights<T>& w);

template <typename T>
struct EncoderWeights {
  BiGruWeights<T> sys_lower;  // cross-turn layer, system stream
  BiGruWeights<T> usr_lower;  // cross-turn layer, user stream
  BiGruWeights<T> sys_upper;  // in-turn layer, system stream
  BiGruWeights<T> usr_upper;  // in-turn layer, user stream
};

template <typename T>
void add_encoder_params(ParamStore<T>& store, std::size_t d_in, std::size_t d_h);
template <typename T>
EncoderWeights<T> bind_encoder(ad::Tape<T>& tape, ParamStore<T>& store);

template <typename T>
struct TurnEncoding {
  ad::Var<T> states_a;   // m x d_h
  ad::Var<T> states_u;   // n x d_h
  ad::Var<T> context_a;  // 1 x d_h, carried to the next turn
  ad::Var<T> context_u;
};

// Lower layer: each stream is seeded with the other stream's context from the
// previous turn. Upper layer: each stream is seeded with the other stream's
// lower-layer summary of this turn.
template <typename T>
TurnEncoding<T> encode_turn(ad::Var<T> sys_embeddings, ad::Var<T> usr_embeddings,
                            ad::Var<T> prev_context_a, ad::Var<T> prev_context_u,
                            const EncoderWeights<T>& w);

template <typename T>
struct TurnInput {
  ad::Var<T> sys_embeddings;  // m x d_in
  ad::Var<T> usr_embeddings;  // n x d_in
  std::vector<int> sys_words;  // vocabulary id per position (copy map)
  std::vector<int> usr_words;
};

template <typename T>
struct EncoderOutput {
  ad::Var<T> states_a;  // M x d_h
  ad::Var<T> states_u;  // N x d_h
  std::vector<int> words_a;  // length M
  std::vector<int> words_u;  // length N
  ad::Var<T> context_a;  // final turn context
  ad::Var<T> context_u;
  // Cumulative row counts after each turn.
  std::vector<std::size_t> turn_end_a;
  std::vector<std::size_t> turn_end_u;
  // Per-turn outputs, kept so that prefixes can be cut without re-encoding.
  std::vector<TurnEncoding<T>> turns;

  std::size_t turn_count() const { return turns.size(); }
};

// Rolls encode_turn from zero contexts over every turn and concatenates the
// per-turn states.
template <typename T>
EncoderOutput<T> encode_dialogue(ad::Tape<T>& tape, std::span<const TurnInput<T>> turns,
                                 const EncoderWeights<T>& w, std::size_t d_h);

// Encoding of the first `turns` turns. Because turn l only depends on turns
// 1..l, this equals re-encoding the prefix.
template <typename T>
EncoderOutput<T> encoder_prefix(const EncoderOutput<T>& full, std::size_t turns);

}  // namespace pin

#endif  // PIN_ENCODER_H_
