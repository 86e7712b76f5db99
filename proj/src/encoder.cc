#include "pin/encoder.h"

#include <cmath>

namespace pin {

using ad::Var;

template <typename T>
void add_gru_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_in,
                    std::size_t d_h) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_h));
  store.add_uniform(prefix + ".w_input", {d_in, 3 * d_h}, -bound, bound);
  store.add_uniform(prefix + ".w_gates", {d_h, 2 * d_h}, -bound, bound);
  store.add_uniform(prefix + ".w_candidate", {d_h, d_h}, -bound, bound);
  store.add_uniform(prefix + ".bias", {3 * d_h}, -bound, bound);
}

template <typename T>
void add_bigru_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_in,
                      std::size_t d_h) {
  add_gru_params(store, prefix + ".fwd", d_in, d_h);
  add_gru_params(store, prefix + ".bwd", d_in, d_h);
}

template <typename T>
GruWeights<T> bind_gru(ad::Tape<T>& tape, ParamStore<T>& store, const std::string& prefix) {
  return {tape.param(store.get(prefix + ".w_input")), tape.param(store.get(prefix + ".w_gates")),
          tape.param(store.get(prefix + ".w_candidate")), tape.param(store.get(prefix + ".bias"))};
}

template <typename T>
BiGruWeights<T> bind_bigru(ad::Tape<T>& tape, ParamStore<T>& store, const std::string& prefix) {
  return {bind_gru(tape, store, prefix + ".fwd"), bind_gru(tape, store, prefix + ".bwd")};
}

namespace {

// GRU step given the already-projected input x W + b; rows [first_row,
// first_row + R) of projected feed the R rows of h.
template <typename T>
Var<T> gru_step(Var<T> projected, std::size_t first_row, Var<T> h, const GruWeights<T>& w) {
  return ad::gru_step(projected, first_row, h, w.w_gates, w.w_candidate);
}

template <typename T>
Var<T> as_matrix_row(Var<T> v) {
  if (v.value().rank() == 2) return v;
  return ad::reshape(v, Shape{1, v.value().size()});
}

}  // namespace

template <typename T>
Var<T> gru_cell(Var<T> x, Var<T> h, const GruWeights<T>& w) {
  if (x.cols() != w.w_input.rows()) {
    throw DimensionError("gru: input " + shape_to_string(x.shape()) + " does not match weights " +
                         shape_to_string(w.w_input.shape()));
  }
  if (x.rows() != h.rows()) {
    throw DimensionError("gru: input " + shape_to_string(x.shape()) + " and hidden " +
                         shape_to_string(h.shape()) + " disagree on rows");
  }
  return gru_step(ad::matmul(x, w.w_input) + w.bias, 0, h, w);
}

template <typename T>
GreOutput<T> gre(Var<T> x, Var<T> h0, const BiGruWeights<T>& w) {
  if (x.value().rank() != 2) throw DimensionError("gre: input must be a matrix");
  const std::size_t len = x.rows();
  if (len == 0) throw ContractError("gre: empty sequence");
  if (x.cols() != w.fwd.w_input.rows()) {
    throw DimensionError("gre: input " + shape_to_string(x.shape()) + " does not match weights " +
                         shape_to_string(w.fwd.w_input.shape()));
  }
  h0 = as_matrix_row(h0);

  Var<T> proj_f = ad::matmul(x, w.fwd.w_input) + w.fwd.bias;
  Var<T> proj_b = ad::matmul(x, w.bwd.w_input) + w.bwd.bias;
  std::vector<Var<T>> fwd(len), bwd(len);
  Var<T> h = h0;
  for (std::size_t t = 0; t < len; ++t) {
    h = gru_step(proj_f, t, h, w.fwd);
    fwd[t] = h;
  }
  h = h0;
  for (std::size_t t = len; t-- > 0;) {
    h = gru_step(proj_b, t, h, w.bwd);
    bwd[t] = h;
  }
  Var<T> f = len == 1 ? fwd[0] : ad::concat(std::span<const Var<T>>(fwd), 0);
  Var<T> b = len == 1 ? bwd[0] : ad::concat(std::span<const Var<T>>(bwd), 0);
  return {f + b, fwd[len - 1] + bwd[0]};
}

template <typename T>
void add_encoder_params(ParamStore<T>& store, std::size_t d_in, std::size_t d_h) {
  add_bigru_params(store, "encoder.sys_lower", d_in, d_h);
  add_bigru_params(store, "encoder.usr_lower", d_in, d_h);
  add_bigru_params(store, "encoder.sys_upper", d_h, d_h);
  add_bigru_params(store, "encoder.usr_upper", d_h, d_h);
}

template <typename T>
EncoderWeights<T> bind_encoder(ad::Tape<T>& tape, ParamStore<T>& store) {
  return {bind_bigru(tape, store, "encoder.sys_lower"), bind_bigru(tape, store, "encoder.usr_lower"),
          bind_bigru(tape, store, "encoder.sys_upper"), bind_bigru(tape, store, "encoder.usr_upper")};
}

template <typename T>
TurnEncoding<T> encode_turn(Var<T> sys_embeddings, Var<T> usr_embeddings, Var<T> prev_context_a,
                            Var<T> prev_context_u, const EncoderWeights<T>& w) {
  GreOutput<T> lower_a = gre(sys_embeddings, prev_context_u, w.sys_lower);
  GreOutput<T> lower_u = gre(usr_embeddings, prev_context_a, w.usr_lower);
  GreOutput<T> upper_a = gre(lower_a.states, lower_u.last, w.sys_upper);
  GreOutput<T> upper_u = gre(lower_u.states, lower_a.last, w.usr_upper);
  return {upper_a.states, upper_u.states, upper_a.last, upper_u.last};
}

namespace {

template <typename T>
Var<T> stack(const std::vector<Var<T>>& parts) {
  if (parts.size() == 1) return parts[0];
  return ad::concat(std::span<const Var<T>>(parts), 0);
}

}  // namespace

template <typename T>
EncoderOutput<T> encode_dialogue(ad::Tape<T>& tape, std::span<const TurnInput<T>> turns,
                                 const EncoderWeights<T>& w, std::size_t d_h) {
  if (turns.empty()) throw ContractError("encode_dialogue: no turns");
  EncoderOutput<T> out;
  Var<T> ctx_a = tape.constant(Tensor<T>({1, d_h}));
  Var<T> ctx_u = tape.constant(Tensor<T>({1, d_h}));
  std::vector<Var<T>> rows_a, rows_u;
  for (const TurnInput<T>& turn : turns) {
    if (turn.sys_words.size() != turn.sys_embeddings.rows() ||
        turn.usr_words.size() != turn.usr_embeddings.rows()) {
      throw DimensionError("encode_dialogue: word map length does not match embeddings");
    }
    TurnEncoding<T> enc = encode_turn(turn.sys_embeddings, turn.usr_embeddings, ctx_a, ctx_u, w);
    ctx_a = enc.context_a;
    ctx_u = enc.context_u;
    rows_a.push_back(enc.states_a);
    rows_u.push_back(enc.states_u);
    out.words_a.insert(out.words_a.end(), turn.sys_words.begin(), turn.sys_words.end());
    out.words_u.insert(out.words_u.end(), turn.usr_words.begin(), turn.usr_words.end());
    out.turn_end_a.push_back(out.words_a.size());
    out.turn_end_u.push_back(out.words_u.size());
    out.turns.push_back(enc);
  }
  out.states_a = stack(rows_a);
  out.states_u = stack(rows_u);
  out.context_a = ctx_a;
  out.context_u = ctx_u;
  return out;
}

template <typename T>
EncoderOutput<T> encoder_prefix(const EncoderOutput<T>& full, std::size_t turns) {
  if (turns == 0 || turns > full.turn_count()) {
    throw IndexError("encoder_prefix: " + std::to_string(turns) + " turns requested of " +
                     std::to_string(full.turn_count()));
  }
  if (turns == full.turn_count()) return full;
  EncoderOutput<T> out;
  std::vector<Var<T>> rows_a, rows_u;
  for (std::size_t l = 0; l < turns; ++l) {
    rows_a.push_back(full.turns[l].states_a);
    rows_u.push_back(full.turns[l].states_u);
    out.turns.push_back(full.turns[l]);
  }
  out.states_a = stack(rows_a);
  out.states_u = stack(rows_u);
  out.turn_end_a.assign(full.turn_end_a.begin(), full.turn_end_a.begin() + turns);
  out.turn_end_u.assign(full.turn_end_u.begin(), full.turn_end_u.begin() + turns);
  out.words_a.assign(full.words_a.begin(), full.words_a.begin() + out.turn_end_a.back());
  out.words_u.assign(full.words_u.begin(), full.words_u.begin() + out.turn_end_u.back());
  out.context_a = full.turns[turns - 1].context_a;
  out.context_u = full.turns[turns - 1].context_u;
  return out;
}

#define PIN_INSTANTIATE_ENCODER(T)                                                          \
  template void add_gru_params(ParamStore<T>&, const std::string&, std::size_t, std::size_t); \
  template void add_bigru_params(ParamStore<T>&, const std::string&, std::size_t,            \
                                 std::size_t);                                              \
  template GruWeights<T> bind_gru(ad::Tape<T>&, ParamStore<T>&, const std::string&);        \
  template BiGruWeights<T> bind_bigru(ad::Tape<T>&, ParamStore<T>&, const std::string&);    \
  template Var<T> gru_cell(Var<T>, Var<T>, const GruWeights<T>&);                           \
  template GreOutput<T> gre(Var<T>, Var<T>, const BiGruWeights<T>&);                        \
  template void add_encoder_params(ParamStore<T>&, std::size_t, std::size_t);               \
  template EncoderWeights<T> bind_encoder(ad::Tape<T>&, ParamStore<T>&);                    \
  template TurnEncoding<T> encode_turn(Var<T>, Var<T>, Var<T>, Var<T>,                      \
                                       const EncoderWeights<T>&);                           \
  template EncoderOutput<T> encode_dialogue(ad::Tape<T>&, std::span<const TurnInput<T>>,   \
                                            const EncoderWeights<T>&, std::size_t);         \
  template EncoderOutput<T> encoder_prefix(const EncoderOutput<T>&, std::size_t);

PIN_INSTANTIATE_ENCODER(float)
PIN_INSTANTIATE_ENCODER(double)

#undef PIN_INSTANTIATE_ENCODER

}  // namespace pin
