#include "pin/training.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "pin/evaluation.h"

namespace pin {

std::string_view precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision precision_from_name(std::string_view name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (teacher_forcing_prob < 0.0 || teacher_forcing_prob > 1.0) {
    throw ConfigError("teacher_forcing_prob must be in [0, 1]");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.hidden_dim = hidden_dim;
  m.embed_dim = embed_dim;
  m.word_dropout = word_dropout;
  m.embedding_dropout = embedding_dropout;
  m.max_decode_len = max_decode_len;
  return m;
}

std::vector<TrainExample> all_examples(const Corpus& corpus) {
  std::vector<TrainExample> out;
  for (std::size_t d = 0; d < corpus.dialogues.size(); ++d) {
    for (std::size_t l = 1; l <= corpus.dialogues[d].turns.size(); ++l) out.push_back({d, l});
  }
  return out;
}

SlotTarget slot_target(const Vocabulary& vocab, const SlotKey& key, const Tokens* gold_value) {
  SlotTarget out;
  auto special = [&](std::string_view token) {
    out.tokens = {vocab.id(token), kEosId};
  };
  if (gold_value == nullptr || *gold_value == Tokens{std::string(kNoneValue)}) {
    out.gate = GateClass::kNone;
    special(kNoneValue);
  } else if (*gold_value == Tokens{std::string(kDontcareValue)}) {
    out.gate = GateClass::kDontcare;
    special(kDontcareValue);
  } else {
    out.gate = GateClass::kGen;
    for (const std::string& token : *gold_value) {
      if (!vocab.contains(token)) {
        throw DataError("gold value token '" + token + "' of " + key.str() +
                        " is not in the vocabulary");
      }
      out.tokens.push_back(vocab.id(token));
    }
    out.tokens.push_back(kEosId);
  }
  return out;
}

template <typename T>
ad::Var<T> example_loss(ad::Tape<T>& tape, const PinModel<T>& model,
                        const typename PinModel<T>::Weights& w, const Dialogue& dialogue,
                        std::size_t turns, const LossOptions& options, std::mt19937_64& rng) {
  EncoderOutput<T> enc = model.encode(tape, w, dialogue, turns, options.training ? &rng : nullptr);
  const BeliefState& gold = dialogue.turns[turns - 1].state;
  const Ontology& ontology = model.ontology();

  std::vector<int> gate_labels;
  DecodeTargets targets;
  std::bernoulli_distribution force(options.teacher_forcing_prob);
  for (const SlotKey& key : ontology.pairs()) {
    auto it = gold.find(key);
    SlotTarget t = slot_target(model.vocab(), key, it == gold.end() ? nullptr : &it->second);
    gate_labels.push_back(static_cast<int>(t.gate));
    targets.targets.push_back(std::move(t.tokens));
    targets.teacher_forced.push_back(force(rng));
  }
  TrainingDecode<T> dec = decode_for_training(enc, w.generator, model.pair_domains(),
                                              model.pair_slot_names(), targets);
  return ad::cross_entropy_rows(dec.gate, gate_labels) + dec.value_loss;
}

template <typename T>
ad::Var<T> compute_loss(ad::Tape<T>& tape, PinModel<T>& model, const Corpus& corpus,
                        std::span<const TrainExample> batch, const LossOptions& options,
                        std::mt19937_64& rng) {
  if (batch.empty()) throw ContractError("compute_loss: empty batch");
  typename PinModel<T>::Weights w = model.bind(tape);
  std::vector<ad::Var<T>> losses;
  for (const TrainExample& ex : batch) {
    losses.push_back(example_loss(tape, model, w, corpus.dialogues.at(ex.dialogue), ex.turns,
                                  options, rng));
  }
  ad::Var<T> total =
      losses.size() == 1 ? losses[0] : ad::sum(ad::concat(std::span<const ad::Var<T>>(losses), 0));
  return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
}

template <typename T>
double accumulate_gradients(PinModel<T>& model, const Corpus& corpus,
                            std::span<const TrainExample> batch, const LossOptions& options,
                            std::mt19937_64& rng) {
  if (batch.empty()) throw ContractError("accumulate_gradients: empty batch");
  const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  double total = 0.0;
  for (const TrainExample& ex : batch) {
    ad::Tape<T> tape;
    typename PinModel<T>::Weights w = model.bind(tape);
    ad::Var<T> loss = example_loss(tape, model, w, corpus.dialogues.at(ex.dialogue), ex.turns,
                                   options, rng);
    total += static_cast<double>(loss.value()[0]);
    tape.backward(ad::scale(loss, inv));
  }
  return total / static_cast<double>(batch.size());
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr) {
  for (const auto& [name, p] : params) {
    for (T g : p.grad.values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter '" + name + "'");
      }
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto m_it = state.first.try_emplace(name, p.value.shape()).first;
    auto v_it = state.second.try_emplace(name, p.value.shape()).first;
    T* m = m_it->second.data();
    T* v = v_it->second.data();
    T* theta = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - update);
    }
  }
}

template <typename T>
void sgd_step(ParamStore<T>& params, double lr) {
  for (auto& [name, p] : params) {
    T* theta = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw NumericError("non-finite gradient in parameter '" + name + "'");
      }
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * static_cast<double>(g[i]));
    }
  }
}

template <typename T>
double clip_gradients(ParamStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params)
    for (T g : p.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [_, p] : params)
      for (T& g : p.grad.values()) g *= factor;
  }
  return norm;
}

std::string EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["dev_joint_acc"] = dev_joint_acc;
  j["dev_goal_acc"] = dev_goal_acc;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

template <typename T>
TrainResult train(PinModel<T>& model, const Corpus& train_split, const Corpus& dev_split,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  std::vector<TrainExample> examples = all_examples(train_split);
  if (examples.empty()) throw ConfigError("training split has no turns");
  if (dev_split.dialogues.empty()) throw ConfigError("dev split has no dialogues");

  std::mt19937_64 rng(config.seed ^ 0x5deece66dULL);
  AdamState<T> adam;
  LossOptions options{true, config.teacher_forcing_prob};
  TrainResult result;
  std::map<std::string, Tensor<T>> best;
  std::size_t since_best = 0;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(examples.begin(), examples.end(), rng);
    double loss_sum = 0.0;
    std::size_t clipped = 0;
    for (std::size_t b = 0; b < examples.size(); b += config.batch_size) {
      const std::size_t e = std::min(examples.size(), b + config.batch_size);
      std::span<const TrainExample> batch(examples.data() + b, e - b);
      model.params().zero_grad();
      loss_sum += accumulate_gradients(model, train_split, batch, options, rng) *
                  static_cast<double>(batch.size());
      const double norm = clip_gradients(model.params(), config.clip_norm);
      if (norm > config.clip_norm) {
        ++clipped;
        spdlog::debug("epoch {} batch {}: gradient norm {:.3f} clipped to {}", epoch,
                      b / config.batch_size, norm, config.clip_norm);
      }
      if (config.optimizer == Optimizer::kAdam) {
        adam_step(model.params(), adam, config.lr);
      } else {
        sgd_step(model.params(), config.lr);
      }
    }
    if (clipped > 0) spdlog::info("epoch {}: gradient clipping triggered on {} batches", epoch, clipped);

    std::vector<TurnPrediction> preds = predict_corpus(model, dev_split);
    Metrics dev = compute_metrics(preds);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(examples.size());
    log.dev_joint_acc = dev.joint_goal;
    log.dev_goal_acc = dev.goal;
    log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.epochs.push_back(log);
    spdlog::info("epoch {}: loss {:.4f} dev joint {:.4f} goal {:.4f} ({} ms)", epoch,
                 log.train_loss, log.dev_joint_acc, log.dev_goal_acc, log.wall_ms);
    if (on_epoch) on_epoch(log);

    if (!have_best || dev.joint_goal > result.best_dev_joint) {
      have_best = true;
      since_best = 0;
      result.best_epoch = epoch;
      result.best_dev_joint = dev.joint_goal;
      result.best_dev_goal = dev.goal;
      best.clear();
      for (const auto& [name, p] : model.params()) best.emplace(name, p.value);
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) break;
  }
  for (auto& [name, p] : model.params()) p.value = best.at(name);
  model.params().zero_grad();
  return result;
}

#define PIN_INSTANTIATE_TRAINING(T)                                                         \
  template ad::Var<T> example_loss(ad::Tape<T>&, const PinModel<T>&,                        \
                                   const typename PinModel<T>::Weights&, const Dialogue&,   \
                                   std::size_t, const LossOptions&, std::mt19937_64&);      \
  template ad::Var<T> compute_loss(ad::Tape<T>&, PinModel<T>&, const Corpus&,               \
                                   std::span<const TrainExample>, const LossOptions&,       \
                                   std::mt19937_64&);                                       \
  template double accumulate_gradients(PinModel<T>&, const Corpus&,                         \
                                       std::span<const TrainExample>, const LossOptions&,   \
                                       std::mt19937_64&);                                   \
  template void adam_step(ParamStore<T>&, AdamState<T>&, double);                           \
  template void sgd_step(ParamStore<T>&, double);                                           \
  template double clip_gradients(ParamStore<T>&, double);                                   \
  template TrainResult train(PinModel<T>&, const Corpus&, const Corpus&, const TrainConfig&, \
                             const std::function<void(const EpochLog&)>&);

PIN_INSTANTIATE_TRAINING(float)
PIN_INSTANTIATE_TRAINING(double)

#undef PIN_INSTANTIATE_TRAINING

}  // namespace pin
