#ifndef PIN_TRAINING_H_
#define PIN_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pin/autodiff.h"
#include "pin/corpus.h"
#include "pin/model.h"

namespace pin {

enum class Precision { kF32, kF64 };
std::string_view precision_name(Precision p);
Precision precision_from_name(std::string_view name);

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t hidden_dim = 400;
  std::size_t embed_dim = 400;
  double lr = 0.001;
  double word_dropout = 0.3;
  double embedding_dropout = 0.3;
  double teacher_forcing_prob = 0.5;
  std::size_t max_decode_len = 10;
  std::size_t epochs = 30;
  // Epochs without dev improvement before stopping; 0 stops after the first.
  std::size_t patience = 6;
  std::uint64_t seed = 1;
  Precision precision = Precision::kF32;
  Optimizer optimizer = Optimizer::kAdam;
  double clip_norm = 10.0;

  void validate() const;
  ModelConfig model_config() const;
};

// One training example: the first `turns` turns of a dialogue, labelled with
// the cumulative state after the last of them.
struct TrainExample {
  std::size_t dialogue = 0;
  std::size_t turns = 0;
};

// Every (dialogue, prefix) of the corpus, in corpus order.
std::vector<TrainExample> all_examples(const Corpus& corpus);

struct LossOptions {
  bool training = true;  // word and embedding dropout on
  double teacher_forcing_prob = 0.5;
};

// Gate label and decoder targets (value tokens + EOS) for one pair.
struct SlotTarget {
  GateClass gate = GateClass::kNone;
  std::vector<int> tokens;
};
// Throws DataError when a gold value token is missing from the vocabulary.
SlotTarget slot_target(const Vocabulary& vocab, const SlotKey& key, const Tokens* gold_value);

// Gate cross-entropy plus value cross-entropy summed over every pair.
template <typename T>
ad::Var<T> example_loss(ad::Tape<T>& tape, const PinModel<T>& model,
                        const typename PinModel<T>::Weights& w, const Dialogue& dialogue,
                        std::size_t turns, const LossOptions& options, std::mt19937_64& rng);

// Mean example loss over a batch, on a single tape.
template <typename T>
ad::Var<T> compute_loss(ad::Tape<T>& tape, PinModel<T>& model, const Corpus& corpus,
                        std::span<const TrainExample> batch, const LossOptions& options,
                        std::mt19937_64& rng);

// Same gradients as backward() of compute_loss, one tape per example to bound
// memory. Gradients are added into the parameter grads in batch order;
// returns the mean loss.
template <typename T>
double accumulate_gradients(PinModel<T>& model, const Corpus& corpus,
                            std::span<const TrainExample> batch, const LossOptions& options,
                            std::mt19937_64& rng);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> first;
  std::map<std::string, Tensor<T>> second;
};

// Bias-corrected Adam update from the stored grads. Throws NumericError
// naming the parameter when a gradient is not finite.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr);

template <typename T>
void sgd_step(ParamStore<T>& params, double lr);

// Scales all grads so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_gradients(ParamStore<T>& params, double max_norm);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_joint_acc = 0.0;
  double dev_goal_acc = 0.0;
  long long wall_ms = 0;

  std::string to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_dev_joint = 0.0;
  double best_dev_goal = 0.0;
};

// Shuffled mini-batch training with early stopping on dev joint accuracy.
// The model ends with the parameters of the best epoch. `on_epoch`, when set,
// receives each log entry as it is produced.
template <typename T>
TrainResult train(PinModel<T>& model, const Corpus& train_split, const Corpus& dev_split,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace pin

#endif  // PIN_TRAINING_H_
