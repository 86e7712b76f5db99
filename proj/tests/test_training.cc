#include <cmath>

#include "doctest.h"
#include "pin/synth.h"
#include "pin/training.h"
#include "pin/verify.h"
#include "support.h"

using namespace pin;
using namespace pin::testing;

namespace {

struct SmallSynth {
  Corpus train;
  Corpus dev;
  Vocabulary vocab;
};

SmallSynth small_synth() {
  SynthConfig c;
  c.n_dialogues = 30;
  c.n_dev = 5;
  c.n_test = 5;
  SynthCorpus s = synth_corpus(c);
  std::vector<Corpus> all{s.train.corpus, s.dev.corpus, s.test.corpus};
  return {s.train.corpus, s.dev.corpus, build_vocab(std::span<const Corpus>(all), 1)};
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.hidden_dim = 8;
  c.embed_dim = 8;
  c.batch_size = 2;
  c.epochs = 3;
  c.max_decode_len = 4;
  c.lr = 0.01;
  return c;
}

}  // namespace

TEST_CASE("defaults follow the published protocol") {
  TrainConfig c;
  CHECK(c.batch_size == 32);
  CHECK(c.hidden_dim == 400);
  CHECK(c.lr == 0.001);
  CHECK(c.word_dropout == 0.3);
  CHECK(c.embedding_dropout == 0.3);
  CHECK(c.teacher_forcing_prob == 0.5);
  CHECK(c.max_decode_len == 10);
  CHECK_NOTHROW(c.validate());
  c.teacher_forcing_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.embed_dim = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(precision_from_name("f64") == Precision::kF64);
  CHECK_THROWS_AS(precision_from_name("f16"), ConfigError);
}

TEST_CASE("adam first step moves by the learning rate") {
  ParamStore<double> s;
  s.add("theta", Tensor<double>::vector({2.0}));
  s.get("theta").grad = Tensor<double>::vector({1.0});
  AdamState<double> state;
  adam_step(s, state, 0.001);
  CHECK(s.get("theta").value[0] == doctest::Approx(2.0 - 0.001).epsilon(1e-6));
  CHECK(state.step == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  ParamStore<double> s(3);
  s.add_uniform("a", {3, 2}, -1, 1);
  s.add_uniform("b", {4}, -1, 1);
  const Tensor<double> a = s.get("a").value, b = s.get("b").value;
  AdamState<double> state;
  for (int i = 0; i < 5; ++i) {
    s.zero_grad();
    adam_step(s, state, 0.1);
  }
  CHECK(s.get("a").value == a);
  CHECK(s.get("b").value == b);
}

TEST_CASE("one step changes exactly the parameters with nonzero gradient") {
  ParamStore<double> s(4);
  s.add_uniform("a", {3}, -1, 1);
  s.add_uniform("b", {3}, -1, 1);
  const Tensor<double> a = s.get("a").value, b = s.get("b").value;
  s.zero_grad();
  s.get("a").grad[1] = 0.5;
  AdamState<double> state;
  adam_step(s, state, 0.01);
  CHECK(s.get("a").value[0] == a[0]);
  CHECK(s.get("a").value[1] != a[1]);
  CHECK(s.get("a").value[2] == a[2]);
  CHECK(s.get("b").value == b);
}

TEST_CASE("adam converges on a quadratic bowl") {
  ParamStore<double> s;
  s.add("theta", Tensor<double>::vector({1.0, -2.0, 0.5}));
  AdamState<double> state;
  for (int i = 0; i < 500; ++i) {
    Parameter<double>& p = s.get("theta");
    for (std::size_t k = 0; k < 3; ++k) p.grad[k] = 2.0 * p.value[k];
    adam_step(s, state, 0.05);
  }
  for (double v : s.get("theta").value.values()) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("non-finite gradients abort with the parameter name") {
  ParamStore<double> s;
  s.add("encoder.w", Tensor<double>::vector({1.0}));
  s.get("encoder.w").grad[0] = std::nan("");
  AdamState<double> state;
  try {
    adam_step(s, state, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
  CHECK(s.get("encoder.w").value[0] == 1.0);
  CHECK_THROWS_AS(sgd_step(s, 0.1), NumericError);
}

TEST_CASE("sgd step and gradient clipping") {
  ParamStore<double> s;
  s.add("a", Tensor<double>::vector({1.0, 1.0}));
  s.get("a").grad = Tensor<double>::vector({3.0, 4.0});
  CHECK(clip_gradients(s, 10.0) == doctest::Approx(5.0));
  CHECK(s.get("a").grad[0] == 3.0);
  CHECK(clip_gradients(s, 1.0) == doctest::Approx(5.0));
  CHECK(s.get("a").grad[0] == doctest::Approx(0.6));
  CHECK(s.get("a").grad[1] == doctest::Approx(0.8));
  sgd_step(s, 0.5);
  CHECK(s.get("a").value[0] == doctest::Approx(0.7));
  CHECK(s.get("a").value[1] == doctest::Approx(0.6));
}

TEST_CASE("slot targets") {
  Vocabulary v({"none", "dontcare", "curry", "garden"});
  const SlotKey key{"restaurant", "name"};
  SlotTarget none = slot_target(v, key, nullptr);
  CHECK(none.gate == GateClass::kNone);
  CHECK(none.tokens == std::vector<int>{v.id("none"), kEosId});
  Tokens dc{"dontcare"};
  SlotTarget d = slot_target(v, key, &dc);
  CHECK(d.gate == GateClass::kDontcare);
  CHECK(d.tokens == std::vector<int>{v.id("dontcare"), kEosId});
  Tokens name{"curry", "garden"};
  SlotTarget g = slot_target(v, key, &name);
  CHECK(g.gate == GateClass::kGen);
  CHECK(g.tokens == std::vector<int>{v.id("curry"), v.id("garden"), kEosId});
  Tokens oov{"golden", "wok"};
  try {
    slot_target(v, key, &oov);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("golden") != std::string::npos);
  }
}

TEST_CASE("out-of-vocabulary gold values are data errors in the loss") {
  TinyInstance inst = tiny_instance();
  PinModel<double> model = tiny_model(5);
  Corpus c = inst.corpus;
  c.dialogues[0].turns[0].state[{"restaurant", "area"}] = {"west"};
  std::mt19937_64 rng(5);
  TapeD tape;
  std::vector<TrainExample> batch{{0, 1}};
  CHECK_THROWS_AS(compute_loss(tape, model, c, batch, LossOptions{false, 1.0}, rng), DataError);
}

TEST_CASE("loss at a near-uniform initialisation matches the analytic estimate") {
  SmallSynth s = small_synth();
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = 64;
  PinModel<float> model(tc.model_config(), s.vocab, s.train.ontology, 6);
  // Shrink every weight so each softmax is close to uniform.
  for (auto& [_, p] : model.params())
    for (float& v : p.value.values()) v *= 0.01f;
  const std::vector<TrainExample> examples = all_examples(s.train);
  std::vector<TrainExample> batch(examples.begin(), examples.begin() + 8);
  double estimate = 0.0;
  const double n_pairs = static_cast<double>(s.train.ontology.size());
  for (const TrainExample& ex : batch) {
    const BeliefState& gold = s.train.dialogues[ex.dialogue].turns[ex.turns - 1].state;
    double steps = 0.0;
    for (const SlotKey& key : s.train.ontology.pairs()) {
      auto it = gold.find(key);
      steps += static_cast<double>(
          slot_target(s.vocab, key, it == gold.end() ? nullptr : &it->second).tokens.size());
    }
    estimate += n_pairs * std::log(3.0) + steps * std::log(static_cast<double>(s.vocab.size()));
  }
  estimate /= static_cast<double>(batch.size());
  std::mt19937_64 rng(6);
  ad::Tape<float> tape;
  const double loss =
      compute_loss(tape, model, s.train, batch, LossOptions{false, 1.0}, rng).value()[0];
  CAPTURE(loss);
  CAPTURE(estimate);
  CHECK(std::abs(loss - estimate) / estimate < 0.2);
}

TEST_CASE("loss is finite, positive and pure without dropout") {
  SmallSynth s = small_synth();
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = 16;
  PinModel<float> model(tc.model_config(), s.vocab, s.train.ontology, 7);
  std::vector<TrainExample> examples = all_examples(s.train);
  std::mt19937_64 pick(7);
  for (int i = 0; i < 100; ++i) {
    std::vector<TrainExample> batch;
    for (int k = 0; k < 4; ++k) batch.push_back(examples[pick() % examples.size()]);
    std::mt19937_64 rng(i);
    ad::Tape<float> tape;
    const float loss = compute_loss(tape, model, s.train, batch, LossOptions{true, 0.5}, rng)
                           .value()[0];
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0f);
  }
  std::vector<TrainExample> batch(examples.begin(), examples.begin() + 4);
  auto eval = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ad::Tape<float> tape;
    return compute_loss(tape, model, s.train, batch, LossOptions{false, 1.0}, rng).value()[0];
  };
  CHECK(eval(1) == eval(2));
}

TEST_CASE("per-example accumulation equals the single-tape batch gradient") {
  TinyInstance inst = tiny_instance();
  PinModel<double> model = tiny_model(8);
  std::vector<TrainExample> batch = all_examples(inst.corpus);
  LossOptions options{false, 1.0};
  model.params().zero_grad();
  std::mt19937_64 r1(8);
  TapeD tape;
  VarD loss = compute_loss(tape, model, inst.corpus, batch, options, r1);
  tape.backward(loss);
  std::map<std::string, Tensor<double>> single;
  for (const auto& [name, p] : model.params()) single.emplace(name, p.grad);
  model.params().zero_grad();
  std::mt19937_64 r2(8);
  const double mean = accumulate_gradients(model, inst.corpus, batch, options, r2);
  CHECK(mean == doctest::Approx(loss.value()[0]).epsilon(1e-12));
  for (const auto& [name, p] : model.params()) {
    CAPTURE(name);
    CHECK(max_abs_diff(p.grad.values(), single.at(name).values()) < 1e-12);
  }
}

TEST_CASE("teacher forcing changes decoder inputs, not targets") {
  TinyInstance inst = tiny_instance();
  PinModel<double> model = tiny_model(9);
  TapeD tape;
  auto w = model.bind(tape);
  EncoderOutput<double> enc = model.encode(tape, w, inst.corpus.dialogues[0], 2);
  const int north = model.vocab().id("north"), east = model.vocab().id("east");
  DecodeTargets forced{{{north, east, kEosId}, {kEosId}, {east, kEosId}}, {true, true, true}};
  DecodeTargets free = forced;
  free.teacher_forced = {false, false, false};
  TrainingDecode<double> a =
      decode_for_training(enc, w.generator, model.pair_domains(), model.pair_slot_names(), forced);
  TrainingDecode<double> b =
      decode_for_training(enc, w.generator, model.pair_domains(), model.pair_slot_names(), free);
  // The gate and the first step see identical inputs.
  CHECK(a.gate.value() == b.gate.value());
  DecodeTargets first_only{{{north}, {kEosId}, {east}}, {true, true, true}};
  DecodeTargets first_free = first_only;
  first_free.teacher_forced = {false, false, false};
  const Tensor<double> forced_loss =
      decode_for_training(enc, w.generator, model.pair_domains(), model.pair_slot_names(),
                          first_only)
          .value_loss.value();
  const Tensor<double> free_loss =
      decode_for_training(enc, w.generator, model.pair_domains(), model.pair_slot_names(),
                          first_free)
          .value_loss.value();
  CHECK(forced_loss == free_loss);
  // Later steps differ only through what is fed back in.
  CHECK(a.value_loss.value()[0] != b.value_loss.value()[0]);
}

TEST_CASE("one step reaches every parameter group") {
  SmallSynth s = small_synth();
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = 16;
  PinModel<float> model(tc.model_config(), s.vocab, s.train.ontology, 10);
  std::map<std::string, Tensor<float>> before;
  for (const auto& [name, p] : model.params()) before.emplace(name, p.value);
  std::vector<TrainExample> examples = all_examples(s.train);
  std::vector<TrainExample> batch(examples.begin(), examples.begin() + 8);
  std::mt19937_64 rng(10);
  model.params().zero_grad();
  accumulate_gradients(model, s.train, batch, LossOptions{true, 0.5}, rng);
  AdamState<float> adam;
  adam_step(model.params(), adam, 1e-3);
  for (const auto& [name, p] : model.params()) {
    CAPTURE(name);
    double moved = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i)
      moved += std::abs(static_cast<double>(p.value[i]) - before.at(name)[i]);
    CHECK(moved > 0.0);
  }
}

TEST_CASE("training loop: patience, determinism and logs") {
  TinyInstance inst = tiny_instance();
  TrainConfig tc = tiny_train_config();
  tc.patience = 0;
  PinModel<double> m0(tc.model_config(), inst.vocab, inst.corpus.ontology, tc.seed);
  TrainResult r0 = train(m0, inst.corpus, inst.corpus, tc);
  CHECK(r0.epochs.size() == 1);
  CHECK(r0.best_epoch == 1);

  tc.patience = 100;
  auto run = [&]() {
    PinModel<double> m(tc.model_config(), inst.vocab, inst.corpus.ontology, tc.seed);
    std::vector<EpochLog> streamed;
    TrainResult r = train(m, inst.corpus, inst.corpus, tc,
                          [&](const EpochLog& log) { streamed.push_back(log); });
    CHECK(streamed.size() == r.epochs.size());
    return std::make_pair(r, m.params().get("gate.w").value);
  };
  auto [a, wa] = run();
  auto [b, wb] = run();
  REQUIRE(a.epochs.size() == 3);
  REQUIRE(b.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.epochs[i].epoch == i + 1);
    CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    CHECK(a.epochs[i].dev_joint_acc == b.epochs[i].dev_joint_acc);
    CHECK(a.epochs[i].dev_goal_acc == b.epochs[i].dev_goal_acc);
  }
  CHECK(a.epochs[2].train_loss < a.epochs[0].train_loss);
  CHECK(wa == wb);

  {
    const std::string line = a.epochs[0].to_json();
    for (const char* key : {"\"epoch\"", "\"train_loss\"", "\"dev_joint_acc\"",
                            "\"dev_goal_acc\"", "\"wall_ms\""})
      CHECK(line.find(key) != std::string::npos);
  }

  Corpus empty;
  empty.ontology = inst.corpus.ontology;
  PinModel<double> m(tc.model_config(), inst.vocab, inst.corpus.ontology, tc.seed);
  CHECK_THROWS_AS(train(m, empty, inst.corpus, tc), ConfigError);
}
