#include "pin/verify.h"

#include "pin/training.h"

namespace pin {

TinyInstance tiny_instance() {
  Ontology ontology({{"hotel", "area"}, {"restaurant", "area"}, {"restaurant", "food"}});
  Dialogue d;
  d.id = "tiny-0";
  Turn t1;
  t1.system = tokenize("hello , how can i help ?");
  t1.user = tokenize("a cheap place to eat in the north");
  t1.state[{"restaurant", "area"}] = {"north"};
  Turn t2;
  t2.system = tokenize("what food would you like ?");
  t2.user = tokenize("italian please , and a hotel in the east");
  t2.state = t1.state;
  t2.state[{"restaurant", "food"}] = {"italian"};
  t2.state[{"hotel", "area"}] = {"east"};
  d.turns = {t1, t2};

  TinyInstance out;
  out.corpus.ontology = ontology;
  out.corpus.dialogues = {d};
  // 26 words + 4 reserved = 30; "west" never occurs in the dialogue.
  out.vocab = Vocabulary({"hello", ",", "how", "can", "i", "help", "?", "a", "cheap", "place",
                          "to", "eat", "in", "the", "north", "what", "food", "would", "you",
                          "like", "italian", "please", "and", "hotel", "east", "none"});
  return out;
}

PinModel<double> tiny_model(std::uint64_t seed) {
  TinyInstance inst = tiny_instance();
  ModelConfig config;
  config.hidden_dim = 8;
  config.embed_dim = 8;
  config.word_dropout = 0.0;
  config.embedding_dropout = 0.0;
  config.max_decode_len = 4;
  return PinModel<double>(config, inst.vocab, inst.corpus.ontology, seed);
}

GradCheckReport full_model_gradcheck(std::uint64_t seed, double eps) {
  TinyInstance inst = tiny_instance();
  PinModel<double> model = tiny_model(seed);
  std::vector<TrainExample> batch = all_examples(inst.corpus);
  LossOptions options{false, 1.0};
  LossBuilder loss = [&](ad::Tape<double>& tape, ParamStore<double>&) {
    std::mt19937_64 rng(seed);
    return compute_loss(tape, model, inst.corpus, batch, options, rng);
  };
  return grad_check(model.params(), loss, eps);
}

}  // namespace pin
