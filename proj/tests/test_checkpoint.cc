#include <filesystem>

#include "doctest.h"
#include "pin/checkpoint.h"
#include "pin/evaluation.h"
#include "pin/training.h"
#include "pin/verify.h"

using namespace pin;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("pin_test_checkpoint_" + name);
}

PinModel<float> trained_tiny() {
  TinyInstance inst = tiny_instance();
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = 8;
  tc.batch_size = 1;
  tc.epochs = 2;
  tc.patience = 10;
  tc.lr = 0.01;
  PinModel<float> m(tc.model_config(), inst.vocab, inst.corpus.ontology, 3);
  train(m, inst.corpus, inst.corpus, tc);
  return m;
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
  PinModel<float> m = trained_tiny();
  const fs::path a = temp_path("a.ckpt"), b = temp_path("b.ckpt");
  save_checkpoint(m, a);
  PinModel<float> loaded = load_checkpoint<float>(a);
  save_checkpoint(loaded, b);
  CHECK(read_file(a) == read_file(b));
  CHECK(loaded.config() == m.config());
  CHECK(loaded.vocab() == m.vocab());
  CHECK(loaded.ontology() == m.ontology());
  for (const auto& [name, p] : m.params()) {
    CAPTURE(name);
    CHECK(loaded.params().get(name).value == p.value);
  }
  CHECK(checkpoint_precision(a) == Precision::kF32);
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("loaded model reproduces metrics exactly") {
  PinModel<float> m = trained_tiny();
  TinyInstance inst = tiny_instance();
  PinModel<float> loaded = checkpoint_from_bytes<float>(checkpoint_bytes(m));
  std::vector<TurnPrediction> before = predict_corpus(m, inst.corpus);
  std::vector<TurnPrediction> after = predict_corpus(loaded, inst.corpus);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].predicted == after[i].predicted);
  Metrics x = compute_metrics(before), y = compute_metrics(after);
  CHECK(x.joint_goal == y.joint_goal);
  CHECK(x.goal == y.goal);
}

TEST_CASE("double precision round-trip") {
  PinModel<double> m = tiny_model(4);
  std::string bytes = checkpoint_bytes(m);
  PinModel<double> loaded = checkpoint_from_bytes<double>(bytes);
  CHECK(checkpoint_bytes(loaded) == bytes);
  CHECK_THROWS_AS(checkpoint_from_bytes<float>(bytes), SchemaError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  PinModel<double> m = tiny_model(5);
  const std::string bytes = checkpoint_bytes(m);
  CHECK_THROWS_AS(checkpoint_from_bytes<double>(bytes.substr(0, bytes.size() - 8)),
                  CorruptCheckpointError);
  CHECK_THROWS_AS(checkpoint_from_bytes<double>(bytes + "x"), CorruptCheckpointError);
  CHECK_THROWS_AS(checkpoint_from_bytes<double>("PINCKPT 1\n{not json\n"), CorruptCheckpointError);
  CHECK_THROWS_AS(checkpoint_from_bytes<double>("something else"), CorruptCheckpointError);
  // A manifest whose shape disagrees with the stored config.
  std::string tampered = bytes;
  const std::size_t at = tampered.find("\"hidden_dim\":8");
  REQUIRE(at != std::string::npos);
  tampered.replace(at, 14, "\"hidden_dim\":9");
  CHECK_THROWS_AS(checkpoint_from_bytes<double>(tampered), Error);

  const fs::path p = temp_path("truncated.ckpt");
  write_file(p, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint<double>(p), CorruptCheckpointError);
  fs::remove(p);
  CHECK_THROWS_AS(load_checkpoint<double>(temp_path("missing.ckpt")), IoError);
}
