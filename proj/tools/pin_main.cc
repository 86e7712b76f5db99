// pin: synthesize corpora, train, evaluate and inspect the dialogue state
// tracker, and run the gradient check.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pin/autodiff.h"
#include "pin/checkpoint.h"
#include "pin/corpus.h"
#include "pin/evaluation.h"
#include "pin/synth.h"
#include "pin/training.h"
#include "pin/verify.h"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("pin");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PIN_LOG");
  const std::string level = env == nullptr ? "info" : env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("PIN_LOG='{}' not recognized; using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    pin::write_file(out_path, text + "\n");
    spdlog::info("wrote {}", out_path);
  }
}

// ---- synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  pin::SynthConfig config;
};

int cmd_synth(const SynthArgs& args) {
  args.config.validate();
  pin::SynthCorpus corpus = pin::synth_corpus(args.config);
  const fs::path dir(args.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw pin::IoError("cannot create " + dir.string() + ": " + ec.message());
  pin::save_corpus(corpus.train.corpus, dir / "train.json");
  pin::save_corpus(corpus.dev.corpus, dir / "dev.json");
  pin::save_corpus(corpus.test.corpus, dir / "test.json");
  pin::write_file(dir / "provenance.json", pin::provenance_to_json(corpus));
  spdlog::info("wrote {} / {} / {} dialogues and provenance sidecar to {}",
               corpus.train.corpus.dialogues.size(), corpus.dev.corpus.dialogues.size(),
               corpus.test.corpus.dialogues.size(), dir.string());
  return 0;
}

// ---- shared corpus handling ------------------------------------------------------

struct Splits {
  pin::Corpus train, dev, test;
};

Splits load_splits(const std::string& corpus_dir, const std::string& ontology_path) {
  const fs::path dir(corpus_dir);
  std::optional<pin::Ontology> ontology;
  if (!ontology_path.empty()) ontology = pin::load_ontology(ontology_path);
  Splits s;
  s.train = pin::load_corpus(dir / "train.json", ontology ? &*ontology : nullptr);
  const pin::Ontology& o = ontology ? *ontology : s.train.ontology;
  s.dev = pin::load_corpus(dir / "dev.json", &o);
  s.test = pin::load_corpus(dir / "test.json", &o);
  s.train.ontology = o;
  return s;
}

pin::Corpus load_split(const std::string& corpus_dir, const std::string& split,
                       const pin::Ontology& ontology) {
  return pin::load_corpus(fs::path(corpus_dir) / (split + ".json"), &ontology);
}

// ---- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, ontology, embeddings, checkpoint, log;
  std::string precision = "f32";
  std::string optimizer = "adam";
  pin::TrainConfig config;
};

template <typename T>
int run_train(const TrainArgs& args, const Splits& splits) {
  std::vector<pin::Corpus> all{splits.train, splits.dev, splits.test};
  pin::Vocabulary vocab = pin::build_vocab(std::span<const pin::Corpus>(all), 1);
  pin::PinModel<T> model(args.config.model_config(), vocab, splits.train.ontology,
                         args.config.seed);
  if (!args.embeddings.empty()) {
    pin::EmbeddingTable<T> table =
        pin::load_embeddings<T>(args.embeddings, vocab, args.config.embed_dim, args.config.seed);
    spdlog::info("embedding coverage {:.3f}", table.coverage);
    model.set_embeddings(table.table);
  }
  spdlog::info("vocabulary {} tokens, {} pairs, {} parameters", vocab.size(),
               model.ontology().size(), model.params().scalar_count());

  std::ofstream log;
  if (!args.log.empty()) {
    log.open(args.log, std::ios::binary);
    if (!log) throw pin::IoError("cannot open " + args.log);
  }
  pin::TrainResult result =
      pin::train(model, splits.train, splits.dev, args.config, [&](const pin::EpochLog& e) {
        if (log) log << e.to_json() << "\n" << std::flush;
      });
  pin::save_checkpoint(model, args.checkpoint);
  ordered_json j;
  j["epochs"] = result.epochs.size();
  j["best_epoch"] = result.best_epoch;
  j["dev_joint_goal"] = result.best_dev_joint;
  j["dev_goal"] = result.best_dev_goal;
  j["checkpoint"] = args.checkpoint;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(TrainArgs args) {
  args.config.precision = pin::precision_from_name(args.precision);
  if (args.optimizer == "adam") {
    args.config.optimizer = pin::Optimizer::kAdam;
  } else if (args.optimizer == "sgd") {
    args.config.optimizer = pin::Optimizer::kSgd;
  } else {
    throw UsageError("--optimizer must be adam or sgd");
  }
  args.config.embed_dim = args.config.hidden_dim;
  args.config.validate();
  Splits splits = load_splits(args.corpus, args.ontology);
  if (args.config.precision == pin::Precision::kF32) return run_train<float>(args, splits);
  return run_train<double>(args, splits);
}

// ---- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string corpus, ontology, checkpoint, out, overlap_spec;
  std::string split = "test";
};

template <typename T>
int run_eval(const EvalArgs& args) {
  pin::PinModel<T> model = pin::load_checkpoint<T>(args.checkpoint);
  if (!args.ontology.empty() && !(pin::load_ontology(args.ontology) == model.ontology())) {
    throw pin::SchemaError("ontology " + args.ontology + " does not match the checkpoint");
  }
  pin::Corpus corpus = load_split(args.corpus, args.split, model.ontology());
  std::vector<pin::TurnPrediction> preds = pin::predict_corpus(model, corpus);
  pin::Metrics m = pin::compute_metrics(preds);
  ordered_json j;
  j["split"] = args.split;
  j["turns"] = preds.size();
  j["joint_goal"] = m.joint_goal;
  j["goal"] = m.goal;
  ordered_json per_slot = ordered_json::object();
  for (const pin::SlotAccuracy& s : pin::per_slot_accuracy(preds, model.ontology())) {
    per_slot[s.key.str()] = {{"accuracy", s.accuracy()}, {"support", s.support}};
  }
  j["per_slot"] = per_slot;
  if (!args.overlap_spec.empty()) {
    pin::OverlapSpec spec = args.overlap_spec == "auto"
                                ? pin::overlap_groups(model.ontology())
                                : pin::parse_overlap_spec(args.overlap_spec);
    pin::SlotReport report = pin::slot_report(preds, spec, model.ontology());
    j["overlap"] = ordered_json::parse(report.to_json());
    pin::CrossAssignment ca = pin::cross_assignment(preds, model.ontology());
    j["cross_assignment"] = {{"errors", ca.errors}, {"total", ca.total}, {"rate", ca.rate()}};
    std::cerr << report.to_text();
  }
  emit(j.dump(2), args.out);
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  if (pin::checkpoint_precision(args.checkpoint) == pin::Precision::kF32) {
    return run_eval<float>(args);
  }
  return run_eval<double>(args);
}

// ---- inspect ---------------------------------------------------------------------

struct InspectArgs {
  std::string corpus, checkpoint, out, dialogue, slot;
  std::string split = "test";
  std::size_t turn = 0;
  std::size_t top_k = 5;
};

template <typename T>
int run_inspect(const InspectArgs& args) {
  pin::PinModel<T> model = pin::load_checkpoint<T>(args.checkpoint);
  pin::Corpus corpus = load_split(args.corpus, args.split, model.ontology());
  const pin::Dialogue* d = corpus.find(args.dialogue);
  if (d == nullptr) {
    std::string ids;
    for (std::size_t i = 0; i < corpus.dialogues.size(); ++i) {
      if (i == 20) {
        ids += ", ... (" + std::to_string(corpus.dialogues.size()) + " total)";
        break;
      }
      ids += (i == 0 ? "" : ", ") + corpus.dialogues[i].id;
    }
    throw pin::IndexError("unknown dialogue '" + args.dialogue + "'; available: " + ids);
  }
  const std::size_t dash = args.slot.find('-');
  if (dash == std::string::npos) throw UsageError("--slot must look like domain-slot");
  pin::SlotKey key{args.slot.substr(0, dash), args.slot.substr(dash + 1)};
  pin::InspectRecord rec = pin::inspect_copy(model, *d, args.turn, key, args.top_k);
  emit(rec.to_json(), args.out);
  return 0;
}

int cmd_inspect(const InspectArgs& args) {
  if (pin::checkpoint_precision(args.checkpoint) == pin::Precision::kF32) {
    return run_inspect<float>(args);
  }
  return run_inspect<double>(args);
}

// ---- gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string corrupt;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  if (!args.corrupt.empty()) pin::ad::testing::set_backward_fault(args.corrupt.c_str());
  pin::GradCheckReport report = pin::full_model_gradcheck(args.seed);
  pin::ad::testing::set_backward_fault(nullptr);
  bool ok = true;
  for (const pin::ParamCheck& p : report.params) {
    const bool pass = p.max_rel_err < args.tolerance;
    ok = ok && pass;
    std::printf("%-32s max_rel_err %.3e  %s\n", p.name.c_str(), p.max_rel_err,
                pass ? "ok" : "FAIL");
  }
  std::printf("%s: worst %s[%zu] rel err %.3e (tolerance %.0e)\n", ok ? "PASS" : "FAIL",
              report.worst_name.c_str(), report.worst_index, report.max_rel_err, args.tolerance);
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"PIN dialogue state tracker"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus and provenance sidecar");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.config.seed, "generator seed");
  synth_cmd->add_option("--n-dialogues", synth.config.n_dialogues, "training dialogues");
  synth_cmd->add_option("--n-dev", synth.config.n_dev, "dev dialogues");
  synth_cmd->add_option("--n-test", synth.config.n_test, "test dialogues");
  synth_cmd->add_option("--domains", synth.config.n_domains, "number of domains");
  synth_cmd->add_option("--slots-per-domain", synth.config.slots_per_domain, "slots per domain");
  synth_cmd->add_option("--overlap", synth.config.overlap_slot_count,
                        "slot names shared by all domains");
  synth_cmd->add_option("--values-per-slot", synth.config.values_per_slot, "value pool size");
  synth_cmd->add_option("--max-turns", synth.config.max_turns, "turns per dialogue");
  synth_cmd->add_option("--cross-turn-rate", synth.config.cross_turn_rate,
                        "share of values accepted in a later turn");
  synth_cmd->add_option("--system-provided-rate", synth.config.system_provided_rate,
                        "share of values offered by the system");
  synth_cmd->add_option("--dontcare-rate", synth.config.dontcare_rate,
                        "share of slots the user does not constrain");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--corpus", train.corpus, "directory with train/dev/test.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--ontology", train.ontology, "ontology file")->check(CLI::ExistingFile);
  train_cmd->add_option("--embeddings", train.embeddings, "word vectors (token v1 ... vd)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint", train.checkpoint, "checkpoint to write")->required();
  train_cmd->add_option("--out", train.log, "JSON-lines epoch log");
  train_cmd->add_option("--seed", train.config.seed, "initialization and shuffling seed");
  train_cmd->add_option("--hidden", train.config.hidden_dim, "hidden (and embedding) size");
  train_cmd->add_option("--epochs", train.config.epochs, "maximum epochs");
  train_cmd->add_option("--patience", train.config.patience, "early-stopping patience");
  train_cmd->add_option("--batch", train.config.batch_size, "batch size");
  train_cmd->add_option("--lr", train.config.lr, "learning rate");
  train_cmd->add_option("--teacher-forcing", train.config.teacher_forcing_prob,
                        "teacher forcing probability");
  train_cmd->add_option("--max-decode-len", train.config.max_decode_len, "decode length limit");
  train_cmd->add_option("--word-dropout", train.config.word_dropout, "word dropout rate");
  train_cmd->add_option("--embedding-dropout", train.config.embedding_dropout,
                        "embedding dropout rate");
  train_cmd->add_option("--precision", train.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--optimizer", train.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  eval_cmd->add_option("--corpus", eval.corpus, "directory with train/dev/test.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint to load")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--ontology", eval.ontology, "ontology the checkpoint must match")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval.split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--overlap-spec", eval.overlap_spec,
                       "slot:domain,domain;... or 'auto' for every shared slot name");
  eval_cmd->add_option("--out", eval.out, "write the report here instead of stdout");

  InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect", "dump copy weights for one decode");
  inspect_cmd->add_option("--corpus", inspect.corpus, "directory with train/dev/test.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  inspect_cmd->add_option("--checkpoint", inspect.checkpoint, "checkpoint to load")
      ->required()
      ->check(CLI::ExistingFile);
  inspect_cmd->add_option("--split", inspect.split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  inspect_cmd->add_option("--dialogue", inspect.dialogue, "dialogue id")->required();
  inspect_cmd->add_option("--turn", inspect.turn, "0-based turn")->required();
  inspect_cmd->add_option("--slot", inspect.slot, "domain-slot")->required();
  inspect_cmd->add_option("--top-k", inspect.top_k, "entries per distribution");
  inspect_cmd->add_option("--out", inspect.out, "write the record here instead of stdout");

  GradcheckArgs gradcheck;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  gc_cmd->add_option("--seed", gradcheck.seed, "parameter seed");
  gc_cmd->add_option("--corrupt-backward", gradcheck.corrupt,
                     "perturb one primitive's backward rule (negative control)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*inspect_cmd) return cmd_inspect(inspect);
    if (*gc_cmd) return cmd_gradcheck(gradcheck);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const pin::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
