// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
// Exit status is nonzero when any criterion fails.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fixtures.h"
#include "pin/checkpoint.h"
#include "pin/evaluation.h"
#include "pin/generator.h"
#include "pin/synth.h"
#include "pin/training.h"
#include "pin/verify.h"
#include "support.h"

using namespace pin;
using namespace pin::testing;
namespace fs = std::filesystem;

namespace {

// ---- tolerances ----------------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr int kSimplexDraws = 1000;
constexpr double kSimplexTol = 1e-5;
constexpr double kMassTol = 1e-6;
constexpr double kDegeneracyTol = 1e-6;
constexpr double kOverfitLoss = 0.05;
constexpr int kOverfitSteps = 300;
constexpr double kOverfitSeconds = 120.0;
constexpr std::size_t kHidden = 64;
constexpr double kDevJoint = 0.90;
constexpr double kDevGoal = 0.97;
constexpr double kTrainSeconds = 15.0 * 60.0;
constexpr double kOverlapSlotAcc = 0.85;
constexpr double kCrossAssignRate = 0.05;
constexpr double kCrossTurnAcc = 0.80;
constexpr double kInTurnAcc = 0.90;
constexpr double kRoutingRate = 0.80;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, format, a);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  if (!o.pass) ++g_failures;
  std::printf("%s %2d %-32s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

double row_sum(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v;
  return s;
}

double row_min(std::span<const double> r) {
  double m = r[0];
  for (double v : r) m = std::min(m, v);
  return m;
}

// ---- 1 -------------------------------------------------------------------------

Outcome gradient_fidelity() {
  TinyInstance inst = tiny_instance();
  PinModel<double> probe = tiny_model(7);
  if (probe.config().hidden_dim != 8 || probe.config().embed_dim != 8 ||
      inst.vocab.size() != 30 || inst.corpus.dialogues[0].turns.size() != 2 ||
      inst.corpus.ontology.size() != 3) {
    return {false, "tiny instance does not have the required shape"};
  }
  const auto start = Clock::now();
  GradCheckReport r = full_model_gradcheck(7, 1e-5);
  const double secs = seconds_since(start);
  const bool ok = r.passed(kGradTol) && secs < kGradSeconds &&
                  r.params.size() == probe.params().size();
  return {ok, "worst rel err " + fmt("%.2e", r.max_rel_err) + " (" + r.worst_name + ") over " +
                  std::to_string(r.params.size()) + " groups in " + fmt("%.1f s", secs)};
}

// ---- 2 -------------------------------------------------------------------------

constexpr std::size_t kD = 5;
constexpr std::size_t kV = 12;

Outcome distribution_invariants() {
  double worst_sum = 0.0, worst_mass = 0.0, lowest = 0.0;
  for (int seed = 0; seed < kSimplexDraws; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    ParamStore<double> store(1000 + static_cast<std::uint64_t>(seed));
    add_generator_params(store, kV, 2, 2, kD);
    TapeD tape;
    GeneratorWeights<double> w = bind_generator(tape, store);
    EncoderOutput<double> enc;
    const std::size_t m = 1 + rng() % 6, n = 1 + rng() % 6;
    enc.states_a = tape.constant(random_tensor({m, kD}, rng, -2, 2));
    enc.states_u = tape.constant(random_tensor({n, kD}, rng, -2, 2));
    for (std::size_t i = 0; i < m; ++i) enc.words_a.push_back(static_cast<int>(rng() % kV));
    for (std::size_t i = 0; i < n; ++i) enc.words_u.push_back(static_cast<int>(rng() % kV));
    const std::vector<int> domains{0, 1, 1}, slots{0, 0, 1};
    VarD vs = slot_embeddings(w, domains, slots);
    SlotContext<double> ctx = slot_context(enc.states_a, enc.states_u, vs);
    VarD x = tape.constant(random_tensor({3, kD}, rng, -2, 2));
    StepOutputs<double> s = decode_step(x, ctx.context, enc, w);
    VarD gate = slot_gate(s.features.sys, s.features.usr, w.w_gate);
    for (std::size_t r = 0; r < 3; ++r) {
      for (const VarD* v : {&s.copy.p_vocab, &s.copy.p_sys, &s.copy.p_usr, &s.copy.q_sys,
                            &s.copy.q_usr, &s.p_final, &gate}) {
        worst_sum = std::max(worst_sum, std::abs(row_sum(v->value().row(r)) - 1.0));
        lowest = std::min(lowest, row_min(v->value().row(r)));
      }
      worst_mass = std::max(worst_mass, std::abs(row_sum(s.copy.p_sys.value().row(r)) -
                                                 row_sum(s.copy.q_sys.value().row(r))));
      worst_mass = std::max(worst_mass, std::abs(row_sum(s.copy.p_usr.value().row(r)) -
                                                 row_sum(s.copy.q_usr.value().row(r))));
    }
  }
  const bool ok = worst_sum < kSimplexTol && worst_mass < kMassTol && lowest >= 0.0;
  return {ok, std::to_string(kSimplexDraws) + " draws: worst |sum-1| " + fmt("%.1e", worst_sum) +
                  ", copy mass " + fmt("%.1e", worst_mass) + ", min " + fmt("%.1e", lowest)};
}

// ---- 3 -------------------------------------------------------------------------

Outcome mixture_degeneracy() {
  std::mt19937_64 rng(31);
  auto simplex = [&]() {
    Tensor<double> t = random_tensor({1, kV}, rng, 0, 1);
    const double z = t.sum();
    for (double& v : t.values()) v /= z;
    return t;
  };
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    TapeD tape;
    Tensor<double> pv = simplex(), pa = simplex(), pu = simplex();
    auto scalar = [&](double v) { return tape.constant(Tensor<double>::matrix(1, 1, {v})); };
    VarD vocab = final_distribution(scalar(1.0 - 1e-9), scalar(0.5), tape.constant(pv),
                                    tape.constant(pa), tape.constant(pu));
    VarD sys = final_distribution(scalar(1e-9), scalar(1.0 - 1e-9), tape.constant(pv),
                                  tape.constant(pa), tape.constant(pu));
    worst = std::max(worst, max_abs_diff(vocab.value().values(), pv.values()));
    worst = std::max(worst, max_abs_diff(sys.value().values(), pa.values()));
  }
  return {worst < kDegeneracyTol, "worst |P_final - part|_inf " + fmt("%.1e", worst)};
}

// ---- 4 -------------------------------------------------------------------------

Outcome case_study() {
  TapeD tape;
  constexpr int kReservation = 4, kEuropean = 9;
  Tensor<double> pv({1, kV}), pa({1, kV}), pu({1, kV});
  pv.fill(1.0 / (kV - 2));
  pv[kReservation] = pv[kEuropean] = 0.0;
  pa[kReservation] = 0.668;
  pa[0] = 1.0 - 0.668;
  pu[kEuropean] = 0.507;
  pu[1] = 1.0 - 0.507;
  auto scalar = [&](double v) { return tape.constant(Tensor<double>::matrix(1, 1, {v})); };
  VarD p = final_distribution(scalar(0.37), scalar(0.033), tape.constant(pv), tape.constant(pa),
                              tape.constant(pu));
  const double european = p.value()[kEuropean], reservation = p.value()[kReservation];
  const bool ok = std::round(european * 1000.0) == 309.0 &&
                  std::round(reservation * 1000.0) == 14.0 && european > reservation;
  return {ok, "european " + fmt("%.4f", european) + " vs reservation " + fmt("%.4f", reservation)};
}

// ---- 5 -------------------------------------------------------------------------

Outcome overfit(const SynthCorpus& synth, const Vocabulary& vocab) {
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = kHidden;
  PinModel<float> model(tc.model_config(), vocab, synth.train.corpus.ontology, tc.seed);
  std::vector<TrainExample> all = all_examples(synth.train.corpus);
  std::vector<TrainExample> batch(all.begin(), all.begin() + 8);
  // Dropout off and full teacher forcing: a fixed objective to drive to zero.
  const LossOptions options{false, 1.0};
  std::mt19937_64 rng(tc.seed);
  AdamState<float> adam;
  const auto start = Clock::now();
  double loss = 0.0;
  int step = 0;
  for (; step < kOverfitSteps; ++step) {
    model.params().zero_grad();
    loss = accumulate_gradients(model, synth.train.corpus, batch, options, rng);
    if (loss < kOverfitLoss) break;
    clip_gradients(model.params(), tc.clip_norm);
    adam_step(model.params(), adam, tc.lr);
  }
  const double secs = seconds_since(start);
  return {loss < kOverfitLoss && secs < kOverfitSeconds,
          "loss " + fmt("%.4f", loss) + " after " + std::to_string(step) + " steps in " +
              fmt("%.1f s", secs)};
}

// ---- 6 to 9, 11: the trained synthetic model -------------------------------------

struct Trained {
  std::optional<PinModel<float>> model;
  TrainResult result;
  double seconds = 0.0;
  std::string error;
};

TrainConfig synthetic_config() {
  TrainConfig tc;
  tc.hidden_dim = tc.embed_dim = kHidden;
  return tc;
}

Trained train_synthetic(const SynthCorpus& synth, const Vocabulary& vocab) {
  Trained t;
  const TrainConfig tc = synthetic_config();
  const auto start = Clock::now();
  try {
    t.model.emplace(tc.model_config(), vocab, synth.train.corpus.ontology, tc.seed);
    t.result = train(*t.model, synth.train.corpus, synth.dev.corpus, tc, [](const EpochLog& l) {
      std::printf("     epoch %2zu  loss %.4f  dev joint %.4f  goal %.4f  (%.1f s)\n", l.epoch,
                  l.train_loss, l.dev_joint_acc, l.dev_goal_acc, double(l.wall_ms) / 1000.0);
      std::fflush(stdout);
    });
  } catch (const std::exception& e) {
    t.model.reset();
    t.error = e.what();
  }
  t.seconds = seconds_since(start);
  return t;
}

Outcome end_to_end(const SynthCorpus& synth, const Vocabulary& vocab, const Trained& t,
                   double synth_seconds) {
  if (!t.model) return {false, "training failed: " + t.error};
  const double total = synth_seconds + t.seconds;
  // Determinism: a fresh one-epoch run with the same seed reproduces epoch 1.
  TrainConfig replay = synthetic_config();
  replay.epochs = 1;
  PinModel<float> again(replay.model_config(), vocab, synth.train.corpus.ontology, replay.seed);
  TrainResult r = train(again, synth.train.corpus, synth.dev.corpus, replay);
  const EpochLog& a = t.result.epochs.front();
  const EpochLog& b = r.epochs.front();
  const bool same = a.train_loss == b.train_loss && a.dev_joint_acc == b.dev_joint_acc &&
                    a.dev_goal_acc == b.dev_goal_acc;
  const bool ok = t.result.best_dev_joint >= kDevJoint && t.result.best_dev_goal >= kDevGoal &&
                  t.result.epochs.size() <= 30 && total < kTrainSeconds && same;
  return {ok, "dev joint " + fmt("%.4f", t.result.best_dev_joint) + ", goal " +
                  fmt("%.4f", t.result.best_dev_goal) + " at epoch " +
                  std::to_string(t.result.best_epoch) + "/" +
                  std::to_string(t.result.epochs.size()) + ", " + fmt("%.0f s", total) +
                  (same ? ", replay identical" : ", replay differs")};
}

Outcome overlap_discrimination(const SynthCorpus& synth, std::span<const TurnPrediction> test) {
  const Ontology& o = synth.test.corpus.ontology;
  SlotReport report = slot_report(test, overlap_groups(o), o);
  double lowest = 1.0;
  std::size_t rows = 0;
  for (const SlotReportGroup& g : report.groups) {
    for (const SlotAccuracy& a : g.rows) {
      lowest = std::min(lowest, a.accuracy());
      ++rows;
    }
  }
  CrossAssignment c = cross_assignment(test, o);
  const bool ok = rows >= 4 && lowest >= kOverlapSlotAcc && c.total > 0 &&
                  c.rate() < kCrossAssignRate;
  return {ok, std::to_string(rows) + " overlapping pairs, lowest accuracy " +
                  fmt("%.3f", lowest) + ", cross-assignment " + std::to_string(c.errors) + "/" +
                  std::to_string(c.total)};
}

Outcome cross_turn(const SynthCorpus& synth, std::span<const TurnPrediction> test) {
  Tally cross = provenance_accuracy(test, synth.test.planted, Provenance::kCrossTurn);
  Tally in = provenance_accuracy(test, synth.test.planted, Provenance::kInTurn);
  const bool ok = cross.total > 0 && in.total > 0 && cross.rate() >= kCrossTurnAcc &&
                  in.rate() >= kInTurnAcc;
  return {ok, "cross-turn " + fmt("%.3f", cross.rate()) + " (" + std::to_string(cross.total) +
                  "), in-turn " + fmt("%.3f", in.rate()) + " (" + std::to_string(in.total) + ")"};
}

Outcome routing(const SynthCorpus& synth, PinModel<float>& model) {
  RoutingStats s = copy_routing(model, synth.test.corpus, synth.test.planted);
  const bool ok = s.user_only.total > 0 && s.system_only.total > 0 &&
                  s.user_only.rate() >= kRoutingRate && s.system_only.rate() >= kRoutingRate;
  return {ok, "user-only 1-beta>0.5 in " + fmt("%.3f", s.user_only.rate()) + " (" +
                  std::to_string(s.user_only.total) + "), system-only beta>0.5 in " +
                  fmt("%.3f", s.system_only.rate()) + " (" +
                  std::to_string(s.system_only.total) + ")"};
}

// ---- 10 ------------------------------------------------------------------------

Outcome metric_oracle(const std::vector<Metrics>& runs) {
  std::vector<TurnPrediction> f = fixture();
  auto [joint, goal] = recount(f);
  Metrics m = compute_metrics(f);
  bool ordered = m.joint_goal <= m.goal;
  for (const Metrics& r : runs) ordered = ordered && r.joint_goal <= r.goal;
  const bool ok = m.joint_goal == joint && m.goal == goal && ordered;
  return {ok, "fixture joint " + fmt("%.4f", m.joint_goal) + " goal " + fmt("%.4f", m.goal) +
                  ", joint <= goal on " + std::to_string(runs.size() + 1) + " runs"};
}

// ---- 11 ------------------------------------------------------------------------

Outcome round_trips(const SynthCorpus& synth, PinModel<float>* model) {
  const fs::path dir = fs::temp_directory_path() / "pin_acceptance";
  fs::create_directories(dir);
  bool corpus_ok = true;
  for (const SynthSplit* s : {&synth.train, &synth.dev, &synth.test}) {
    corpus_ok = corpus_ok && parse_corpus(corpus_to_json(s->corpus)) == s->corpus;
    save_corpus(s->corpus, dir / "split.json");
    corpus_ok = corpus_ok && load_corpus(dir / "split.json") == s->corpus;
    corpus_ok = corpus_ok && provenance_from_json(provenance_to_json(synth), "test") ==
                                 synth.test.planted;
  }
  if (model == nullptr) return {false, "no trained model to round-trip"};
  save_checkpoint(*model, dir / "model.ckpt");
  PinModel<float> loaded = load_checkpoint<float>(dir / "model.ckpt");
  save_checkpoint(loaded, dir / "again.ckpt");
  const bool bytes_ok = read_file(dir / "model.ckpt") == read_file(dir / "again.ckpt");
  std::vector<TurnPrediction> before = predict_corpus(*model, synth.dev.corpus);
  std::vector<TurnPrediction> after = predict_corpus(loaded, synth.dev.corpus);
  Metrics x = compute_metrics(before), y = compute_metrics(after);
  const bool metrics_ok = x.joint_goal == y.joint_goal && x.goal == y.goal;
  fs::remove_all(dir);
  return {corpus_ok && bytes_ok && metrics_ok,
          std::string("corpus ") + (corpus_ok ? "identical" : "differs") + ", checkpoint " +
              (bytes_ok ? "byte-stable" : "unstable") + ", dev metrics " +
              (metrics_ok ? "bitwise equal" : "differ")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "distribution invariants", distribution_invariants);
  report(3, "mixture degeneracy", mixture_degeneracy);
  report(4, "case-study arithmetic", case_study);

  const auto synth_start = Clock::now();
  SynthCorpus synth = synth_corpus(SynthConfig{});
  std::vector<Corpus> splits{synth.train.corpus, synth.dev.corpus, synth.test.corpus};
  Vocabulary vocab = build_vocab(std::span<const Corpus>(splits), 1);
  const double synth_seconds = seconds_since(synth_start);

  report(5, "overfit one batch", [&] { return overfit(synth, vocab); });

  std::printf("     training on the default synthetic corpus, hidden %zu\n", kHidden);
  Trained trained = train_synthetic(synth, vocab);
  report(6, "end-to-end synthetic", [&] { return end_to_end(synth, vocab, trained, synth_seconds); });

  std::vector<TurnPrediction> test;
  std::vector<Metrics> runs;
  for (const EpochLog& l : trained.result.epochs) runs.push_back({l.dev_joint_acc, l.dev_goal_acc});
  if (trained.model) {
    test = predict_corpus(*trained.model, synth.test.corpus);
    runs.push_back(compute_metrics(test));
  }
  auto needs_model = [&](const std::function<Outcome()>& check) {
    return [&, check]() -> Outcome {
      if (!trained.model) return {false, "no trained model: " + trained.error};
      return check();
    };
  };
  report(7, "overlapping-slot discrimination",
         needs_model([&] { return overlap_discrimination(synth, test); }));
  report(8, "cross-turn dependency", needs_model([&] { return cross_turn(synth, test); }));
  report(9, "distributed-copy routing", needs_model([&] { return routing(synth, *trained.model); }));
  report(10, "metric oracle", [&] { return metric_oracle(runs); });
  report(11, "round-trips", [&] {
    return round_trips(synth, trained.model ? &*trained.model : nullptr);
  });

  std::printf("%s: %d of 11 criteria failed\n", g_failures == 0 ? "ACCEPTED" : "REJECTED",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
