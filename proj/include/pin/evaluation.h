#ifndef PIN_EVALUATION_H_
#define PIN_EVALUATION_H_

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pin/corpus.h"
#include "pin/model.h"
#include "pin/synth.h"

namespace pin {

struct TurnPrediction {
  std::string dialogue_id;
  std::size_t turn = 0;  // 0-based
  StateMap predicted;
  StateMap gold;
};

// Lowercase, trim, collapse runs of whitespace.
std::string normalize_value(std::string_view value);

// Fraction of turns whose every pair matches.
double joint_goal_accuracy(std::span<const TurnPrediction> predictions);
// Fraction of (turn, pair) entries that match, none-gold pairs included.
double goal_accuracy(std::span<const TurnPrediction> predictions);

// Predictions for every turn of every dialogue.
template <typename T>
std::vector<TurnPrediction> predict_corpus(PinModel<T>& model, const Corpus& corpus);

struct Metrics {
  double joint_goal = 0.0;
  double goal = 0.0;
};
Metrics compute_metrics(std::span<const TurnPrediction> predictions);

// Shared slot name and the domains whose copies are compared.
struct OverlapGroup {
  std::string slot;
  std::vector<std::string> domains;
};
using OverlapSpec = std::vector<OverlapGroup>;

// "area:restaurant,hotel;pricerange:restaurant,hotel".
OverlapSpec parse_overlap_spec(std::string_view text);
// Every slot name that occurs in more than one domain.
OverlapSpec overlap_groups(const Ontology& ontology);

struct SlotAccuracy {
  SlotKey key;
  std::size_t support = 0;  // turns with gold != none
  std::size_t correct = 0;
  double accuracy() const { return support == 0 ? 0.0 : double(correct) / double(support); }
};

// Accuracy of every ontology pair over the turns where its gold value is set.
std::vector<SlotAccuracy> per_slot_accuracy(std::span<const TurnPrediction> predictions,
                                            const Ontology& ontology);

struct SlotReportGroup {
  std::string slot;
  std::vector<SlotAccuracy> rows;  // one per domain of the group
};

struct SlotReport {
  std::vector<SlotReportGroup> groups;
  std::string to_text() const;
  std::string to_json() const;
};

// Throws ConfigError when the spec names a pair the ontology lacks.
SlotReport slot_report(std::span<const TurnPrediction> predictions, const OverlapSpec& spec,
                       const Ontology& ontology);

// Count of (turn, pair B) entries where the prediction for B is wrong and
// equals the gold value of another domain's copy A of the same slot name
// (A's gold not none), over all entries of overlapping pairs with gold set.
struct CrossAssignment {
  std::size_t errors = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : double(errors) / double(total); }
};
CrossAssignment cross_assignment(std::span<const TurnPrediction> predictions,
                                 const Ontology& ontology);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : double(correct) / double(total); }
};

// Value accuracy of planted triplets with the given label, at the turn where
// each enters the gold state.
Tally provenance_accuracy(std::span<const TurnPrediction> predictions,
                          std::span<const PlantedTriplet> planted, Provenance label);

struct PositionWeight {
  std::size_t turn = 0;  // 0-based
  std::string speaker;   // "system" or "user"
  std::string token;
  double weight = 0.0;
};

struct TokenProb {
  std::string token;
  double prob = 0.0;
};

struct InspectStep {
  std::size_t t = 0;
  std::string emitted;
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<TokenProb> top_vocab, top_sys, top_usr, top_final;
  std::vector<PositionWeight> positions;  // system positions then user positions
};

struct InspectRecord {
  std::string dialogue_id;
  std::size_t turn = 0;
  SlotKey key;
  std::array<double, kGateClasses> gate{};
  std::string value;
  bool truncated = false;
  std::vector<InspectStep> steps;

  std::string to_json() const;
};

// Decodes one pair after `turn` (0-based) and records every step.
template <typename T>
InspectRecord inspect_copy(PinModel<T>& model, const Dialogue& dialogue, std::size_t turn,
                           const SlotKey& key, std::size_t top_k = 5);

// Where the value of a planted triplet was visible up to its entry turn.
enum class ValueSource { kUserOnly, kSystemOnly, kBoth, kNeither };
ValueSource value_source(const Dialogue& dialogue, std::size_t turn, const Tokens& value);

// Share of user-only values emitted with 1 - beta > 0.5, and of system-only
// values emitted with beta > 0.5, at the step that emits the first value
// token. Only triplets whose first emitted token is correct are counted.
struct RoutingStats {
  Tally user_only;
  Tally system_only;
};
template <typename T>
RoutingStats copy_routing(PinModel<T>& model, const Corpus& corpus,
                          std::span<const PlantedTriplet> planted);

}  // namespace pin

#endif  // PIN_EVALUATION_H_
