#ifndef PIN_SYNTH_H_
#define PIN_SYNTH_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pin/corpus.h"

namespace pin {

struct SynthConfig {
  int n_domains = 2;
  int slots_per_domain = 4;
  // Slot names (with their value pools) shared by every domain.
  int overlap_slot_count = 2;
  int values_per_slot = 8;
  int n_dialogues = 500;  // training split
  int n_dev = 100;
  int n_test = 100;
  int max_turns = 6;
  double cross_turn_rate = 0.2;
  double system_provided_rate = 0.15;
  // Fraction of slots the user explicitly declines to constrain.
  double dontcare_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// How a planted value reaches the dialogue.
enum class Provenance {
  kInTurn,          // user states it in the turn the slot is raised
  kCrossTurn,       // system suggests it; user accepts in a later turn
  kSystemProvided,  // system offers it; user accepts in the same turn
};

std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);

struct PlantedTriplet {
  std::string dialogue_id;
  std::size_t turn = 0;          // 0-based turn where it enters the gold state
  std::size_t mention_turn = 0;  // 0-based turn whose utterance carries the value
  SlotKey key;
  Tokens value;
  Provenance label = Provenance::kInTurn;

  bool operator==(const PlantedTriplet&) const = default;
};

struct SynthSplit {
  Corpus corpus;
  std::vector<PlantedTriplet> planted;
};

struct SynthCorpus {
  SynthSplit train;
  SynthSplit dev;
  SynthSplit test;
};

// Template dialogues; a pure function of the config (including its seed).
SynthCorpus synth_corpus(const SynthConfig& config);

// Sidecar: {"train": [...], "dev": [...], "test": [...]} with one record per
// planted triplet.
std::string provenance_to_json(const SynthCorpus& corpus);
std::vector<PlantedTriplet> provenance_from_json(std::string_view text, std::string_view split);

}  // namespace pin

#endif  // PIN_SYNTH_H_
