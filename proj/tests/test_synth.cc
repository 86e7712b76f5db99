#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "pin/synth.h"

using namespace pin;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_dialogues = 80;
  c.n_dev = 20;
  c.n_test = 20;
  return c;
}

bool contains_run(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

// Turn (0-based) at which each pair's current value first appears in the
// cumulative gold state, tracked through value changes.
std::vector<std::map<SlotKey, std::size_t>> entry_turns(const Dialogue& d) {
  std::vector<std::map<SlotKey, std::size_t>> out(d.turns.size());
  std::map<SlotKey, std::pair<Tokens, std::size_t>> current;
  for (std::size_t l = 0; l < d.turns.size(); ++l) {
    for (const auto& [key, value] : d.turns[l].state) {
      auto it = current.find(key);
      if (it == current.end() || it->second.first != value) current[key] = {value, l};
      out[l][key] = current[key].second;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("default configuration") {
  SynthConfig c;
  CHECK(c.n_domains == 2);
  CHECK(c.slots_per_domain == 4);
  CHECK(c.overlap_slot_count == 2);
  CHECK(c.n_dialogues == 500);
  CHECK(c.n_dev == 100);
  CHECK(c.n_test == 100);
}

TEST_CASE("generation is a pure function of the seed") {
  SynthConfig c = small_config();
  SynthCorpus a = synth_corpus(c);
  SynthCorpus b = synth_corpus(c);
  CHECK(corpus_to_json(a.train.corpus) == corpus_to_json(b.train.corpus));
  CHECK(corpus_to_json(a.dev.corpus) == corpus_to_json(b.dev.corpus));
  CHECK(corpus_to_json(a.test.corpus) == corpus_to_json(b.test.corpus));
  CHECK(provenance_to_json(a) == provenance_to_json(b));
  c.seed = 2;
  CHECK(corpus_to_json(synth_corpus(c).train.corpus) != corpus_to_json(a.train.corpus));
}

TEST_CASE("split sizes and ontology shape") {
  SynthCorpus s = synth_corpus(small_config());
  CHECK(s.train.corpus.dialogues.size() == 80);
  CHECK(s.dev.corpus.dialogues.size() == 20);
  CHECK(s.test.corpus.dialogues.size() == 20);
  const Ontology& o = s.train.corpus.ontology;
  CHECK(o.size() == 8);
  CHECK(o.domains().size() == 2);
  // Two shared names plus two private names per domain.
  CHECK(o.slot_names().size() == 6);
  std::map<std::string, int> name_count;
  for (const SlotKey& k : o.pairs()) ++name_count[k.slot];
  int shared = 0;
  for (const auto& [_, n] : name_count) shared += n == 2 ? 1 : 0;
  CHECK(shared == 2);
  std::set<std::string> ids;
  for (const SynthSplit* split : {&s.train, &s.dev, &s.test})
    for (const Dialogue& d : split->corpus.dialogues) CHECK(ids.insert(d.id).second);
}

TEST_CASE("overlapping slots share their value pools") {
  SynthConfig c = small_config();
  c.n_dialogues = 300;
  SynthCorpus s = synth_corpus(c);
  std::map<SlotKey, std::set<Tokens>> seen;
  for (const Dialogue& d : s.train.corpus.dialogues)
    for (const Turn& t : d.turns)
      for (const auto& [key, value] : t.state) seen[key].insert(value);
  const Ontology& o = s.train.corpus.ontology;
  for (const SlotKey& a : o.pairs())
    for (const SlotKey& b : o.pairs())
      if (a.domain < b.domain && a.slot == b.slot) CHECK(seen[a] == seen[b]);
}

TEST_CASE("gold states are cumulative") {
  SynthCorpus s = synth_corpus(small_config());
  for (const Dialogue& d : s.train.corpus.dialogues)
    for (std::size_t l = 1; l < d.turns.size(); ++l)
      for (const auto& [key, _] : d.turns[l - 1].state) CHECK(d.turns[l].state.count(key) == 1);
}

TEST_CASE("every gold value is recoverable from the history by exact match") {
  SynthCorpus s = synth_corpus(SynthConfig{});
  std::size_t checked = 0;
  for (const SynthSplit* split : {&s.train, &s.dev, &s.test}) {
    for (const Dialogue& d : split->corpus.dialogues) {
      auto entries = entry_turns(d);
      for (std::size_t l = 0; l < d.turns.size(); ++l) {
        for (const auto& [key, value] : d.turns[l].state) {
          if (value == Tokens{std::string(kDontcareValue)}) continue;
          bool found = false;
          for (std::size_t k = 0; k <= entries[l].at(key) && !found; ++k) {
            found = contains_run(d.turns[k].system, value) || contains_run(d.turns[k].user, value);
          }
          CAPTURE(d.id);
          CAPTURE(key.str());
          CHECK(found);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("without cross-turn or system values every value is in the user's entry turn") {
  SynthConfig c = small_config();
  c.cross_turn_rate = 0.0;
  c.system_provided_rate = 0.0;
  SynthCorpus s = synth_corpus(c);
  for (const Dialogue& d : s.train.corpus.dialogues) {
    auto entries = entry_turns(d);
    for (std::size_t l = 0; l < d.turns.size(); ++l)
      for (const auto& [key, value] : d.turns[l].state) {
        if (value == Tokens{std::string(kDontcareValue)}) continue;
        CHECK(contains_run(d.turns[entries[l].at(key)].user, value));
      }
  }
  for (const PlantedTriplet& p : s.train.planted) CHECK(p.label == Provenance::kInTurn);
}

TEST_CASE("provenance labels agree with a rescan of the utterances") {
  SynthCorpus s = synth_corpus(SynthConfig{});
  std::map<Provenance, std::size_t> counts;
  for (const SynthSplit* split : {&s.train, &s.dev, &s.test}) {
    for (const PlantedTriplet& p : split->planted) {
      const Dialogue* d = split->corpus.find(p.dialogue_id);
      REQUIRE(d != nullptr);
      const Turn& entry = d->turns.at(p.turn);
      const Turn& mention = d->turns.at(p.mention_turn);
      CHECK(entry.state.at(p.key) == p.value);
      if (p.turn > 0) {
        auto prev = d->turns[p.turn - 1].state.find(p.key);
        CHECK((prev == d->turns[p.turn - 1].state.end() || prev->second != p.value));
      }
      ++counts[p.label];
      switch (p.label) {
        case Provenance::kInTurn:
          CHECK(p.mention_turn == p.turn);
          CHECK(contains_run(entry.user, p.value));
          break;
        case Provenance::kCrossTurn:
          CHECK(p.mention_turn < p.turn);
          CHECK(contains_run(mention.system, p.value));
          CHECK_FALSE(contains_run(entry.user, p.value));
          break;
        case Provenance::kSystemProvided:
          CHECK(p.mention_turn == p.turn);
          CHECK(contains_run(entry.system, p.value));
          CHECK_FALSE(contains_run(entry.user, p.value));
          break;
      }
    }
  }
  const double total = static_cast<double>(counts[Provenance::kInTurn] +
                                           counts[Provenance::kCrossTurn] +
                                           counts[Provenance::kSystemProvided]);
  CHECK(static_cast<double>(counts[Provenance::kCrossTurn]) / total ==
        doctest::Approx(0.2).epsilon(0.25));
  CHECK(static_cast<double>(counts[Provenance::kSystemProvided]) / total ==
        doctest::Approx(0.15).epsilon(0.25));
}

TEST_CASE("provenance sidecar round-trip") {
  SynthCorpus s = synth_corpus(small_config());
  const std::string text = provenance_to_json(s);
  std::vector<PlantedTriplet> dev = provenance_from_json(text, "dev");
  REQUIRE(dev.size() == s.dev.planted.size());
  for (std::size_t i = 0; i < dev.size(); ++i) {
    CHECK(dev[i].dialogue_id == s.dev.planted[i].dialogue_id);
    CHECK(dev[i].turn == s.dev.planted[i].turn);
    CHECK(dev[i].mention_turn == s.dev.planted[i].mention_turn);
    CHECK(dev[i].key == s.dev.planted[i].key);
    CHECK(dev[i].value == s.dev.planted[i].value);
    CHECK(dev[i].label == s.dev.planted[i].label);
  }
  CHECK(provenance_from_name(provenance_name(Provenance::kCrossTurn)) == Provenance::kCrossTurn);
}

TEST_CASE("infeasible configurations are rejected") {
  SynthConfig c;
  c.overlap_slot_count = 5;
  CHECK_THROWS_AS(synth_corpus(c), ConfigError);
  c = SynthConfig{};
  c.n_dialogues = 0;
  CHECK_THROWS_AS(synth_corpus(c), ConfigError);
  c = SynthConfig{};
  c.cross_turn_rate = 0.7;
  c.system_provided_rate = 0.5;
  CHECK_THROWS_AS(synth_corpus(c), ConfigError);
  c = SynthConfig{};
  c.dontcare_rate = -0.1;
  CHECK_THROWS_AS(synth_corpus(c), ConfigError);
}
