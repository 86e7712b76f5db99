#include "pin/evaluation.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace pin {

using nlohmann::ordered_json;

std::string normalize_value(std::string_view value) {
  std::string out;
  bool pending_space = false;
  for (char ch : value) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

namespace {

bool value_matches(const StateMap& predicted, const SlotKey& key, const std::string& gold) {
  auto it = predicted.find(key);
  const std::string pred = it == predicted.end() ? std::string(kNoneValue) : it->second;
  return normalize_value(pred) == normalize_value(gold);
}

void require_nonempty(std::span<const TurnPrediction> predictions, const char* what) {
  if (predictions.empty()) throw ContractError(std::string(what) + ": no predictions");
}

}  // namespace

double joint_goal_accuracy(std::span<const TurnPrediction> predictions) {
  require_nonempty(predictions, "joint_goal_accuracy");
  std::size_t correct = 0;
  for (const TurnPrediction& p : predictions) {
    bool all = true;
    for (const auto& [key, gold] : p.gold) all = all && value_matches(p.predicted, key, gold);
    if (all) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double goal_accuracy(std::span<const TurnPrediction> predictions) {
  require_nonempty(predictions, "goal_accuracy");
  std::size_t correct = 0, total = 0;
  for (const TurnPrediction& p : predictions) {
    for (const auto& [key, gold] : p.gold) {
      ++total;
      if (value_matches(p.predicted, key, gold)) ++correct;
    }
  }
  if (total == 0) throw ContractError("goal_accuracy: predictions cover no pairs");
  return static_cast<double>(correct) / static_cast<double>(total);
}

Metrics compute_metrics(std::span<const TurnPrediction> predictions) {
  return {joint_goal_accuracy(predictions), goal_accuracy(predictions)};
}

template <typename T>
std::vector<TurnPrediction> predict_corpus(PinModel<T>& model, const Corpus& corpus) {
  std::vector<TurnPrediction> out;
  for (const Dialogue& d : corpus.dialogues) {
    std::vector<StateMap> states = model.predict_dialogue(d);
    for (std::size_t l = 0; l < d.turns.size(); ++l) {
      out.push_back({d.id, l, std::move(states[l]), gold_state(model.ontology(), d.turns[l].state)});
    }
  }
  return out;
}

OverlapSpec parse_overlap_spec(std::string_view text) {
  OverlapSpec spec;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(';', pos), text.size());
    std::string_view group = text.substr(pos, end - pos);
    pos = end + 1;
    if (group.empty()) continue;
    const std::size_t colon = group.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw ConfigError("overlap spec group '" + std::string(group) +
                        "' must look like slot:domain,domain");
    }
    OverlapGroup g{std::string(group.substr(0, colon)), {}};
    std::string_view domains = group.substr(colon + 1);
    std::size_t dpos = 0;
    while (dpos <= domains.size()) {
      const std::size_t dend = std::min(domains.find(',', dpos), domains.size());
      if (dend > dpos) g.domains.emplace_back(domains.substr(dpos, dend - dpos));
      dpos = dend + 1;
    }
    if (g.domains.empty()) throw ConfigError("overlap spec group '" + g.slot + "' lists no domains");
    spec.push_back(std::move(g));
  }
  if (spec.empty()) throw ConfigError("overlap spec is empty");
  return spec;
}

OverlapSpec overlap_groups(const Ontology& ontology) {
  OverlapSpec spec;
  for (const std::string& slot : ontology.slot_names()) {
    OverlapGroup g{slot, {}};
    for (const SlotKey& k : ontology.pairs())
      if (k.slot == slot) g.domains.push_back(k.domain);
    if (g.domains.size() > 1) spec.push_back(std::move(g));
  }
  return spec;
}

std::vector<SlotAccuracy> per_slot_accuracy(std::span<const TurnPrediction> predictions,
                                            const Ontology& ontology) {
  std::vector<SlotAccuracy> out;
  for (const SlotKey& key : ontology.pairs()) {
    SlotAccuracy acc{key, 0, 0};
    for (const TurnPrediction& p : predictions) {
      auto it = p.gold.find(key);
      if (it == p.gold.end() || normalize_value(it->second) == kNoneValue) continue;
      ++acc.support;
      if (value_matches(p.predicted, key, it->second)) ++acc.correct;
    }
    out.push_back(acc);
  }
  return out;
}

SlotReport slot_report(std::span<const TurnPrediction> predictions, const OverlapSpec& spec,
                       const Ontology& ontology) {
  for (const OverlapGroup& g : spec) {
    for (const std::string& domain : g.domains) {
      if (!ontology.contains({domain, g.slot})) {
        throw ConfigError("overlap spec names " + domain + "-" + g.slot +
                          ", which is not in the ontology");
      }
    }
  }
  std::vector<SlotAccuracy> all = per_slot_accuracy(predictions, ontology);
  SlotReport report;
  for (const OverlapGroup& g : spec) {
    SlotReportGroup group{g.slot, {}};
    for (const std::string& domain : g.domains) {
      group.rows.push_back(all[*ontology.find({domain, g.slot})]);
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

std::string SlotReport::to_text() const {
  std::size_t width = 4;
  for (const auto& g : groups)
    for (const auto& r : g.rows) width = std::max(width, r.key.str().size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %8s\n", static_cast<int>(width), "slot", "acc",
                "support");
  out << line;
  for (const auto& g : groups) {
    for (const auto& r : g.rows) {
      std::snprintf(line, sizeof line, "%-*s %8.1f %8zu\n", static_cast<int>(width),
                    r.key.str().c_str(), 100.0 * r.accuracy(), r.support);
      out << line;
    }
  }
  return out.str();
}

std::string SlotReport::to_json() const {
  ordered_json j = ordered_json::array();
  for (const auto& g : groups) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : g.rows) {
      rows.push_back({{"domain", r.key.domain},
                      {"accuracy", r.accuracy()},
                      {"correct", r.correct},
                      {"support", r.support}});
    }
    j.push_back({{"slot", g.slot}, {"rows", rows}});
  }
  return j.dump();
}

CrossAssignment cross_assignment(std::span<const TurnPrediction> predictions,
                                 const Ontology& ontology) {
  CrossAssignment out;
  OverlapSpec groups = overlap_groups(ontology);
  for (const TurnPrediction& p : predictions) {
    for (const OverlapGroup& g : groups) {
      for (const std::string& domain_b : g.domains) {
        const SlotKey b{domain_b, g.slot};
        auto gold_b = p.gold.find(b);
        if (gold_b == p.gold.end() || normalize_value(gold_b->second) == kNoneValue) continue;
        ++out.total;
        if (value_matches(p.predicted, b, gold_b->second)) continue;
        auto pred_b = p.predicted.find(b);
        if (pred_b == p.predicted.end()) continue;
        const std::string predicted = normalize_value(pred_b->second);
        for (const std::string& domain_a : g.domains) {
          if (domain_a == domain_b) continue;
          auto gold_a = p.gold.find({domain_a, g.slot});
          if (gold_a == p.gold.end()) continue;
          const std::string ga = normalize_value(gold_a->second);
          if (ga != kNoneValue && ga == predicted) {
            ++out.errors;
            break;
          }
        }
      }
    }
  }
  return out;
}

Tally provenance_accuracy(std::span<const TurnPrediction> predictions,
                          std::span<const PlantedTriplet> planted, Provenance label) {
  std::map<std::pair<std::string, std::size_t>, const TurnPrediction*> index;
  for (const TurnPrediction& p : predictions) index[{p.dialogue_id, p.turn}] = &p;
  Tally t;
  for (const PlantedTriplet& trip : planted) {
    if (trip.label != label) continue;
    auto it = index.find({trip.dialogue_id, trip.turn});
    if (it == index.end()) {
      throw ContractError("no prediction for " + trip.dialogue_id + " turn " +
                          std::to_string(trip.turn));
    }
    ++t.total;
    if (value_matches(it->second->predicted, trip.key, join_tokens(trip.value))) ++t.correct;
  }
  return t;
}

namespace {

std::vector<TokenProb> top_k(const std::vector<double>& probs, const Vocabulary& vocab,
                             std::size_t k) {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
                    });
  std::vector<TokenProb> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back({vocab.token(static_cast<int>(idx[i])), probs[idx[i]]});
  return out;
}

ordered_json probs_json(const std::vector<TokenProb>& v) {
  ordered_json j = ordered_json::array();
  for (const auto& tp : v) j.push_back({{"token", tp.token}, {"prob", tp.prob}});
  return j;
}

bool contains_sequence(const Tokens& haystack, const Tokens& needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

std::string InspectRecord::to_json() const {
  ordered_json j;
  j["dialogue"] = dialogue_id;
  j["turn"] = turn;
  j["domain"] = key.domain;
  j["slot"] = key.slot;
  j["gate"] = {{"none", gate[0]}, {"dontcare", gate[1]}, {"gen", gate[2]}};
  j["value"] = value;
  j["truncated"] = truncated;
  ordered_json steps_json = ordered_json::array();
  for (const InspectStep& s : steps) {
    ordered_json positions = ordered_json::array();
    for (const PositionWeight& p : s.positions) {
      positions.push_back(
          {{"turn", p.turn}, {"speaker", p.speaker}, {"token", p.token}, {"weight", p.weight}});
    }
    steps_json.push_back({{"t", s.t},
                          {"emitted", s.emitted},
                          {"alpha", s.alpha},
                          {"beta", s.beta},
                          {"top_vocab", probs_json(s.top_vocab)},
                          {"top_system", probs_json(s.top_sys)},
                          {"top_user", probs_json(s.top_usr)},
                          {"top_final", probs_json(s.top_final)},
                          {"positions", positions}});
  }
  j["steps"] = steps_json;
  return j.dump(2);
}

template <typename T>
InspectRecord inspect_copy(PinModel<T>& model, const Dialogue& dialogue, std::size_t turn,
                           const SlotKey& key, std::size_t top_k_count) {
  if (turn >= dialogue.turns.size()) {
    throw IndexError("inspect: turn " + std::to_string(turn) + " out of range for dialogue '" +
                     dialogue.id + "' with " + std::to_string(dialogue.turns.size()) + " turns");
  }
  auto pair = model.ontology().find(key);
  if (!pair) throw ConfigError("inspect: " + key.str() + " is not in the ontology");

  ad::Tape<T> tape(false);
  auto w = model.bind(tape);
  EncoderOutput<T> enc = model.encode(tape, w, dialogue, turn + 1);
  const int domain = model.pair_domains()[*pair];
  const int slot = model.pair_slot_names()[*pair];
  std::vector<SlotDecode> dec =
      generate_values(enc, w.generator, std::span<const int>(&domain, 1),
                      std::span<const int>(&slot, 1), model.config().max_decode_len, true);
  const SlotDecode& d = dec[0];

  // Token and turn of every history position.
  std::vector<PositionWeight> layout;
  for (std::size_t l = 0; l <= turn; ++l)
    for (const std::string& tok : dialogue.turns[l].system) layout.push_back({l, "system", tok, 0});
  const std::size_t n_sys = layout.size();
  for (std::size_t l = 0; l <= turn; ++l)
    for (const std::string& tok : dialogue.turns[l].user) layout.push_back({l, "user", tok, 0});

  InspectRecord rec;
  rec.dialogue_id = dialogue.id;
  rec.turn = turn;
  rec.key = key;
  rec.gate = d.gate;
  rec.truncated = d.truncated;
  Tokens words;
  for (int id : d.tokens) words.push_back(model.vocab().token(id));
  rec.value = resolve_state(d.gate, words);
  for (const DecodeStepTrace& tr : d.trace) {
    InspectStep s;
    s.t = tr.t;
    s.emitted = model.vocab().token(tr.emitted);
    s.alpha = tr.alpha;
    s.beta = tr.beta;
    s.top_vocab = top_k(tr.p_vocab, model.vocab(), top_k_count);
    s.top_sys = top_k(tr.p_sys, model.vocab(), top_k_count);
    s.top_usr = top_k(tr.p_usr, model.vocab(), top_k_count);
    s.top_final = top_k(tr.p_final, model.vocab(), top_k_count);
    if (tr.q_sys.size() + tr.q_usr.size() != layout.size()) {
      throw ContractError("inspect: attention length does not match the history length");
    }
    s.positions = layout;
    for (std::size_t i = 0; i < tr.q_sys.size(); ++i) s.positions[i].weight = tr.q_sys[i];
    for (std::size_t i = 0; i < tr.q_usr.size(); ++i) s.positions[n_sys + i].weight = tr.q_usr[i];
    rec.steps.push_back(std::move(s));
  }
  return rec;
}

ValueSource value_source(const Dialogue& dialogue, std::size_t turn, const Tokens& value) {
  bool in_sys = false, in_usr = false;
  for (std::size_t l = 0; l <= turn && l < dialogue.turns.size(); ++l) {
    in_sys = in_sys || contains_sequence(dialogue.turns[l].system, value);
    in_usr = in_usr || contains_sequence(dialogue.turns[l].user, value);
  }
  if (in_sys && in_usr) return ValueSource::kBoth;
  if (in_usr) return ValueSource::kUserOnly;
  if (in_sys) return ValueSource::kSystemOnly;
  return ValueSource::kNeither;
}

template <typename T>
RoutingStats copy_routing(PinModel<T>& model, const Corpus& corpus,
                          std::span<const PlantedTriplet> planted) {
  RoutingStats out;
  for (const PlantedTriplet& trip : planted) {
    const Dialogue* d = corpus.find(trip.dialogue_id);
    if (d == nullptr) throw ContractError("copy_routing: unknown dialogue " + trip.dialogue_id);
    const ValueSource src = value_source(*d, trip.turn, trip.value);
    if (src != ValueSource::kUserOnly && src != ValueSource::kSystemOnly) continue;
    InspectRecord rec = inspect_copy(model, *d, trip.turn, trip.key, 1);
    if (rec.steps.empty() || rec.steps[0].emitted != trip.value.front()) continue;
    const double beta = rec.steps[0].beta;
    if (src == ValueSource::kUserOnly) {
      ++out.user_only.total;
      if (1.0 - beta > 0.5) ++out.user_only.correct;
    } else {
      ++out.system_only.total;
      if (beta > 0.5) ++out.system_only.correct;
    }
  }
  return out;
}

template std::vector<TurnPrediction> predict_corpus(PinModel<float>&, const Corpus&);
template std::vector<TurnPrediction> predict_corpus(PinModel<double>&, const Corpus&);
template InspectRecord inspect_copy(PinModel<float>&, const Dialogue&, std::size_t,
                                    const SlotKey&, std::size_t);
template InspectRecord inspect_copy(PinModel<double>&, const Dialogue&, std::size_t,
                                    const SlotKey&, std::size_t);
template RoutingStats copy_routing(PinModel<float>&, const Corpus&,
                                   std::span<const PlantedTriplet>);
template RoutingStats copy_routing(PinModel<double>&, const Corpus&,
                                   std::span<const PlantedTriplet>);

}  // namespace pin
