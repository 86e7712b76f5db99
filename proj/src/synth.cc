#include "pin/synth.h"

#include <algorithm>
#include <random>

#include "json.hpp"

namespace pin {

namespace {

struct SlotBank {
  std::string name;
  std::vector<std::string> values;
};

const std::vector<std::string> kDomainNames = {"restaurant", "hotel",  "attraction", "train",
                                               "taxi",       "museum", "cinema",     "bus"};

const std::vector<SlotBank>& shared_banks() {
  static const std::vector<SlotBank> banks = {
      {"area", {"north", "south", "east", "west", "centre", "riverside", "downtown", "uptown",
                "harbour", "suburbs"}},
      {"pricerange", {"cheap", "moderate", "expensive", "budget", "luxury", "affordable",
                      "premium", "midrange", "pricey", "economical"}},
      {"day", {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
               "weekend"}},
      {"people", {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine"}},
  };
  return banks;
}

// Domain-specific slots are handed out in order, so no two domains share one.
const std::vector<SlotBank>& specific_banks() {
  static const std::vector<SlotBank> banks = {
      {"food", {"european", "italian", "chinese", "indian", "british", "french", "thai",
                "korean", "turkish", "spanish"}},
      {"name", {"curry garden", "golden wok", "royal spice", "river bar", "lucky dragon",
                "blue lagoon", "old mill", "grand cafe", "little rose", "silver fork"}},
      {"stars", {"1", "2", "3", "4", "5", "6", "7", "8", "9"}},
      {"type", {"guesthouse", "lodge", "hostel", "inn", "resort", "motel", "cottage", "villa",
                "chalet", "cabin"}},
      {"parking", {"free", "paid", "valet", "street", "garage", "permit", "covered", "open"}},
      {"destination", {"cambridge", "london", "oxford", "norwich", "ely", "leicester", "bristol",
                       "stevenage"}},
      {"departure", {"kings lynn", "bishops stortford", "peterborough station",
                     "stansted airport", "broxbourne", "birmingham", "luton", "harlow"}},
      {"style", {"modern", "gothic", "classic", "baroque", "rustic", "minimal", "colonial",
                 "tudor"}},
  };
  return banks;
}

struct DomainSpec {
  std::string name;
  std::vector<SlotBank> slots;  // shared slots first
};

std::vector<DomainSpec> build_domains(const SynthConfig& cfg) {
  std::vector<DomainSpec> domains;
  std::size_t next_specific = 0;
  for (int d = 0; d < cfg.n_domains; ++d) {
    DomainSpec spec;
    spec.name = static_cast<std::size_t>(d) < kDomainNames.size()
                    ? kDomainNames[static_cast<std::size_t>(d)]
                    : "domain" + std::to_string(d);
    for (int s = 0; s < cfg.slots_per_domain; ++s) {
      SlotBank bank;
      if (s < cfg.overlap_slot_count) {
        const auto idx = static_cast<std::size_t>(s);
        bank = idx < shared_banks().size() ? shared_banks()[idx]
                                           : SlotBank{"shared" + std::to_string(s), {}};
      } else {
        bank = next_specific < specific_banks().size()
                   ? specific_banks()[next_specific]
                   : SlotBank{"slot" + std::to_string(next_specific), {}};
        ++next_specific;
      }
      const auto want = static_cast<std::size_t>(cfg.values_per_slot);
      if (bank.values.size() > want) bank.values.resize(want);
      for (std::size_t v = bank.values.size(); v < want; ++v)
        bank.values.push_back(bank.name + "val" + std::to_string(v));
      spec.slots.push_back(std::move(bank));
    }
    domains.push_back(std::move(spec));
  }
  return domains;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

const std::string& choose(std::mt19937_64& rng, const std::vector<std::string>& options) {
  return options[pick(rng, options.size())];
}

bool coin(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

// {D}, {S}, {V} placeholders.
std::string fill(std::string tmpl, const std::string& domain, const std::string& slot,
                 const std::string& value) {
  auto replace_all = [&](const std::string& key, const std::string& with) {
    for (std::size_t pos = tmpl.find(key); pos != std::string::npos;
         pos = tmpl.find(key, pos + with.size()))
      tmpl.replace(pos, key.size(), with);
  };
  replace_all("{D}", domain);
  replace_all("{S}", slot);
  replace_all("{V}", value);
  return tmpl;
}

const std::vector<std::string> kOpeners = {"how can i help you ?", "what else can i do for you ?",
                                           "is there anything else ?",
                                           "what are you looking for ?"};
const std::vector<std::string> kAskSlot = {"which {S} do you want for the {D} ?",
                                           "do you have a {S} in mind for the {D} ?",
                                           "what {S} should the {D} have ?"};
const std::vector<std::string> kAnswerSlot = {"{V} please .", "i would like {V} .",
                                              "{V} , thanks .", "i think {V} ."};
const std::vector<std::string> kStateSlot = {"i am looking for a {D} with {S} {V} .",
                                             "i need a {D} , the {S} should be {V} .",
                                             "find me a {D} where the {S} is {V} ."};
const std::vector<std::string> kOffer = {"i recommend {V} as the {S} for your {D} .",
                                         "how about {V} for the {S} of the {D} ?"};
const std::vector<std::string> kAcceptNow = {"sounds good .", "yes , that works .",
                                             "great , book it ."};
const std::vector<std::string> kSuggest = {"i can also suggest {V} as the {S} for your {D} .",
                                           "another option is {V} for the {S} of the {D} ."};
const std::vector<std::string> kDefer = {"let me think about it .",
                                         "maybe , i will decide later .",
                                         "hmm , not sure yet ."};
const std::vector<std::string> kAcceptLater = {
    "ok , i will take the {S} you suggested for the {D} .",
    "actually the {S} you mentioned for the {D} is fine ."};
const std::vector<std::string> kDontcare = {"i do not care about the {S} .",
                                            "any {S} is fine ."};
const std::vector<std::string> kCloseSystem = {"is there anything else ?",
                                               "can i help with anything else ?"};
const std::vector<std::string> kCloseUser = {"no , thank you . goodbye .",
                                             "that is all , thanks ."};

struct Goal {
  std::size_t domain;
  std::size_t slot;
  std::string value;  // "dontcare" for declined slots
  Provenance mode;
  bool dontcare = false;
};

struct PlannedTurn {
  std::string system;
  std::string user;
  std::vector<std::size_t> enters;  // goals entering the state this turn
};

Dialogue make_dialogue(const std::string& id, const SynthConfig& cfg,
                       const std::vector<DomainSpec>& domains, std::mt19937_64& rng,
                       std::vector<PlantedTriplet>& planted) {
  // Active domains and their goals.
  std::vector<std::size_t> active;
  if (domains.size() >= 2 && coin(rng, 0.5)) {
    std::size_t a = pick(rng, domains.size());
    std::size_t b = pick(rng, domains.size() - 1);
    if (b >= a) ++b;
    active = {a, b};
  } else {
    active = {pick(rng, domains.size())};
  }
  std::vector<Goal> goals;
  for (std::size_t d : active) {
    std::vector<std::size_t> slots(domains[d].slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    const std::size_t count = 1 + pick(rng, slots.size());
    for (std::size_t i = 0; i < count; ++i) {
      Goal g;
      g.domain = d;
      g.slot = slots[i];
      g.value = choose(rng, domains[d].slots[slots[i]].values);
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (u < cfg.system_provided_rate) {
        g.mode = Provenance::kSystemProvided;
      } else if (u < cfg.system_provided_rate + cfg.cross_turn_rate) {
        g.mode = Provenance::kCrossTurn;
      } else {
        g.mode = Provenance::kInTurn;
        if (coin(rng, cfg.dontcare_rate)) {
          g.dontcare = true;
          g.value = std::string(kDontcareValue);
        }
      }
      goals.push_back(std::move(g));
    }
  }
  std::shuffle(goals.begin(), goals.end(), rng);

  // Fit the turn budget: each goal takes one turn, cross-turn goals two.
  auto turns_needed = [&](std::size_t n) {
    std::size_t t = 0;
    for (std::size_t i = 0; i < n; ++i) t += goals[i].mode == Provenance::kCrossTurn ? 2 : 1;
    return t;
  };
  std::size_t n_goals = goals.size();
  while (n_goals > 1 && turns_needed(n_goals) > static_cast<std::size_t>(cfg.max_turns)) --n_goals;
  if (turns_needed(n_goals) > static_cast<std::size_t>(cfg.max_turns)) {
    goals[0].mode = Provenance::kInTurn;  // a single cross-turn goal in a 1-turn budget
  }
  goals.resize(n_goals);

  // Sequence of primary turns, then acceptance turns inserted after their
  // suggestion.
  struct Slot {
    std::size_t goal;
    bool acceptance;
  };
  std::vector<Slot> order;
  for (std::size_t i = 0; i < goals.size(); ++i) order.push_back({i, false});
  for (std::size_t i = 0; i < goals.size(); ++i) {
    if (goals[i].mode != Provenance::kCrossTurn) continue;
    std::size_t pos = 0;
    while (order[pos].goal != i || order[pos].acceptance) ++pos;
    const std::size_t lo = pos + 1;
    const std::size_t at = lo + pick(rng, order.size() - lo + 1);
    order.insert(order.begin() + static_cast<std::ptrdiff_t>(at), Slot{i, true});
  }

  std::vector<PlannedTurn> plan;
  std::vector<std::size_t> mention(goals.size(), 0);
  for (const Slot& s : order) {
    const Goal& g = goals[s.goal];
    const std::string& dn = domains[g.domain].name;
    const std::string& sn = domains[g.domain].slots[g.slot].name;
    PlannedTurn t;
    if (s.acceptance) {
      t.system = choose(rng, kOpeners);
      t.user = fill(choose(rng, kAcceptLater), dn, sn, g.value);
      t.enters.push_back(s.goal);
    } else if (g.mode == Provenance::kCrossTurn) {
      mention[s.goal] = plan.size();
      t.system = fill(choose(rng, kSuggest), dn, sn, g.value);
      t.user = choose(rng, kDefer);
    } else if (g.mode == Provenance::kSystemProvided) {
      mention[s.goal] = plan.size();
      t.system = fill(choose(rng, kOffer), dn, sn, g.value);
      t.user = choose(rng, kAcceptNow);
      t.enters.push_back(s.goal);
    } else {
      mention[s.goal] = plan.size();
      if (g.dontcare) {
        t.system = fill(choose(rng, kAskSlot), dn, sn, g.value);
        t.user = fill(choose(rng, kDontcare), dn, sn, g.value);
      } else if (coin(rng, 0.5)) {
        t.system = fill(choose(rng, kAskSlot), dn, sn, g.value);
        t.user = fill(choose(rng, kAnswerSlot), dn, sn, g.value);
      } else {
        t.system = choose(rng, kOpeners);
        t.user = fill(choose(rng, kStateSlot), dn, sn, g.value);
      }
      t.enters.push_back(s.goal);
    }
    plan.push_back(std::move(t));
  }
  if (plan.size() < static_cast<std::size_t>(cfg.max_turns) && coin(rng, 0.3)) {
    plan.push_back({choose(rng, kCloseSystem), choose(rng, kCloseUser), {}});
  }

  Dialogue dialogue;
  dialogue.id = id;
  BeliefState state;
  for (std::size_t ti = 0; ti < plan.size(); ++ti) {
    Turn turn;
    turn.system = tokenize(plan[ti].system);
    turn.user = tokenize(plan[ti].user);
    for (std::size_t gi : plan[ti].enters) {
      const Goal& g = goals[gi];
      SlotKey key{domains[g.domain].name, domains[g.domain].slots[g.slot].name};
      Tokens value = tokenize(g.value);
      state[key] = value;
      if (!g.dontcare) {
        planted.push_back({id, ti, mention[gi], key, value, g.mode});
      }
    }
    turn.state = state;
    dialogue.turns.push_back(std::move(turn));
  }
  return dialogue;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_domains < 1 || slots_per_domain < 1 || values_per_slot < 1 || n_dialogues < 1 ||
      n_dev < 1 || n_test < 1 || max_turns < 1) {
    throw ConfigError("synthetic corpus counts must be >= 1");
  }
  if (overlap_slot_count < 0) throw ConfigError("overlap_slot_count must be >= 0");
  if (overlap_slot_count > slots_per_domain) {
    throw ConfigError("overlap_slot_count (" + std::to_string(overlap_slot_count) +
                      ") exceeds slots_per_domain (" + std::to_string(slots_per_domain) + ")");
  }
  for (double r : {cross_turn_rate, system_provided_rate, dontcare_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("synthetic corpus rates must be in [0, 1]");
  }
  if (cross_turn_rate + system_provided_rate > 1.0) {
    throw ConfigError("cross_turn_rate + system_provided_rate exceeds 1");
  }
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kInTurn: return "in-turn";
    case Provenance::kCrossTurn: return "cross-turn";
    case Provenance::kSystemProvided: return "system-provided";
  }
  return "in-turn";
}

Provenance provenance_from_name(std::string_view name) {
  if (name == "in-turn") return Provenance::kInTurn;
  if (name == "cross-turn") return Provenance::kCrossTurn;
  if (name == "system-provided") return Provenance::kSystemProvided;
  throw SchemaError("unknown provenance label '" + std::string(name) + "'");
}

SynthCorpus synth_corpus(const SynthConfig& config) {
  config.validate();
  const std::vector<DomainSpec> domains = build_domains(config);
  std::vector<SlotKey> pairs;
  for (const auto& d : domains)
    for (const auto& s : d.slots) pairs.push_back({d.name, s.name});
  const Ontology ontology(pairs);

  std::mt19937_64 rng(config.seed);
  auto make_split = [&](const std::string& prefix, int count) {
    SynthSplit split;
    split.corpus.ontology = ontology;
    for (int i = 0; i < count; ++i) {
      const std::string id = prefix + "-" + std::to_string(i);
      split.corpus.dialogues.push_back(
          make_dialogue(id, config, domains, rng, split.planted));
    }
    return split;
  };
  SynthCorpus out;
  out.train = make_split("train", config.n_dialogues);
  out.dev = make_split("dev", config.n_dev);
  out.test = make_split("test", config.n_test);
  return out;
}

std::string provenance_to_json(const SynthCorpus& corpus) {
  nlohmann::ordered_json root;
  auto dump = [](const SynthSplit& split) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : split.planted) {
      nlohmann::ordered_json r;
      r["dialogue"] = p.dialogue_id;
      r["turn"] = p.turn;
      r["mention_turn"] = p.mention_turn;
      r["domain"] = p.key.domain;
      r["slot"] = p.key.slot;
      r["value"] = join_tokens(p.value);
      r["label"] = std::string(provenance_name(p.label));
      arr.push_back(std::move(r));
    }
    return arr;
  };
  root["train"] = dump(corpus.train);
  root["dev"] = dump(corpus.dev);
  root["test"] = dump(corpus.test);
  return root.dump(1) + "\n";
}

std::vector<PlantedTriplet> provenance_from_json(std::string_view text, std::string_view split) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("provenance sidecar: ") + e.what());
  }
  auto it = root.find(std::string(split));
  if (it == root.end() || !it->is_array()) {
    throw SchemaError("provenance sidecar has no split '" + std::string(split) + "'");
  }
  std::vector<PlantedTriplet> out;
  for (const auto& r : *it) {
    PlantedTriplet p;
    p.dialogue_id = r.at("dialogue").get<std::string>();
    p.turn = r.at("turn").get<std::size_t>();
    p.mention_turn = r.at("mention_turn").get<std::size_t>();
    p.key = {r.at("domain").get<std::string>(), r.at("slot").get<std::string>()};
    p.value = tokenize(r.at("value").get<std::string>());
    p.label = provenance_from_name(r.at("label").get<std::string>());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pin
