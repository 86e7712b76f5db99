// Hand-written evaluation fixture and an independent recount, shared by the
// metric tests and the acceptance binary.
#ifndef PIN_TESTS_FIXTURES_H_
#define PIN_TESTS_FIXTURES_H_

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pin/evaluation.h"

namespace pin::testing {

inline const Ontology& fixture_ontology() {
  static const Ontology o({{"hotel", "area"},
                           {"hotel", "stars"},
                           {"restaurant", "area"},
                           {"restaurant", "food"}});
  return o;
}

inline TurnPrediction turn(std::string id, std::size_t t,
                           std::map<std::string, std::string> gold,
                           std::map<std::string, std::string> pred) {
  TurnPrediction p;
  p.dialogue_id = std::move(id);
  p.turn = t;
  for (const SlotKey& k : fixture_ontology().pairs()) {
    const std::string name = k.domain + "-" + k.slot;
    p.gold[k] = gold.count(name) ? gold[name] : "none";
    p.predicted[k] = pred.count(name) ? pred[name] : "none";
  }
  return p;
}

// Ten hand-written turns covering exact hits, case and spacing noise, swapped
// domains, spurious values and missed values.
inline std::vector<TurnPrediction> fixture() {
  return {
      turn("a", 0, {}, {}),
      turn("a", 1, {{"hotel-area", "north"}}, {{"hotel-area", "north"}}),
      turn("a", 2, {{"hotel-area", "north"}, {"restaurant-area", "south"}},
           {{"hotel-area", "north"}, {"restaurant-area", "north"}}),
      turn("b", 0, {{"restaurant-food", "curry garden"}}, {{"restaurant-food", "Curry  Garden"}}),
      turn("b", 1, {{"restaurant-food", "curry garden"}}, {{"restaurant-food", "curry"}}),
      turn("b", 2, {{"restaurant-food", "curry garden"}, {"hotel-stars", "4"}},
           {{"restaurant-food", "curry garden"}, {"hotel-stars", "4"}, {"hotel-area", "east"}}),
      turn("c", 0, {{"hotel-area", "dontcare"}}, {{"hotel-area", "dontcare"}}),
      turn("c", 1, {{"hotel-area", "dontcare"}, {"restaurant-area", "east"}},
           {{"hotel-area", "east"}, {"restaurant-area", "east"}}),
      turn("c", 2, {{"hotel-area", "west"}, {"restaurant-area", "west"}},
           {{"hotel-area", "west"}, {"restaurant-area", "west"}}),
      turn("c", 3, {{"hotel-area", "west"}, {"restaurant-area", "west"}}, {}),
  };
}

// Independent recount on the serialized turns: every prediction is flattened
// to "pair=value" strings and compared as sorted lists.
inline std::pair<double, double> recount(const std::vector<TurnPrediction>& preds) {
  auto clean = [](std::string s) {
    std::string out;
    for (char c : s) {
      if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
  };
  int joint = 0, slots = 0, total = 0;
  for (const TurnPrediction& p : preds) {
    std::vector<std::string> g, q;
    for (const auto& [k, v] : p.gold) g.push_back(k.str() + "=" + clean(v));
    for (const auto& [k, v] : p.predicted) q.push_back(k.str() + "=" + clean(v));
    std::sort(g.begin(), g.end());
    std::sort(q.begin(), q.end());
    if (g == q) ++joint;
    for (const std::string& x : g) {
      ++total;
      if (std::find(q.begin(), q.end(), x) != q.end()) ++slots;
    }
  }
  return {double(joint) / double(preds.size()), double(slots) / double(total)};
}

}  // namespace pin::testing

#endif  // PIN_TESTS_FIXTURES_H_
