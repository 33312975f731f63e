#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "entrack/text.hpp"

namespace entrack {

// A repeated-entity prediction site: the token at pos has at least one
// identical earlier mention; antecedents are all such earlier positions.
struct RepeatTarget {
  int pos = -1;
  std::vector<int> antecedents;
};

// An order-index prediction site: predict klass (introduction rank - 1)
// for the entity token at pos.
struct OrderTarget {
  int pos = -1;
  int klass = 0;
};

struct AuxTargets {
  std::vector<RepeatTarget> repeat;
  std::vector<OrderTarget> order;
};

// Selects auxiliary supervision subject to the two per-task caps: at most
// max_types distinct entity word types per document (taken top to bottom,
// a type only consumes a slot when it contributes a target) and at most
// max_tokens tokens per type (again top to bottom). Order targets whose
// rank exceeds order_classes are dropped.
inline AuxTargets select_aux_targets(std::span<const Token> tokens,
                                     int max_types, int max_tokens,
                                     int order_classes) {
  std::vector<std::string> type_names;
  std::unordered_map<std::string, int> type_rank;
  std::vector<std::vector<int>> occurrences;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (!is_entity_token(tokens[i])) continue;
    auto it = type_rank.find(tokens[i].word);
    if (it == type_rank.end()) {
      it = type_rank.emplace(tokens[i].word, static_cast<int>(type_names.size())).first;
      type_names.push_back(tokens[i].word);
      occurrences.emplace_back();
    }
    occurrences[it->second].push_back(i);
  }

  AuxTargets out;
  int repeat_types = 0;
  for (size_t ty = 0; ty < occurrences.size() && repeat_types < max_types; ++ty) {
    const std::vector<int>& occ = occurrences[ty];
    if (occ.size() < 2) continue;  // nothing to predict for this type
    ++repeat_types;
    int taken = 0;
    for (size_t k = 1; k < occ.size() && taken < max_tokens; ++k, ++taken) {
      RepeatTarget t;
      t.pos = occ[k];
      t.antecedents.assign(occ.begin(), occ.begin() + k);
      out.repeat.push_back(std::move(t));
    }
  }

  int order_types = 0;
  for (size_t ty = 0; ty < occurrences.size() && order_types < max_types; ++ty) {
    int klass = static_cast<int>(ty);
    if (klass >= order_classes) break;  // no row in the classifier for it
    ++order_types;
    const std::vector<int>& occ = occurrences[ty];
    for (size_t k = 0; k < occ.size() && static_cast<int>(k) < max_tokens; ++k) {
      out.order.push_back(OrderTarget{occ[k], klass});
    }
  }
  return out;
}

}  // namespace entrack
