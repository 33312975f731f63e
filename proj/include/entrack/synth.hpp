#pragma once

#include <string>
#include <vector>

#include "entrack/data.hpp"
#include "entrack/rng.hpp"
#include "entrack/text.hpp"

namespace entrack {

// Synthetic dialogue corpora for probing the reader at desk scale. Every
// passage ends in a Cloze target (last word). Entity-answer passages are
// two-person dialogues where the masked final word is the next speaker by
// turn alternation, or the second participant of an interaction; the most
// recently mentioned name is usually the wrong answer, so surface recency
// fails and entity tracking pays off. Non-entity passages end in an object
// word cued by an earlier statement.
struct GenConfig {
  int train = 2000;
  int val = 500;
  int test = 0;
  double entity_answer_ratio = 0.8;
  uint64_t seed = 7;
  int name_pool = 24;            // distinct person names drawn per corpus
  int min_turns = 3;
  int max_turns = 6;
  double unattributed_prob = 0.25;  // chance a middle turn has no attribution
  double bystander_prob = 0.3;      // chance of a third, non-speaking person
  double handoff_prob = 0.3;        // entity share answered by interaction,
                                    // not alternation
};

namespace synthdetail {

inline const std::vector<std::string>& all_names() {
  static const std::vector<std::string> v{
      "julie",  "amy",    "marsh",  "tom",    "anna",   "peter",
      "lucy",   "james",  "sarah",  "george", "molly",  "frank",
      "alice",  "henry",  "rose",   "jack",   "emma",   "oliver",
      "grace",  "arthur", "clara",  "edward", "nora",   "louis",
      "hazel",  "walter", "ivy",    "hugh",   "stella", "martin",
      "daisy",  "victor", "flora",  "ralph",  "june",   "oscar",
      "pearl",  "simon",  "vera",   "felix",  "mabel",  "leon"};
  return v;
}

inline const std::vector<std::string>& nouns() {
  static const std::vector<std::string> v{
      "lamp",   "basket", "letter", "kettle", "ribbon", "ladder",
      "candle", "bucket", "mirror", "jacket", "wagon",  "parcel",
      "hammer", "teapot", "blanket", "locket"};
  return v;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v{
      "garden", "kitchen", "market", "harbour", "station", "orchard",
      "cottage", "meadow", "library", "stable"};
  return v;
}

inline const std::vector<std::string>& activities() {
  static const std::vector<std::string> v{"waiting", "talking", "resting",
                                          "working", "arguing", "sitting"};
  return v;
}

inline const std::vector<std::string>& say_verbs() {
  static const std::vector<std::string> v{"said", "asked", "replied",
                                          "answered", "whispered", "called"};
  return v;
}

inline const std::vector<std::vector<std::string>>& utterances() {
  static const std::vector<std::vector<std::string>> v{
      {"i", "think", "we", "should", "go"},
      {"it", "is", "getting", "late"},
      {"you", "never", "listen", "to", "me"},
      {"the", "%n", "is", "mine"},
      {"we", "could", "wait", "for", "the", "%n"},
      {"i", "saw", "the", "%n", "today"},
      {"do", "you", "want", "the", "%n"},
      {"that", "is", "not", "true"},
      {"we", "will", "see", "about", "that"},
      {"i", "left", "the", "%n", "at", "home"},
      {"nobody", "asked", "you"},
      {"come", "back", "tomorrow"},
      {"i", "am", "not", "afraid"},
      {"you", "know", "why"}};
  return v;
}

}  // namespace synthdetail

class SynthGenerator {
 public:
  explicit SynthGenerator(const GenConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg.name_pool < 3 ||
        cfg.name_pool > static_cast<int>(synthdetail::all_names().size())) {
      throw std::invalid_argument("gen: name_pool out of range");
    }
    if (!(cfg.entity_answer_ratio >= 0.0 && cfg.entity_answer_ratio <= 1.0)) {
      throw std::invalid_argument("gen: entity_answer_ratio must be in [0, 1]");
    }
    if (cfg.min_turns < 2 || cfg.max_turns < cfg.min_turns) {
      throw std::invalid_argument("gen: bad turn bounds");
    }
    names_.assign(synthdetail::all_names().begin(),
                  synthdetail::all_names().begin() + cfg.name_pool);
  }

  Corpus generate() {
    Corpus corpus;
    corpus.train = batch(cfg_.train);
    corpus.val = batch(cfg_.val);
    corpus.test = batch(cfg_.test);
    return corpus;
  }

  // Exact entity/non-entity counts, order shuffled.
  std::vector<Example> batch(int count) {
    int entity_count = static_cast<int>(cfg_.entity_answer_ratio * count + 0.5);
    std::vector<int> kinds(count, 0);
    for (int i = 0; i < entity_count; ++i) kinds[i] = 1;
    rng_.shuffle(kinds);
    std::vector<Example> out;
    out.reserve(count);
    for (int k : kinds) {
      out.push_back(k == 1 ? entity_example() : object_example());
    }
    return out;
  }

  Example entity_example() {
    return rng_.uniform() < cfg_.handoff_prob ? handoff_example()
                                              : dialogue_example();
  }

 private:
  using Words = std::vector<std::string>;

  void word(Example& ex, const std::string& w) {
    ex.tokens.push_back(Token{w, "", ""});
  }

  void words(Example& ex, const Words& ws) {
    for (const std::string& w : ws) word(ex, w);
  }

  std::string pick_other(const std::vector<std::string>& pool,
                         const std::vector<std::string>& taken) {
    while (true) {
      const std::string& cand = rng_.choice(pool);
      bool clash = false;
      for (const std::string& t : taken) clash = clash || t == cand;
      if (!clash) return cand;
    }
  }

  Words fill_utterance(const std::string& noun) {
    Words u = rng_.choice(synthdetail::utterances());
    for (std::string& w : u) {
      if (w == "%n") w = noun;
    }
    return u;
  }

  void opener(Example& ex, const std::string& a, const std::string& b) {
    word(ex, a);
    word(ex, "and");
    word(ex, b);
    word(ex, "were");
    word(ex, rng_.choice(synthdetail::activities()));
    word(ex, "at");
    word(ex, "the");
    word(ex, rng_.choice(synthdetail::places()));
    word(ex, ".");
  }

  void bystander_line(Example& ex, const std::string& c) {
    word(ex, c);
    word(ex, "watched");
    word(ex, "from");
    word(ex, "the");
    word(ex, rng_.choice(synthdetail::places()));
    word(ex, ".");
  }

  // " <utterance> , " <verb> <name> .   (or unattributed: " <utterance> . ")
  void turn(Example& ex, const std::string& speaker, const std::string& noun,
            bool attributed) {
    word(ex, "\"");
    words(ex, fill_utterance(noun));
    if (attributed) {
      word(ex, ",");
      word(ex, "\"");
      word(ex, rng_.choice(synthdetail::say_verbs()));
      word(ex, speaker);
      word(ex, ".");
    } else {
      word(ex, ".");
      word(ex, "\"");
    }
  }

  // Two-person dialogue; the masked final word is the next speaker by
  // alternation, while the previous attribution (the most recent name) is
  // the other person.
  Example dialogue_example() {
    Example ex;
    std::string a = rng_.choice(names_);
    std::string b = pick_other(names_, {a});
    std::string noun = rng_.choice(synthdetail::nouns());

    opener(ex, a, b);
    if (rng_.uniform() < cfg_.bystander_prob) {
      bystander_line(ex, pick_other(names_, {a, b}));
    }

    int turns = cfg_.min_turns + rng_.uniform_int(0, cfg_.max_turns - cfg_.min_turns + 1);
    // The final (masked) turn continues the alternation.
    std::vector<std::string> speakers;
    for (int t = 0; t < turns; ++t) speakers.push_back(t % 2 == 0 ? a : b);
    std::string target = turns % 2 == 0 ? a : b;

    // Middle turns may drop their attribution, but the turn right before
    // the masked one keeps it (the decoy), and the target must have been
    // named in some earlier attribution.
    std::vector<bool> attributed(turns, true);
    for (int t = 0; t < turns - 1; ++t) {
      attributed[t] = rng_.uniform() >= cfg_.unattributed_prob;
    }
    bool target_named = false;
    for (int t = 0; t < turns; ++t) {
      if (speakers[t] == target && attributed[t]) target_named = true;
    }
    if (!target_named) {
      for (int t = turns - 1; t >= 0; --t) {
        if (speakers[t] == target) {
          attributed[t] = true;
          break;
        }
      }
    }

    for (int t = 0; t < turns; ++t) turn(ex, speakers[t], noun, attributed[t]);

    // " <utterance> , " <verb> <mask>
    word(ex, "\"");
    words(ex, fill_utterance(noun));
    word(ex, ",");
    word(ex, "\"");
    word(ex, rng_.choice(synthdetail::say_verbs()));
    word(ex, kMaskToken);
    ex.mask = static_cast<int>(ex.tokens.size()) - 1;
    ex.answer = target;
    finish(ex);
    return ex;
  }

  // ... <A> <verb> the <noun> to <B> . ... then <A> <verb2> the <noun2> to <mask>
  Example handoff_example() {
    Example ex;
    std::string a = rng_.choice(names_);
    std::string b = pick_other(names_, {a});
    std::string n1 = rng_.choice(synthdetail::nouns());
    std::string n2 = pick_other(synthdetail::nouns(), {n1});

    opener(ex, a, b);
    word(ex, a);
    word(ex, rng_.uniform() < 0.5 ? "handed" : "gave");
    word(ex, "the");
    word(ex, n1);
    word(ex, "to");
    word(ex, b);
    word(ex, ".");
    if (rng_.uniform() < cfg_.bystander_prob) {
      bystander_line(ex, pick_other(names_, {a, b}));
    }
    word(ex, "the");
    word(ex, n1);
    word(ex, "was");
    word(ex, rng_.uniform() < 0.5 ? "heavy" : "old");
    word(ex, ".");
    word(ex, "then");
    word(ex, a);
    word(ex, rng_.uniform() < 0.5 ? "handed" : "gave");
    word(ex, "the");
    word(ex, n2);
    word(ex, "to");
    word(ex, kMaskToken);
    ex.mask = static_cast<int>(ex.tokens.size()) - 1;
    ex.answer = b;
    finish(ex);
    return ex;
  }

  // Non-entity answer: an object echo resolvable by local matching.
  Example object_example() {
    Example ex;
    std::string a = rng_.choice(names_);
    std::string n1 = rng_.choice(synthdetail::nouns());
    std::string n2 = pick_other(synthdetail::nouns(), {n1});

    word(ex, "the");
    word(ex, n1);
    word(ex, "and");
    word(ex, "the");
    word(ex, n2);
    word(ex, "were");
    word(ex, "on");
    word(ex, "the");
    word(ex, rng_.choice(synthdetail::places()));
    word(ex, ".");
    word(ex, a);
    word(ex, "wanted");
    word(ex, "the");
    word(ex, n1);
    word(ex, ".");
    if (rng_.uniform() < 0.5) {
      word(ex, "it");
      word(ex, "was");
      word(ex, "getting");
      word(ex, "late");
      word(ex, ".");
    }
    word(ex, a);
    word(ex, "reached");
    word(ex, "for");
    word(ex, "the");
    word(ex, kMaskToken);
    ex.mask = static_cast<int>(ex.tokens.size()) - 1;
    ex.answer = n1;
    finish(ex);
    return ex;
  }

  void finish(Example& ex) {
    annotate(ex.tokens, Gazetteer::builtin());
    validate_example(ex);
  }

  GenConfig cfg_;
  Rng rng_;
  std::vector<std::string> names_;
};

inline Corpus generate_corpus(const GenConfig& cfg) {
  SynthGenerator gen(cfg);
  return gen.generate();
}

}  // namespace entrack
