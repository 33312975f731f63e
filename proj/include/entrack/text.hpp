#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace entrack {

inline const std::string kMaskToken = "<mask>";

struct Token {
  std::string word;
  std::string pos;  // empty until tagged
  std::string ner;  // empty until tagged; "O" means not an entity
};

inline bool is_entity_token(const Token& t) {
  return !t.ner.empty() && t.ner != "O" && t.word != kMaskToken;
}

inline bool is_person_token(const Token& t) { return t.ner == "PERSON"; }

inline bool is_quote_open(const std::string& w) {
  return w == "``" || w == "“";  // left double quote
}

inline bool is_quote_close(const std::string& w) {
  return w == "''" || w == "”";  // right double quote
}

inline bool is_quote_mark(const std::string& w) {
  return w == "\"" || is_quote_open(w) || is_quote_close(w);
}

inline bool is_sentence_end(const std::string& w) {
  return w == "." || w == "!" || w == "?";
}

// A quoted-speech span. open/close are the positions of the quote-mark
// tokens themselves; the quoted words are strictly between them. close is
// tokens.size() when the quote is never closed. index is 1-based.
struct QuoteSpan {
  int open = -1;
  int close = -1;
  int index = 0;
  int speaker_pos = -1;     // position of the attributed speaker token
  std::string speaker;      // empty when unattributed
};

inline std::vector<QuoteSpan> find_quotes(std::span<const Token> tokens) {
  std::vector<QuoteSpan> quotes;
  int open = -1;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const std::string& w = tokens[i].word;
    if (!is_quote_mark(w)) continue;
    bool opens, closes;
    if (w == "\"") {  // straight quotes toggle
      opens = open < 0;
      closes = !opens;
    } else {
      opens = is_quote_open(w);
      closes = is_quote_close(w);
    }
    if (opens && open < 0) {
      open = i;
    } else if (closes && open >= 0) {
      QuoteSpan q;
      q.open = open;
      q.close = i;
      q.index = static_cast<int>(quotes.size()) + 1;
      quotes.push_back(q);
      open = -1;
    }
    // stray closers with no matching opener are ignored
  }
  if (open >= 0) {
    QuoteSpan q;
    q.open = open;
    q.close = static_cast<int>(tokens.size());
    q.index = static_cast<int>(quotes.size()) + 1;
    quotes.push_back(q);
  }
  return quotes;
}

// 0-based sentence index per token. A terminator ends its sentence, except
// inside a quote span: a quoted exclamation does not split the surrounding
// sentence.
inline std::vector<int> sentence_indices(std::span<const Token> tokens,
                                         const std::vector<QuoteSpan>& quotes) {
  std::vector<bool> in_quote(tokens.size(), false);
  for (const QuoteSpan& q : quotes) {
    int hi = std::min<int>(q.close, static_cast<int>(tokens.size()) - 1);
    for (int i = q.open; i <= hi; ++i) in_quote[i] = true;
  }
  std::vector<int> sent(tokens.size(), 0);
  int cur = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    sent[i] = cur;
    if (is_sentence_end(tokens[i].word) && !in_quote[i]) ++cur;
  }
  return sent;
}

inline std::vector<int> sentence_indices(std::span<const Token> tokens) {
  return sentence_indices(tokens, find_quotes(tokens));
}

// Entity introduction rank: the k-th distinct entity word type to appear
// gets index k (1-based), and every mention of that type carries it.
// Non-entity tokens get 0.
inline std::vector<int> order_indices(std::span<const Token> tokens) {
  std::vector<int> idx(tokens.size(), 0);
  std::unordered_map<std::string, int> rank;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!is_entity_token(tokens[i])) continue;
    auto it = rank.find(tokens[i].word);
    if (it == rank.end()) {
      it = rank.emplace(tokens[i].word, static_cast<int>(rank.size()) + 1).first;
    }
    idx[i] = it->second;
  }
  return idx;
}

// Speaker attribution. For each quote, in order:
//   1. the first PERSON within 5 tokens after the closing mark, staying in
//      the closing mark's sentence and outside other quotes;
//   2. otherwise the first PERSON within 5 tokens before the opening mark,
//      staying in its sentence and outside other quotes;
//   3. otherwise, dialogue alternation: the speaker two quotes back, when
//      both previous quotes have (distinct) resolved speakers;
//   4. otherwise unattributed.
inline void attribute_speakers(std::span<const Token> tokens,
                               std::vector<QuoteSpan>& quotes) {
  const int n = static_cast<int>(tokens.size());
  std::vector<bool> in_quote(n, false);
  for (const QuoteSpan& q : quotes) {
    int hi = std::min(q.close, n - 1);
    for (int i = q.open; i <= hi; ++i) in_quote[i] = true;
  }
  std::vector<int> sent = sentence_indices(tokens, quotes);
  const int window = 5;

  for (size_t qi = 0; qi < quotes.size(); ++qi) {
    QuoteSpan& q = quotes[qi];
    // after the closing mark
    if (q.close < n) {
      for (int i = q.close + 1; i <= std::min(n - 1, q.close + window); ++i) {
        if (in_quote[i] || sent[i] != sent[q.close]) break;
        if (is_person_token(tokens[i])) {
          q.speaker_pos = i;
          q.speaker = tokens[i].word;
          break;
        }
      }
    }
    // before the opening mark
    if (q.speaker_pos < 0) {
      for (int i = q.open - 1; i >= std::max(0, q.open - window); --i) {
        if (in_quote[i] || sent[i] != sent[q.open]) break;
        if (is_person_token(tokens[i])) {
          q.speaker_pos = i;
          q.speaker = tokens[i].word;
          break;
        }
      }
    }
    // alternation
    if (q.speaker_pos < 0 && qi >= 2) {
      const QuoteSpan& prev = quotes[qi - 1];
      const QuoteSpan& prev2 = quotes[qi - 2];
      if (!prev.speaker.empty() && !prev2.speaker.empty() &&
          prev.speaker != prev2.speaker) {
        q.speaker_pos = prev2.speaker_pos;
        q.speaker = prev2.speaker;
      }
    }
  }
}

// One row of the word-level feature table.
struct TokenFeatures {
  int sentence = 0;             // 0-based sentence index
  std::string pos;
  std::string ner;
  bool recent_person = false;       // among the last 3 PERSON tokens
  bool last_sentence_person = false;  // PERSON in the final sentence
  bool matches_prev_person = false;   // PERSON equal to the previous PERSON
  bool matches_next_person = false;   // PERSON equal to the next PERSON
  int quote_index = 0;          // 1-based quote number, 0 outside quotes
  int speaker_order = 0;        // order index of the quote's speaker, 0 if none
  int order_index = 0;          // entity introduction rank, 0 for non-entities
};

inline std::vector<TokenFeatures> extract_features(std::span<const Token> tokens) {
  const int n = static_cast<int>(tokens.size());
  std::vector<QuoteSpan> quotes = find_quotes(tokens);
  attribute_speakers(tokens, quotes);
  std::vector<int> sent = sentence_indices(tokens, quotes);
  std::vector<int> order = order_indices(tokens);

  std::vector<TokenFeatures> rows(n);
  for (int i = 0; i < n; ++i) {
    rows[i].sentence = sent[i];
    rows[i].pos = tokens[i].pos;
    rows[i].ner = tokens[i].ner;
    rows[i].order_index = order[i];
  }

  std::vector<int> persons;
  for (int i = 0; i < n; ++i) {
    if (is_person_token(tokens[i])) persons.push_back(i);
  }
  int last_sent = n > 0 ? sent[n - 1] : 0;
  for (size_t k = 0; k < persons.size(); ++k) {
    int i = persons[k];
    rows[i].recent_person = k + 3 >= persons.size();
    rows[i].last_sentence_person = sent[i] == last_sent;
    rows[i].matches_prev_person =
        k > 0 && tokens[persons[k - 1]].word == tokens[i].word;
    rows[i].matches_next_person =
        k + 1 < persons.size() && tokens[persons[k + 1]].word == tokens[i].word;
  }

  std::unordered_map<std::string, int> type_order;
  for (int i = 0; i < n; ++i) {
    if (order[i] > 0) type_order.emplace(tokens[i].word, order[i]);
  }
  for (const QuoteSpan& q : quotes) {
    int speaker_order = 0;
    if (!q.speaker.empty()) {
      auto it = type_order.find(q.speaker);
      if (it != type_order.end()) speaker_order = it->second;
    }
    for (int i = q.open + 1; i < q.close && i < n; ++i) {
      rows[i].quote_index = q.index;
      rows[i].speaker_order = speaker_order;
    }
  }
  return rows;
}

// --- fallback tagging ------------------------------------------------

// Person-name gazetteer used when input arrives untagged. The built-in
// list covers the names produced by the synthetic generator plus common
// lowercase first names; extend from a file for real corpora.
class Gazetteer {
 public:
  static const Gazetteer& builtin() {
    static Gazetteer g = make_builtin();
    return g;
  }

  static Gazetteer make_builtin() {
    Gazetteer g;
    for (const char* name :
         {"julie",  "amy",    "marsh",  "tom",    "anna",   "peter",
          "lucy",   "james",  "sarah",  "george", "molly",  "frank",
          "alice",  "henry",  "rose",   "jack",   "emma",   "oliver",
          "grace",  "arthur", "clara",  "edward", "nora",   "louis",
          "hazel",  "walter", "ivy",    "hugh",   "stella", "martin",
          "daisy",  "victor", "flora",  "ralph",  "june",   "oscar",
          "pearl",  "simon",  "vera",   "felix",  "mabel",  "leon",
          "john",   "mary",   "paul",   "kate",   "david",  "helen"}) {
      g.names_.insert(name);
    }
    return g;
  }

  void add(const std::string& name) { names_.insert(name); }
  bool is_person(const std::string& w) const { return names_.count(w) > 0; }
  size_t size() const { return names_.size(); }

 private:
  std::unordered_set<std::string> names_;
};

namespace detail {

inline bool in_list(const std::string& w, std::initializer_list<const char*> l) {
  for (const char* s : l) {
    if (w == s) return true;
  }
  return false;
}

}  // namespace detail

// Coarse rule-based POS tag, sufficient for a discrete feature. Real
// corpora should arrive pre-tagged.
inline std::string fallback_pos(const std::string& w, const Gazetteer& gaz) {
  using detail::in_list;
  if (w == kMaskToken) return "MASK";
  if (w == "." || w == "!" || w == "?") return ".";
  if (w == ",") return ",";
  if (w == ";" || w == ":") return ":";
  if (is_quote_mark(w)) return "''";
  if (!w.empty() && (std::isdigit(static_cast<unsigned char>(w[0])) != 0)) return "CD";
  if (gaz.is_person(w)) return "NNP";
  if (in_list(w, {"the", "a", "an", "this", "that", "these", "those"})) return "DT";
  if (in_list(w, {"i", "you", "he", "she", "it", "we", "they", "me", "him",
                  "her", "us", "them", "my", "your", "his", "its", "our",
                  "their", "mine", "yours", "hers", "theirs"}))
    return "PRP";
  if (w == "to") return "TO";
  if (in_list(w, {"of", "in", "on", "at", "by", "for", "with", "from", "into",
                  "over", "under", "about", "after", "before", "near"}))
    return "IN";
  if (in_list(w, {"and", "or", "but", "nor", "so", "yet"})) return "CC";
  if (in_list(w, {"will", "would", "can", "could", "may", "might", "must",
                  "shall", "should"}))
    return "MD";
  if (in_list(w, {"said", "asked", "replied", "answered", "cried", "shouted",
                  "whispered", "muttered", "called", "laughed", "sighed",
                  "was", "were", "had", "did", "went", "came", "saw", "knew",
                  "told", "took", "gave", "looked", "smiled", "nodded",
                  "waited", "wanted", "handed", "opened", "watched"}))
    return "VBD";
  if (in_list(w, {"is", "are", "am", "be", "been", "do", "does", "has",
                  "have", "say", "says", "ask", "asks"}))
    return "VB";
  if (w.size() > 3 && w.ends_with("ing")) return "VBG";
  if (w.size() > 3 && w.ends_with("ly")) return "RB";
  if (w.size() > 3 && w.ends_with("ed")) return "VBD";
  return "NN";
}

inline std::string fallback_ner(const std::string& w, const Gazetteer& gaz) {
  if (w == kMaskToken) return "O";
  return gaz.is_person(w) ? "PERSON" : "O";
}

// Fills missing pos/ner in place; pre-tagged fields are left alone.
inline void annotate(std::vector<Token>& tokens, const Gazetteer& gaz) {
  for (Token& t : tokens) {
    if (t.pos.empty()) t.pos = fallback_pos(t.word, gaz);
    if (t.ner.empty()) t.ner = fallback_ner(t.word, gaz);
  }
}

// TSV rendering of the feature table, one row per token. Shared by the CLI
// and the fixture tests, so the layout is part of the interface.
inline std::string format_feature_table(std::span<const Token> tokens,
                                        std::span<const TokenFeatures> rows) {
  std::string out =
      "token\tsentence\tpos\tner\trecent_person\tlast_sentence_person\t"
      "matches_prev_person\tmatches_next_person\tquote_index\tspeaker_order\t"
      "order_index\n";
  for (size_t i = 0; i < tokens.size(); ++i) {
    const TokenFeatures& f = rows[i];
    out += tokens[i].word;
    out += '\t';
    out += std::to_string(f.sentence);
    out += '\t';
    out += f.pos;
    out += '\t';
    out += f.ner;
    out += '\t';
    out += f.recent_person ? '1' : '0';
    out += '\t';
    out += f.last_sentence_person ? '1' : '0';
    out += '\t';
    out += f.matches_prev_person ? '1' : '0';
    out += '\t';
    out += f.matches_next_person ? '1' : '0';
    out += '\t';
    out += std::to_string(f.quote_index);
    out += '\t';
    out += std::to_string(f.speaker_order);
    out += '\t';
    out += std::to_string(f.order_index);
    out += '\n';
  }
  return out;
}

}  // namespace entrack
