#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "entrack/rng.hpp"
#include "entrack/text.hpp"

namespace entrack {

// One Cloze instance. tokens[mask].word is always the mask placeholder;
// the original word at that position is the answer.
struct Example {
  std::vector<Token> tokens;
  int mask = -1;
  std::string answer;
  std::vector<std::string> candidates;  // optional; empty means unrestricted
};

inline void validate_example(const Example& ex) {
  if (ex.tokens.size() < 2) {
    throw std::invalid_argument("example: needs at least two tokens");
  }
  if (ex.mask < 0 || ex.mask >= static_cast<int>(ex.tokens.size())) {
    throw std::invalid_argument("example: mask position " +
                                std::to_string(ex.mask) + " out of range");
  }
  if (ex.tokens[ex.mask].word != kMaskToken) {
    throw std::invalid_argument("example: token at mask position must be " +
                                kMaskToken);
  }
  if (ex.answer.empty()) {
    throw std::invalid_argument("example: empty answer");
  }
}

inline bool answer_in_context(const Example& ex) {
  for (int i = 0; i < static_cast<int>(ex.tokens.size()); ++i) {
    if (i != ex.mask && ex.tokens[i].word == ex.answer) return true;
  }
  return false;
}

// Keeps only examples whose answer occurs in the context. Applied to the
// training split only; validation and test are never filtered.
inline std::vector<Example> filter_answer_in_context(const std::vector<Example>& in) {
  std::vector<Example> out;
  out.reserve(in.size());
  for (const Example& ex : in) {
    if (answer_in_context(ex)) out.push_back(ex);
  }
  return out;
}

// --- JSONL serialization ----------------------------------------------
//
// One example per line:
//   {"words": [...], "pos": [...], "ner": [...], "mask": 7,
//    "answer": "julie", "candidates": [...]}
// pos/ner/candidates are optional.

inline nlohmann::json example_to_json(const Example& ex) {
  nlohmann::json j;
  auto& words = j["words"] = nlohmann::json::array();
  bool any_pos = false, any_ner = false;
  for (const Token& t : ex.tokens) {
    words.push_back(t.word);
    any_pos = any_pos || !t.pos.empty();
    any_ner = any_ner || !t.ner.empty();
  }
  if (any_pos) {
    auto& pos = j["pos"] = nlohmann::json::array();
    for (const Token& t : ex.tokens) pos.push_back(t.pos);
  }
  if (any_ner) {
    auto& ner = j["ner"] = nlohmann::json::array();
    for (const Token& t : ex.tokens) ner.push_back(t.ner);
  }
  j["mask"] = ex.mask;
  j["answer"] = ex.answer;
  if (!ex.candidates.empty()) j["candidates"] = ex.candidates;
  return j;
}

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  if (!j.contains("words") || !j["words"].is_array()) {
    throw std::invalid_argument("example: missing 'words' array");
  }
  for (const auto& w : j["words"]) {
    ex.tokens.push_back(Token{w.get<std::string>(), "", ""});
  }
  auto copy_tags = [&](const char* key, std::string Token::* field) {
    if (!j.contains(key)) return;
    const auto& arr = j[key];
    if (arr.size() != ex.tokens.size()) {
      throw std::invalid_argument(std::string("example: '") + key +
                                  "' length does not match words");
    }
    for (size_t i = 0; i < ex.tokens.size(); ++i) {
      ex.tokens[i].*field = arr[i].get<std::string>();
    }
  };
  copy_tags("pos", &Token::pos);
  copy_tags("ner", &Token::ner);
  ex.mask = j.value("mask", -1);
  ex.answer = j.value("answer", std::string());
  if (j.contains("candidates")) {
    for (const auto& c : j["candidates"]) {
      ex.candidates.push_back(c.get<std::string>());
    }
  }
  validate_example(ex);
  return ex;
}

inline std::vector<Example> load_examples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return out;
}

inline void save_examples_jsonl(const std::string& path,
                                const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const Example& ex : examples) {
    out << example_to_json(ex).dump() << "\n";
  }
}

// Plain-text ingestion: one passage per line, whitespace tokenized, the
// final token is the answer and becomes the masked position.
inline std::optional<Example> ingest_text_line(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> words;
  std::string w;
  while (ss >> w) words.push_back(w);
  if (words.size() < 2) return std::nullopt;
  Example ex;
  ex.answer = words.back();
  for (size_t i = 0; i + 1 < words.size(); ++i) {
    ex.tokens.push_back(Token{words[i], "", ""});
  }
  ex.tokens.push_back(Token{kMaskToken, "", ""});
  ex.mask = static_cast<int>(ex.tokens.size()) - 1;
  return ex;
}

inline std::vector<Example> load_examples_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto ex = ingest_text_line(line)) out.push_back(std::move(*ex));
  }
  return out;
}

inline void annotate_examples(std::vector<Example>& examples,
                              const Gazetteer& gaz) {
  for (Example& ex : examples) annotate(ex.tokens, gaz);
}

// A bare annotated passage (no mask): {"words": [...], "pos": [...],
// "ner": [...]}, pos/ner optional. Used by the feature-table tooling.
inline std::vector<Token> passage_from_json(const nlohmann::json& j) {
  if (!j.contains("words") || !j["words"].is_array()) {
    throw std::invalid_argument("passage: missing 'words' array");
  }
  std::vector<Token> tokens;
  for (const auto& w : j["words"]) tokens.push_back(Token{w.get<std::string>(), "", ""});
  auto copy_tags = [&](const char* key, std::string Token::* field) {
    if (!j.contains(key)) return;
    if (j[key].size() != tokens.size()) {
      throw std::invalid_argument(std::string("passage: '") + key +
                                  "' length does not match words");
    }
    for (size_t i = 0; i < tokens.size(); ++i) {
      tokens[i].*field = j[key][i].get<std::string>();
    }
  };
  copy_tags("pos", &Token::pos);
  copy_tags("ner", &Token::ner);
  return tokens;
}

inline std::vector<Token> load_passage_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return passage_from_json(nlohmann::json::parse(in));
}

// --- anonymization ------------------------------------------------------
//
// Replaces each distinct entity word type with a per-document placeholder
// "@entityK". By default K is the introduction rank; with an Rng the
// placeholders are drawn without replacement from a pool, so the same
// placeholder plays different roles across documents.
inline void anonymize(Example& ex, Rng* permute = nullptr,
                      int placeholder_pool = 0) {
  std::vector<std::string> types;
  std::unordered_map<std::string, int> seen;
  for (const Token& t : ex.tokens) {
    if (is_entity_token(t) && seen.emplace(t.word, 1).second) {
      types.push_back(t.word);
    }
  }
  if (types.empty()) return;
  int pool = std::max(placeholder_pool, static_cast<int>(types.size()));
  std::vector<int> ids(pool);
  for (int i = 0; i < pool; ++i) ids[i] = i + 1;
  if (permute != nullptr) permute->shuffle(ids);
  std::unordered_map<std::string, std::string> mapping;
  for (size_t k = 0; k < types.size(); ++k) {
    mapping[types[k]] = "@entity" + std::to_string(ids[k]);
  }
  for (Token& t : ex.tokens) {
    auto it = mapping.find(t.word);
    if (it != mapping.end()) {
      t.word = it->second;
      t.pos = "NNP";
    }
  }
  auto mapped = mapping.find(ex.answer);
  if (mapped != mapping.end()) ex.answer = mapped->second;
  for (std::string& c : ex.candidates) {
    auto it = mapping.find(c);
    if (it != mapping.end()) c = it->second;
  }
}

inline void anonymize_examples(std::vector<Example>& examples,
                               Rng* permute = nullptr,
                               int placeholder_pool = 0) {
  for (Example& ex : examples) anonymize(ex, permute, placeholder_pool);
}

// --- vocabulary ---------------------------------------------------------

class Vocab {
 public:
  static constexpr int kUnk = 0;

  Vocab() {
    add("<unk>");
    add(kMaskToken);
  }

  explicit Vocab(const std::vector<std::string>& words) {
    for (const std::string& w : words) add(w);
    if (words_.empty() || words_[0] != "<unk>") {
      throw std::invalid_argument("vocab: first entry must be <unk>");
    }
  }

  int add(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    index_[w] = id;
    words_.push_back(w);
    return id;
  }

  int get(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  int mask_id() const { return get(kMaskToken); }
  const std::string& word(int id) const { return words_.at(id); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

inline void grow_vocab(Vocab& v, const std::vector<Example>& examples) {
  for (const Example& ex : examples) {
    for (const Token& t : ex.tokens) v.add(t.word);
  }
}

struct Corpus {
  std::vector<Example> train, val, test;
};

}  // namespace entrack
