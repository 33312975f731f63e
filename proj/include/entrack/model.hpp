#pragma once

#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "entrack/aux.hpp"
#include "entrack/data.hpp"
#include "entrack/gru.hpp"
#include "entrack/params.hpp"
#include "entrack/tensor.hpp"
#include "entrack/text.hpp"

namespace entrack {

enum class AuxTask { kNone, kRepeat, kOrder };

inline const char* aux_task_name(AuxTask t) {
  switch (t) {
    case AuxTask::kNone: return "none";
    case AuxTask::kRepeat: return "repeat";
    case AuxTask::kOrder: return "order";
  }
  return "?";
}

inline AuxTask aux_task_from_name(const std::string& s) {
  if (s == "none") return AuxTask::kNone;
  if (s == "repeat") return AuxTask::kRepeat;
  if (s == "order") return AuxTask::kOrder;
  throw std::invalid_argument("unknown aux task '" + s + "'");
}

// How the query vector is assembled. kLastWord: the masked word is the
// final token (query from the last forward state and first backward
// state). kAnywhere: the masked word may sit anywhere (query from the
// states just outside the masked position, zero at the boundaries).
enum class QueryMode { kLastWord, kAnywhere };

struct ReaderConfig {
  int emb_dim = 32;
  int hidden = 16;  // d: context/query split size; each GRU direction is 2d
  bool use_features = false;
  AuxTask aux = AuxTask::kNone;
  double gamma = 0.5;      // weight of the auxiliary loss
  int aux_max_types = 4;   // distinct entity types per document
  int aux_max_tokens = 2;  // tokens per type
  int order_classes = 8;   // rows of the order classifier
  double dropout = 0.0;
  QueryMode query = QueryMode::kLastWord;
  int sentence_cap = 64;  // feature table sizes; larger values are clamped
  int quote_cap = 16;
  int speaker_cap = 16;
};

inline void validate_config(const ReaderConfig& c) {
  if (c.emb_dim <= 0 || c.hidden <= 0) {
    throw std::invalid_argument("config: emb_dim and hidden must be positive");
  }
  if (c.gamma < 0.0) throw std::invalid_argument("config: gamma must be >= 0");
  if (c.aux_max_types < 1 || c.aux_max_tokens < 1 || c.order_classes < 1) {
    throw std::invalid_argument("config: aux caps must be >= 1");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  }
  if (c.sentence_cap < 1 || c.quote_cap < 1 || c.speaker_cap < 1) {
    throw std::invalid_argument("config: feature caps must be >= 1");
  }
}

inline nlohmann::json config_to_json(const ReaderConfig& c) {
  return nlohmann::json{{"emb_dim", c.emb_dim},
                        {"hidden", c.hidden},
                        {"use_features", c.use_features},
                        {"aux", aux_task_name(c.aux)},
                        {"gamma", c.gamma},
                        {"aux_max_types", c.aux_max_types},
                        {"aux_max_tokens", c.aux_max_tokens},
                        {"order_classes", c.order_classes},
                        {"dropout", c.dropout},
                        {"query", c.query == QueryMode::kLastWord ? "last" : "anywhere"},
                        {"sentence_cap", c.sentence_cap},
                        {"quote_cap", c.quote_cap},
                        {"speaker_cap", c.speaker_cap}};
}

inline ReaderConfig config_from_json(const nlohmann::json& j) {
  ReaderConfig c;
  c.emb_dim = j.at("emb_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.use_features = j.at("use_features").get<bool>();
  c.aux = aux_task_from_name(j.at("aux").get<std::string>());
  c.gamma = j.at("gamma").get<double>();
  c.aux_max_types = j.at("aux_max_types").get<int>();
  c.aux_max_tokens = j.at("aux_max_tokens").get<int>();
  c.order_classes = j.at("order_classes").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.query = j.at("query").get<std::string>() == "last" ? QueryMode::kLastWord
                                                       : QueryMode::kAnywhere;
  c.sentence_cap = j.value("sentence_cap", 64);
  c.quote_cap = j.value("quote_cap", 16);
  c.speaker_cap = j.value("speaker_cap", 16);
  validate_config(c);
  return c;
}

// An example resolved against the model's vocabularies, with features and
// auxiliary targets precomputed. Compilation happens once per example, not
// once per epoch.
struct CompiledExample {
  std::vector<int> words;
  int mask = -1;
  std::string answer;
  int answer_id = Vocab::kUnk;
  std::vector<int> answer_positions;  // context positions holding the answer
  std::vector<int> candidate_ids;     // empty means unrestricted

  // feature ids, parallel to words (empty unless the model uses features)
  std::vector<int> f_sent, f_pos, f_ner, f_recent, f_lastsent, f_mprev,
      f_mnext, f_quote, f_speaker;

  AuxTargets aux;

  // category flags of the answer, for evaluation segmentation
  bool entity_answer = false;
  bool speaker_answer = false;
  bool quote_answer = false;

  int size() const { return static_cast<int>(words.size()); }
};

// Pointer-sum prediction: the word type whose occurrences carry the
// highest total attention wins; exact ties go to the smaller word id.
// Only types present in the context are eligible; the mask token and
// <unk> never are; a non-empty candidate set restricts further. Returns
// -1 when no type is eligible.
inline int predict_pointer_sum(std::span<const int> words,
                               std::span<const double> attention,
                               const std::vector<int>& candidates,
                               int unk_id, int mask_id) {
  std::unordered_map<int, double> totals;
  for (size_t i = 0; i < words.size(); ++i) {
    int w = words[i];
    if (w == unk_id || w == mask_id) continue;
    if (!candidates.empty() &&
        std::find(candidates.begin(), candidates.end(), w) == candidates.end()) {
      continue;
    }
    totals[w] += attention[i];
  }
  int best = -1;
  double best_score = 0.0;
  for (const auto& [w, score] : totals) {
    if (best < 0 || score > best_score || (score == best_score && w < best)) {
      best = w;
      best_score = score;
    }
  }
  return best;
}

struct ForwardOptions {
  bool with_loss = true;
  bool with_aux = true;
  bool train_dropout = false;
};

struct ForwardResult {
  Tensor attention;       // distribution over context positions
  Tensor loss;            // total multi-task loss (invalid when skipped)
  Tensor main_loss;       // pointer-sum likelihood term
  Tensor aux_loss;        // mean auxiliary term (invalid when absent)
  int aux_targets = 0;
  BoundParams bound;      // leaves aligned with the parameter store
};

class ReaderModel {
 public:
  ReaderModel(ReaderConfig cfg, Vocab vocab, Vocab pos_vocab, Vocab ner_vocab,
              uint64_t seed)
      : cfg_(cfg),
        vocab_(std::move(vocab)),
        pos_vocab_(std::move(pos_vocab)),
        ner_vocab_(std::move(ner_vocab)) {
    validate_config(cfg_);
    Rng rng(seed);
    int e = cfg_.emb_dim;
    int h = 2 * cfg_.hidden;
    store_.add_uniform("emb", {vocab_.size(), e}, rng, 0.1);
    if (cfg_.use_features) {
      store_.add("fuse.bias", {e});
      store_.add_uniform("feat.sent", {cfg_.sentence_cap, e}, rng, 0.1);
      store_.add_uniform("feat.pos", {pos_vocab_.size(), e}, rng, 0.1);
      store_.add_uniform("feat.ner", {ner_vocab_.size(), e}, rng, 0.1);
      store_.add_uniform("feat.recent", {2, e}, rng, 0.1);
      store_.add_uniform("feat.lastsent", {2, e}, rng, 0.1);
      store_.add_uniform("feat.mprev", {2, e}, rng, 0.1);
      store_.add_uniform("feat.mnext", {2, e}, rng, 0.1);
      store_.add_uniform("feat.quote", {cfg_.quote_cap, e}, rng, 0.1);
      store_.add_uniform("feat.speaker", {cfg_.speaker_cap, e}, rng, 0.1);
    }
    add_gru_params(store_, "gru.fwd", h, e, rng);
    add_gru_params(store_, "gru.bwd", h, e, rng);
    if (cfg_.aux == AuxTask::kRepeat) {
      store_.add_uniform("aux.bilinear", {h, h}, rng, 1.0 / h);
    } else if (cfg_.aux == AuxTask::kOrder) {
      store_.add("aux.order", {cfg_.order_classes, h});  // zero init
    }
  }

  const ReaderConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const Vocab& pos_vocab() const { return pos_vocab_; }
  const Vocab& ner_vocab() const { return ner_vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  CompiledExample compile(const Example& ex) const {
    validate_example(ex);
    CompiledExample out;
    const int n = static_cast<int>(ex.tokens.size());
    out.words.reserve(n);
    for (const Token& t : ex.tokens) out.words.push_back(vocab_.get(t.word));
    out.mask = ex.mask;
    out.answer = ex.answer;
    out.answer_id = vocab_.get(ex.answer);
    for (int i = 0; i < n; ++i) {
      if (i != ex.mask && ex.tokens[i].word == ex.answer) {
        out.answer_positions.push_back(i);
      }
    }
    for (const std::string& c : ex.candidates) {
      out.candidate_ids.push_back(vocab_.get(c));
    }

    if (cfg_.use_features) {
      std::vector<TokenFeatures> feats = extract_features(ex.tokens);
      auto clamp = [](int v, int cap) { return std::min(v, cap - 1); };
      for (int i = 0; i < n; ++i) {
        const TokenFeatures& f = feats[i];
        out.f_sent.push_back(clamp(f.sentence, cfg_.sentence_cap));
        out.f_pos.push_back(pos_vocab_.get(f.pos));
        out.f_ner.push_back(ner_vocab_.get(f.ner));
        out.f_recent.push_back(f.recent_person ? 1 : 0);
        out.f_lastsent.push_back(f.last_sentence_person ? 1 : 0);
        out.f_mprev.push_back(f.matches_prev_person ? 1 : 0);
        out.f_mnext.push_back(f.matches_next_person ? 1 : 0);
        out.f_quote.push_back(clamp(f.quote_index, cfg_.quote_cap));
        out.f_speaker.push_back(clamp(f.speaker_order, cfg_.speaker_cap));
      }
    }

    if (cfg_.aux != AuxTask::kNone) {
      out.aux = select_aux_targets(ex.tokens, cfg_.aux_max_types,
                                   cfg_.aux_max_tokens, cfg_.order_classes);
    }

    // Category flags: judged from the context annotations. An answer that
    // never occurs in the context cannot be categorized and keeps all
    // flags off.
    for (int i : out.answer_positions) {
      if (is_entity_token(ex.tokens[i])) {
        out.entity_answer = true;
        break;
      }
    }
    std::vector<QuoteSpan> quotes = find_quotes(ex.tokens);
    attribute_speakers(ex.tokens, quotes);
    bool mask_in_quote = false;
    bool answer_speaks = false;
    for (const QuoteSpan& q : quotes) {
      if (ex.mask > q.open && ex.mask < q.close) mask_in_quote = true;
      if (q.speaker == ex.answer) answer_speaks = true;
    }
    out.quote_answer = out.entity_answer && mask_in_quote;
    out.speaker_answer = out.entity_answer && !mask_in_quote && answer_speaks;
    return out;
  }

  std::vector<CompiledExample> compile(const std::vector<Example>& exs) const {
    std::vector<CompiledExample> out;
    out.reserve(exs.size());
    for (const Example& ex : exs) out.push_back(compile(ex));
    return out;
  }

  // Builds the forward graph for one example. With with_loss the example
  // must have the answer in its context (the pointer-sum likelihood is
  // undefined otherwise).
  ForwardResult forward(Tape& tape, const CompiledExample& ex,
                        const ForwardOptions& opt,
                        bool params_require_grad = true) const {
    return forward_with(tape, ex, opt, bind(tape, store_, params_require_grad));
  }

  // Same, against caller-provided parameter leaves (one per store entry, in
  // store order). This is what the gradient-fidelity harness drives.
  ForwardResult forward_with(Tape& tape, const CompiledExample& ex,
                             const ForwardOptions& opt,
                             BoundParams bound) const {
    if (bound.leaves.size() != store_.size()) {
      throw std::invalid_argument("forward: bound leaves do not match params");
    }
    const int n = ex.size();
    const int d = cfg_.hidden;
    const int h = 2 * d;
    ForwardResult res;
    res.bound = std::move(bound);
    const BoundParams& B = res.bound;
    auto P = [&](const std::string& name) {
      return B.leaves[store_.index_of(name)];
    };

    Tensor emb = P("emb");
    std::vector<Tensor> xs(n);
    if (cfg_.use_features) {
      Tensor bias = P("fuse.bias");
      Tensor t_sent = P("feat.sent"), t_pos = P("feat.pos"), t_ner = P("feat.ner");
      Tensor t_recent = P("feat.recent"), t_lastsent = P("feat.lastsent");
      Tensor t_mprev = P("feat.mprev"), t_mnext = P("feat.mnext");
      Tensor t_quote = P("feat.quote"), t_speaker = P("feat.speaker");
      for (int i = 0; i < n; ++i) {
        Tensor sum = tape.row(emb, ex.words[i]);
        sum = tape.add(sum, tape.row(t_sent, ex.f_sent[i]));
        sum = tape.add(sum, tape.row(t_pos, ex.f_pos[i]));
        sum = tape.add(sum, tape.row(t_ner, ex.f_ner[i]));
        sum = tape.add(sum, tape.row(t_recent, ex.f_recent[i]));
        sum = tape.add(sum, tape.row(t_lastsent, ex.f_lastsent[i]));
        sum = tape.add(sum, tape.row(t_mprev, ex.f_mprev[i]));
        sum = tape.add(sum, tape.row(t_mnext, ex.f_mnext[i]));
        sum = tape.add(sum, tape.row(t_quote, ex.f_quote[i]));
        sum = tape.add(sum, tape.row(t_speaker, ex.f_speaker[i]));
        xs[i] = tape.tanh(tape.add(sum, bias));
      }
    } else {
      for (int i = 0; i < n; ++i) xs[i] = tape.row(emb, ex.words[i]);
    }
    if (opt.train_dropout && cfg_.dropout > 0.0) {
      for (int i = 0; i < n; ++i) xs[i] = tape.dropout(xs[i], cfg_.dropout);
    }

    GruRefs fwd_refs = bind_gru(store_, B, "gru.fwd");
    GruRefs bwd_refs = bind_gru(store_, B, "gru.bwd");
    std::vector<Tensor> fwd = gru_run(tape, fwd_refs, xs, h, false);
    std::vector<Tensor> bwd = gru_run(tape, bwd_refs, xs, h, true);

    // context vectors from the first d units of each direction
    std::vector<Tensor> scores(n);
    Tensor query = build_query(tape, ex, fwd, bwd);
    for (int i = 0; i < n; ++i) {
      Tensor u = tape.concat({tape.slice(fwd[i], 0, d), tape.slice(bwd[i], 0, d)});
      scores[i] = tape.dot(u, query);
    }
    res.attention = tape.softmax(tape.concat(std::span<const Tensor>(scores)));

    if (opt.with_loss) {
      if (ex.answer_positions.empty()) {
        throw std::invalid_argument(
            "forward: answer not in context, pointer-sum loss undefined");
      }
      res.main_loss = tape.neg_log_pick(res.attention, ex.answer_positions);
      res.loss = res.main_loss;
      if (opt.with_aux && cfg_.aux != AuxTask::kNone) {
        Tensor aux = aux_loss(tape, ex, B, fwd, res.aux_targets);
        if (res.aux_targets > 0) {
          res.aux_loss = aux;
          res.loss = tape.add(res.loss, tape.affine(aux, cfg_.gamma, 0.0));
        }
      }
    }
    return res;
  }

  // Attention for one example without touching the loss path.
  std::vector<double> attention(const CompiledExample& ex) const {
    Tape tape;
    ForwardOptions opt;
    opt.with_loss = false;
    opt.with_aux = false;
    ForwardResult r = forward(tape, ex, opt, false);
    return {r.attention.values().begin(), r.attention.values().end()};
  }

  int predict(const CompiledExample& ex) const {
    std::vector<double> att = attention(ex);
    return predict_pointer_sum(ex.words, att, ex.candidate_ids, Vocab::kUnk,
                               vocab_.mask_id());
  }

  // --- persistence ----------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config_to_json(cfg_);
    j["vocab"] = vocab_.words();
    j["pos_vocab"] = pos_vocab_.words();
    j["ner_vocab"] = ner_vocab_.words();
    nlohmann::json params = nlohmann::json::object();
    for (const Param& p : store_.all()) {
      params[p.name] = nlohmann::json{{"shape", p.shape}, {"data", p.value}};
    }
    j["params"] = std::move(params);
    return j;
  }

  static ReaderModel from_json(const nlohmann::json& j) {
    ReaderConfig cfg = config_from_json(j.at("config"));
    ReaderModel model(cfg, Vocab(j.at("vocab").get<std::vector<std::string>>()),
                      Vocab(j.at("pos_vocab").get<std::vector<std::string>>()),
                      Vocab(j.at("ner_vocab").get<std::vector<std::string>>()),
                      0);
    for (Param& p : model.store_.all()) {
      const nlohmann::json& src = j.at("params").at(p.name);
      Shape shape = src.at("shape").get<Shape>();
      if (shape != p.shape) {
        throw std::invalid_argument("model load: shape mismatch for '" +
                                    p.name + "'");
      }
      p.value = src.at("data").get<std::vector<double>>();
      if (static_cast<int64_t>(p.value.size()) != numel(p.shape)) {
        throw std::invalid_argument("model load: value count mismatch for '" +
                                    p.name + "'");
      }
    }
    return model;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json().dump();
  }

  static ReaderModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return from_json(nlohmann::json::parse(in));
  }

  // Initializes the first min(file_dim, emb_dim) embedding dimensions from
  // a whitespace text file of "word v1 v2 ...". Returns the number of
  // vocabulary words that were found in the file.
  int load_pretrained_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Param& emb = store_.at("emb");
    int loaded = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string word;
      ss >> word;
      int id = vocab_.get(word);
      if (id == Vocab::kUnk && word != "<unk>") continue;
      double v;
      int k = 0;
      while (k < cfg_.emb_dim && (ss >> v)) {
        emb.value[static_cast<size_t>(id) * cfg_.emb_dim + k] = v;
        ++k;
      }
      ++loaded;
    }
    return loaded;
  }

 private:
  Tensor build_query(Tape& tape, const CompiledExample& ex,
                     const std::vector<Tensor>& fwd,
                     const std::vector<Tensor>& bwd) const {
    const int n = ex.size();
    const int d = cfg_.hidden;
    const int h = 2 * d;
    if (cfg_.query == QueryMode::kLastWord) {
      return tape.concat({tape.slice(fwd[n - 1], d, h), tape.slice(bwd[0], d, h)});
    }
    Tensor left = ex.mask > 0 ? tape.slice(fwd[ex.mask - 1], d, h)
                              : tape.constant({d}, 0.0);
    Tensor right = ex.mask < n - 1 ? tape.slice(bwd[ex.mask + 1], d, h)
                                   : tape.constant({d}, 0.0);
    return tape.concat({left, right});
  }

  // Mean of the per-target auxiliary losses. Repeat targets score earlier
  // positions bilinearly against the forward states; order targets
  // classify the introduction rank from the forward state at the token.
  Tensor aux_loss(Tape& tape, const CompiledExample& ex, const BoundParams& B,
                  const std::vector<Tensor>& fwd, int& count) const {
    std::vector<Tensor> losses;
    if (cfg_.aux == AuxTask::kRepeat) {
      Tensor bilinear = B.leaves[store_.index_of("aux.bilinear")];
      for (const RepeatTarget& t : ex.aux.repeat) {
        Tensor projected = tape.matmul(bilinear, fwd[t.pos - 1]);
        std::vector<Tensor> scores(t.pos);
        for (int i = 0; i < t.pos; ++i) scores[i] = tape.dot(projected, fwd[i]);
        Tensor att = tape.softmax(tape.concat(std::span<const Tensor>(scores)));
        losses.push_back(tape.neg_log_pick(att, t.antecedents));
      }
    } else if (cfg_.aux == AuxTask::kOrder) {
      Tensor w = B.leaves[store_.index_of("aux.order")];
      for (const OrderTarget& t : ex.aux.order) {
        Tensor probs = tape.softmax(tape.matmul(w, fwd[t.pos]));
        losses.push_back(tape.neg_log_pick(probs, {t.klass}));
      }
    }
    count = static_cast<int>(losses.size());
    if (losses.empty()) return Tensor();
    Tensor sum = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) sum = tape.add(sum, losses[i]);
    return tape.affine(sum, 1.0 / static_cast<double>(losses.size()), 0.0);
  }

  ReaderConfig cfg_;
  Vocab vocab_, pos_vocab_, ner_vocab_;
  ParamStore store_;
};

}  // namespace entrack
