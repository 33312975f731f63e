#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "entrack/aux.hpp"
#include "entrack/model.hpp"

using namespace entrack;

namespace {

std::vector<Token> toks(const std::vector<std::string>& words) {
  std::vector<Token> out;
  for (const std::string& w : words) out.push_back(Token{w, "", ""});
  annotate(out, Gazetteer::builtin());
  return out;
}

}  // namespace

TEST_CASE("repeat targets require an identical earlier mention") {
  // amy: 0, 3, 6; julie: 2; marsh: 8
  auto t = toks({"amy", "met", "julie", "amy", "and", "then", "amy", "met",
                 "marsh", "."});
  AuxTargets targets = select_aux_targets(t, 8, 8, 8);
  REQUIRE(targets.repeat.size() == 2);
  CHECK(targets.repeat[0].pos == 3);
  CHECK(targets.repeat[0].antecedents == std::vector<int>{0});
  CHECK(targets.repeat[1].pos == 6);
  CHECK(targets.repeat[1].antecedents == std::vector<int>{0, 3});
}

TEST_CASE("caps limit distinct types and tokens per type") {
  // four types, each repeated: amy, julie, marsh, tom
  auto t = toks({"amy", "julie", "marsh", "tom", "amy", "julie", "marsh",
                 "tom", "amy", "julie"});
  AuxTargets all = select_aux_targets(t, 8, 8, 8);
  CHECK(all.repeat.size() == 2 + 2 + 1 + 1);

  AuxTargets capped_types = select_aux_targets(t, 2, 8, 8);
  for (const RepeatTarget& r : capped_types.repeat) {
    CHECK((t[r.pos].word == "amy" || t[r.pos].word == "julie"));
  }
  CHECK(capped_types.repeat.size() == 4);

  AuxTargets capped_tokens = select_aux_targets(t, 8, 1, 8);
  CHECK(capped_tokens.repeat.size() == 4);  // one target per type
  CHECK(capped_tokens.repeat[0].pos == 4);  // first repeat of amy

  // a type with a single occurrence does not consume a type slot
  auto t2 = toks({"amy", "julie", "julie", "."});
  AuxTargets slots = select_aux_targets(t2, 1, 8, 8);
  REQUIRE(slots.repeat.size() == 1);
  CHECK(t2[slots.repeat[0].pos].word == "julie");
}

TEST_CASE("order targets carry the introduction rank as the class") {
  auto t = toks({"amy", "julie", "amy", "marsh", "julie", "."});
  AuxTargets targets = select_aux_targets(t, 8, 8, 8);
  REQUIRE(targets.order.size() == 5);
  CHECK(targets.order[0].pos == 0);
  CHECK(targets.order[0].klass == 0);
  CHECK(targets.order[1].pos == 2);
  CHECK(targets.order[1].klass == 0);
  CHECK(targets.order[2].pos == 1);
  CHECK(targets.order[2].klass == 1);
  CHECK(targets.order[3].pos == 4);
  CHECK(targets.order[3].klass == 1);
  CHECK(targets.order[4].pos == 3);
  CHECK(targets.order[4].klass == 2);

  // ranks beyond the classifier are dropped
  AuxTargets limited = select_aux_targets(t, 8, 8, 2);
  CHECK(limited.order.size() == 4);
  for (const OrderTarget& o : limited.order) CHECK(o.klass < 2);
}

TEST_CASE("documents without entities yield no auxiliary supervision") {
  auto t = toks({"the", "lamp", "fell", "."});
  AuxTargets targets = select_aux_targets(t, 4, 2, 4);
  CHECK(targets.repeat.empty());
  CHECK(targets.order.empty());
}

TEST_CASE("order loss with zero classifier equals log K") {
  for (int K : {2, 5, 7}) {
    Example ex;
    for (const char* w : {"amy", "saw", "amy", "again"}) {
      ex.tokens.push_back(Token{w, "", ""});
    }
    ex.tokens.push_back(Token{kMaskToken, "", ""});
    ex.mask = 4;
    ex.answer = "amy";
    annotate(ex.tokens, Gazetteer::builtin());

    Vocab vocab, pos, ner;
    for (const Token& t : ex.tokens) {
      vocab.add(t.word);
      pos.add(t.pos);
      ner.add(t.ner);
    }
    ReaderConfig cfg;
    cfg.emb_dim = 6;
    cfg.hidden = 3;
    cfg.aux = AuxTask::kOrder;
    cfg.order_classes = K;
    cfg.aux_max_tokens = 1;  // a single order target: amy -> class 0
    cfg.gamma = 1.0;
    ReaderModel model(cfg, vocab, pos, ner, 99);
    // "aux.order" starts at zero by construction
    for (double v : model.params().at("aux.order").value) REQUIRE(v == 0.0);

    Tape tape;
    ForwardOptions opt;
    ForwardResult r = model.forward(tape, model.compile(ex), opt, false);
    REQUIRE(r.aux_targets == 1);
    CHECK(std::fabs(r.aux_loss.scalar() - std::log(static_cast<double>(K))) <
          1e-9);
  }
}

namespace {

// Scalar re-implementation of the forward GRU, independent of the tape.
struct ScalarGru {
  int h, e;
  const ParamStore& store;
  std::string prefix;

  std::vector<double> matvec(const std::string& name,
                             const std::vector<double>& x) const {
    const Param& p = store.at(prefix + name);
    std::vector<double> out(p.shape[0], 0.0);
    for (int i = 0; i < p.shape[0]; ++i) {
      for (int j = 0; j < p.shape[1]; ++j) {
        out[i] += p.value[i * p.shape[1] + j] * x[j];
      }
    }
    return out;
  }

  std::vector<double> step(const std::vector<double>& x,
                           const std::vector<double>& hp) const {
    auto gate = [&](const char* w, const char* u, const char* b,
                    const std::vector<double>& hin) {
      std::vector<double> wv = matvec(w, x);
      std::vector<double> uv = matvec(u, hin);
      const Param& bias = store.at(prefix + b);
      std::vector<double> out(h);
      for (int i = 0; i < h; ++i) out[i] = wv[i] + uv[i] + bias.value[i];
      return out;
    };
    std::vector<double> z = gate(".Wz", ".Uz", ".bz", hp);
    std::vector<double> r = gate(".Wr", ".Ur", ".br", hp);
    for (int i = 0; i < h; ++i) {
      z[i] = 1.0 / (1.0 + std::exp(-z[i]));
      r[i] = 1.0 / (1.0 + std::exp(-r[i]));
    }
    std::vector<double> rh(h);
    for (int i = 0; i < h; ++i) rh[i] = r[i] * hp[i];
    std::vector<double> c = gate(".Wc", ".Uc", ".bc", rh);
    std::vector<double> out(h);
    for (int i = 0; i < h; ++i) {
      double ct = std::tanh(c[i]);
      out[i] = (1.0 - z[i]) * hp[i] + z[i] * ct;
    }
    return out;
  }
};

}  // namespace

TEST_CASE("repeat loss matches an independent scalar recomputation") {
  Example ex;
  for (const char* w : {"amy", "met", "amy", "."}) {
    ex.tokens.push_back(Token{w, "", ""});
  }
  ex.tokens.push_back(Token{kMaskToken, "", ""});
  ex.mask = 4;
  ex.answer = "amy";
  annotate(ex.tokens, Gazetteer::builtin());

  Vocab vocab, pos, ner;
  for (const Token& t : ex.tokens) {
    vocab.add(t.word);
    pos.add(t.pos);
    ner.add(t.ner);
  }
  ReaderConfig cfg;
  cfg.emb_dim = 5;
  cfg.hidden = 2;
  cfg.aux = AuxTask::kRepeat;
  cfg.gamma = 0.25;
  ReaderModel model(cfg, vocab, pos, ner, 1234);

  Tape tape;
  ForwardOptions opt;
  CompiledExample compiled = model.compile(ex);
  REQUIRE(compiled.aux.repeat.size() == 1);
  CHECK(compiled.aux.repeat[0].pos == 2);
  ForwardResult r = model.forward(tape, compiled, opt, false);
  CHECK(r.aux_targets == 1);

  // Oracle: run the forward GRU by hand and score positions 0 and 1
  // against the state at position 1 through the bilinear map. The target
  // antecedent is position 0.
  const int h = 4, e = 5;
  const Param& emb = model.params().at("emb");
  ScalarGru gru{h, e, model.params(), "gru.fwd"};
  std::vector<std::vector<double>> states;
  std::vector<double> hidden(h, 0.0);
  for (int i = 0; i < compiled.size(); ++i) {
    std::vector<double> x(e);
    for (int k = 0; k < e; ++k) x[k] = emb.value[compiled.words[i] * e + k];
    hidden = gru.step(x, hidden);
    states.push_back(hidden);
  }
  const Param& bilinear = model.params().at("aux.bilinear");
  std::vector<double> projected(h, 0.0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < h; ++j) {
      projected[i] += bilinear.value[i * h + j] * states[1][j];
    }
  }
  double s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < h; ++i) {
    s0 += projected[i] * states[0][i];
    s1 += projected[i] * states[1][i];
  }
  double mx = std::max(s0, s1);
  double z0 = std::exp(s0 - mx), z1 = std::exp(s1 - mx);
  double expected = -std::log(z0 / (z0 + z1));
  CHECK(r.aux_loss.scalar() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.loss.scalar() ==
        doctest::Approx(r.main_loss.scalar() + 0.25 * r.aux_loss.scalar())
            .epsilon(1e-12));
}
