#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "entrack/synth.hpp"
#include "entrack/trainer.hpp"

using namespace entrack;

namespace {

struct Built {
  ReaderModel model;
  std::vector<CompiledExample> train;
  std::vector<CompiledExample> val;
};

Built build(const ReaderConfig& cfg, const Corpus& corpus, uint64_t seed) {
  Vocab vocab, pos, ner;
  pos.add("O");
  ner.add("O");
  for (const std::vector<Example>* split : {&corpus.train, &corpus.val}) {
    for (const Example& ex : *split) {
      for (const Token& t : ex.tokens) {
        vocab.add(t.word);
        pos.add(t.pos);
        ner.add(t.ner);
      }
    }
  }
  ReaderModel model(cfg, vocab, pos, ner, seed);
  std::vector<CompiledExample> train = model.compile(corpus.train);
  std::vector<CompiledExample> val = model.compile(corpus.val);
  return Built{std::move(model), std::move(train), std::move(val)};
}

}  // namespace

TEST_CASE("adam steps match the update formula") {
  ParamStore store;
  Param& p = store.add("w", {2});
  p.value = {1.0, 2.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam adam(cfg);
  std::vector<double> grad{0.5, -1.0};

  // independent recomputation
  double m[2] = {0, 0}, v[2] = {0, 0}, expect[2] = {1.0, 2.0};
  for (int t = 1; t <= 3; ++t) {
    std::vector<std::span<const double>> grads{std::span<const double>(grad)};
    adam.step(store, grads);
    for (int k = 0; k < 2; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * grad[k];
      v[k] = 0.999 * v[k] + 0.001 * grad[k] * grad[k];
      double mhat = m[k] / (1.0 - std::pow(0.9, t));
      double vhat = v[k] / (1.0 - std::pow(0.999, t));
      expect[k] -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
      CHECK(store.at("w").value[k] == doctest::Approx(expect[k]).epsilon(1e-14));
    }
  }
  CHECK(adam.steps() == 3);

  std::vector<std::span<const double>> bad{std::span<const double>()};
  CHECK_NOTHROW(adam.step(store, bad));  // empty span skips the param
  std::vector<double> wrong_size{1.0};
  std::vector<std::span<const double>> mismatch{std::span<const double>(wrong_size)};
  CHECK_THROWS_AS(adam.step(store, mismatch), std::invalid_argument);
}

TEST_CASE("training is deterministic for a fixed seed") {
  GenConfig gen;
  gen.train = 16;
  gen.val = 8;
  gen.seed = 31;
  Corpus corpus = generate_corpus(gen);
  ReaderConfig cfg;
  cfg.emb_dim = 10;
  cfg.hidden = 4;
  cfg.dropout = 0.2;

  auto run = [&](uint64_t train_seed) {
    Built b = build(cfg, corpus, 7);
    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 3e-3;
    tc.seed = train_seed;
    TrainResult r = train(b.model, b.train, b.val, tc);
    std::vector<double> losses;
    for (const EpochStats& s : r.history) losses.push_back(s.mean_loss);
    return losses;
  };

  std::vector<double> a = run(5);
  std::vector<double> b = run(5);
  std::vector<double> c = run(6);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  bool any_diff = false;
  for (size_t i = 0; i < std::min(a.size(), c.size()); ++i) {
    any_diff = any_diff || a[i] != c[i];
  }
  CHECK(any_diff);
}

TEST_CASE("training rejects unanswerable examples and empty sets") {
  GenConfig gen;
  gen.train = 4;
  gen.val = 0;
  gen.seed = 1;
  Corpus corpus = generate_corpus(gen);
  ReaderConfig cfg;
  cfg.emb_dim = 6;
  cfg.hidden = 3;
  Built b = build(cfg, corpus, 3);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(b.model, {}, b.val, tc), std::invalid_argument);
  std::vector<CompiledExample> broken = b.train;
  broken[0].answer_positions.clear();
  CHECK_THROWS_AS(train(b.model, broken, b.val, tc), std::invalid_argument);
}

TEST_CASE("the model keeps the parameters of the best validation epoch") {
  GenConfig gen;
  gen.train = 24;
  gen.val = 12;
  gen.seed = 17;
  Corpus corpus = generate_corpus(gen);
  ReaderConfig cfg;
  cfg.emb_dim = 10;
  cfg.hidden = 4;
  Built b = build(cfg, corpus, 11);
  TrainConfig tc;
  tc.epochs = 4;
  tc.lr = 5e-3;
  tc.seed = 2;
  TrainResult r = train(b.model, b.train, b.val, tc);
  REQUIRE(r.best_epoch >= 0);
  int correct = 0;
  for (const CompiledExample& ex : b.val) {
    int id = b.model.predict(ex);
    if (id >= 0 && b.model.vocab().word(id) == ex.answer) ++correct;
  }
  double acc = static_cast<double>(correct) / b.val.size();
  CHECK(acc == doctest::Approx(r.best_val_acc));
  CHECK(r.best_val_acc >= r.history.front().val_acc);
}

TEST_CASE("a tiny model overfits a tiny corpus") {
  GenConfig gen;
  gen.train = 8;
  gen.val = 0;
  gen.seed = 23;
  gen.min_turns = 2;
  gen.max_turns = 3;
  Corpus corpus = generate_corpus(gen);
  ReaderConfig cfg;
  cfg.emb_dim = 16;
  cfg.hidden = 8;
  Built b = build(cfg, corpus, 19);
  TrainConfig tc;
  tc.epochs = 80;
  tc.lr = 5e-3;
  tc.seed = 4;
  tc.stop_at_train_acc = 1.0;
  TrainResult r = train(b.model, b.train, {}, tc);
  CHECK(r.history.back().train_acc >= 0.99);
  CHECK(static_cast<int>(r.history.size()) < 80);  // early stop fired
}

TEST_CASE("epoch log lines are stable and exact") {
  GenConfig gen;
  gen.train = 6;
  gen.val = 3;
  gen.seed = 41;
  Corpus corpus = generate_corpus(gen);
  ReaderConfig cfg;
  cfg.emb_dim = 8;
  cfg.hidden = 3;

  auto run = [&] {
    Built b = build(cfg, corpus, 9);
    std::ostringstream log;
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 8;
    tc.log = &log;
    train(b.model, b.train, b.val, tc);
    return log.str();
  };
  std::string first = run();
  std::string second = run();
  CHECK(first == second);
  CHECK(first.find("epoch 0 loss ") != std::string::npos);
  CHECK(first.find("val_acc") != std::string::npos);
}

TEST_CASE("random search is deterministic and ranks by validation accuracy") {
  GenConfig gen;
  gen.train = 12;
  gen.val = 6;
  gen.seed = 51;
  Corpus corpus = generate_corpus(gen);
  Vocab vocab, pos, ner;
  pos.add("O");
  ner.add("O");
  for (const std::vector<Example>* split : {&corpus.train, &corpus.val}) {
    for (const Example& ex : *split) {
      for (const Token& t : ex.tokens) {
        vocab.add(t.word);
        pos.add(t.pos);
        ner.add(t.ner);
      }
    }
  }
  ReaderConfig base;
  SearchSpace space;
  space.hidden = {3, 4};
  space.emb_dim = {6, 8};
  SearchResult r1 = random_search(base, space, corpus.train, corpus.val, vocab,
                                  pos, ner, 3, 2, 105);
  SearchResult r2 = random_search(base, space, corpus.train, corpus.val, vocab,
                                  pos, ner, 3, 2, 105);
  REQUIRE(r1.trials.size() == 3);
  CHECK(r1.best == r2.best);
  for (int t = 0; t < 3; ++t) {
    CHECK(r1.trials[t].val_acc == r2.trials[t].val_acc);
    CHECK(r1.trials[t].config.hidden == r2.trials[t].config.hidden);
    CHECK(r1.trials[t].val_acc <= r1.trials[r1.best].val_acc);
  }
  CHECK_THROWS_AS(random_search(base, space, corpus.train, corpus.val, vocab,
                                pos, ner, 0, 1, 1),
                  std::invalid_argument);
}
