#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "entrack/adam.hpp"
#include "entrack/eval.hpp"
#include "entrack/model.hpp"

namespace entrack {

struct TrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  uint64_t seed = 1;
  bool shuffle = true;
  // stop once training accuracy reaches this level (checked per epoch,
  // disabled when <= 0); implies tracking train accuracy
  double stop_at_train_acc = -1.0;
  bool track_train_acc = false;
  std::ostream* log = nullptr;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = -1.0;  // -1 when not tracked
  double val_acc = -1.0;    // -1 when no validation set
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_acc = -1.0;
};

// Formats a double so that the printed value round-trips exactly; epoch
// logs are compared byte for byte in the determinism checks.
inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Per-example ADAM training with define-by-run graphs. Deterministic for a
// fixed config and seed: example order, dropout masks, and parameter
// updates all derive from the one seed. The model is left holding the
// parameters of the epoch with the best validation accuracy (earliest such
// epoch on ties); with no validation set, the final parameters stay.
inline TrainResult train(ReaderModel& model,
                         const std::vector<CompiledExample>& train_set,
                         const std::vector<CompiledExample>& val_set,
                         const TrainConfig& cfg) {
  if (train_set.empty()) {
    throw std::invalid_argument("train: empty training set");
  }
  for (const CompiledExample& ex : train_set) {
    if (ex.answer_positions.empty()) {
      throw std::invalid_argument(
          "train: an example lacks the answer in its context; filter the "
          "training split first");
    }
  }

  Rng rng(cfg.seed);
  Adam adam(AdamConfig{.lr = cfg.lr});
  TrainResult result;

  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<double> best_snapshot;
  ForwardOptions fwd_opt;
  fwd_opt.with_loss = true;
  fwd_opt.with_aux = true;
  fwd_opt.train_dropout = true;

  Tape tape;
  bool track_train = cfg.track_train_acc || cfg.stop_at_train_acc > 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    for (int idx : order) {
      // fresh record per step, seeded for reproducible dropout
      tape.reset();
      tape.reseed(rng.fork());
      const CompiledExample& ex = train_set[idx];
      ForwardResult fr = model.forward(tape, ex, fwd_opt, true);
      loss_sum += fr.loss.scalar();
      GradientMap grads = tape.backward(fr.loss);
      std::vector<std::span<const double>> per_param;
      per_param.reserve(model.params().size());
      for (size_t p = 0; p < model.params().size(); ++p) {
        per_param.push_back(grads.at(fr.bound.leaves[p]));
      }
      adam.step(model.params(), per_param);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(train_set.size());
    if (track_train) {
      int correct = 0;
      for (const CompiledExample& ex : train_set) {
        int id = model.predict(ex);
        if (id >= 0 && model.vocab().word(id) == ex.answer) ++correct;
      }
      stats.train_acc = static_cast<double>(correct) / train_set.size();
    }
    if (!val_set.empty()) {
      int correct = 0;
      for (const CompiledExample& ex : val_set) {
        int id = model.predict(ex);
        if (id >= 0 && model.vocab().word(id) == ex.answer) ++correct;
      }
      stats.val_acc = static_cast<double>(correct) / val_set.size();
      if (stats.val_acc > result.best_val_acc) {
        result.best_val_acc = stats.val_acc;
        result.best_epoch = epoch;
        best_snapshot.clear();
        for (const Param& p : model.params().all()) {
          best_snapshot.insert(best_snapshot.end(), p.value.begin(),
                               p.value.end());
        }
      }
    }
    result.history.push_back(stats);
    if (cfg.log != nullptr) {
      *cfg.log << "epoch " << epoch << " loss " << format_exact(stats.mean_loss);
      if (stats.train_acc >= 0.0) {
        *cfg.log << " train_acc " << format_exact(stats.train_acc);
      }
      if (stats.val_acc >= 0.0) {
        *cfg.log << " val_acc " << format_exact(stats.val_acc);
      }
      *cfg.log << "\n";
    }
    if (cfg.stop_at_train_acc > 0.0 && stats.train_acc >= cfg.stop_at_train_acc) {
      break;
    }
  }

  if (!best_snapshot.empty()) {
    size_t off = 0;
    for (Param& p : model.params().all()) {
      std::copy(best_snapshot.begin() + off,
                best_snapshot.begin() + off + p.value.size(), p.value.begin());
      off += p.value.size();
    }
  }
  return result;
}

// --- random hyperparameter search -----------------------------------------

struct SearchSpace {
  std::vector<double> lr{3e-4, 1e-3, 3e-3};
  std::vector<double> dropout{0.0, 0.1, 0.2};
  std::vector<double> gamma{0.25, 0.5, 1.0};
  std::vector<int> hidden{8, 16, 32};
  std::vector<int> emb_dim{16, 32, 64};
  std::vector<int> aux_max_types{2, 4, 6};
  std::vector<int> aux_max_tokens{1, 2, 3};
};

struct SearchTrial {
  ReaderConfig config;
  double lr = 0.0;
  double val_acc = 0.0;
};

struct SearchResult {
  std::vector<SearchTrial> trials;
  int best = -1;
};

// Samples configurations uniformly from the space, trains each from a
// derived seed, and ranks by validation accuracy.
inline SearchResult random_search(const ReaderConfig& base,
                                  const SearchSpace& space,
                                  const std::vector<Example>& train_set,
                                  const std::vector<Example>& val_set,
                                  const Vocab& vocab, const Vocab& pos_vocab,
                                  const Vocab& ner_vocab, int trials,
                                  int epochs, uint64_t seed,
                                  std::ostream* log = nullptr) {
  if (trials < 1) throw std::invalid_argument("search: trials must be >= 1");
  Rng rng(seed);
  SearchResult out;
  for (int t = 0; t < trials; ++t) {
    ReaderConfig cfg = base;
    cfg.hidden = rng.choice(space.hidden);
    cfg.emb_dim = rng.choice(space.emb_dim);
    cfg.dropout = rng.choice(space.dropout);
    if (cfg.aux != AuxTask::kNone) {
      cfg.gamma = rng.choice(space.gamma);
      cfg.aux_max_types = rng.choice(space.aux_max_types);
      cfg.aux_max_tokens = rng.choice(space.aux_max_tokens);
    }
    SearchTrial trial;
    trial.config = cfg;
    trial.lr = rng.choice(space.lr);

    ReaderModel model(cfg, vocab, pos_vocab, ner_vocab, rng.fork());
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = trial.lr;
    tc.seed = rng.fork();
    TrainResult tr = train(model, model.compile(train_set),
                           model.compile(val_set), tc);
    trial.val_acc = tr.best_val_acc;
    out.trials.push_back(trial);
    if (out.best < 0 || trial.val_acc > out.trials[out.best].val_acc) {
      out.best = t;
    }
    if (log != nullptr) {
      *log << "trial " << t << " hidden " << cfg.hidden << " emb "
           << cfg.emb_dim << " lr " << trial.lr << " dropout " << cfg.dropout
           << " gamma " << cfg.gamma << " val_acc " << trial.val_acc << "\n";
    }
  }
  return out;
}

}  // namespace entrack
