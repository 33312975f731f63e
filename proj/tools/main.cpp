// Command-line front end: corpus generation, preprocessing, feature dumps,
// training, evaluation, and paired significance testing.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "entrack/data.hpp"
#include "entrack/eval.hpp"
#include "entrack/gradcheck.hpp"
#include "entrack/model.hpp"
#include "entrack/synth.hpp"
#include "entrack/text.hpp"
#include "entrack/trainer.hpp"

using namespace entrack;

namespace {

Gazetteer load_gazetteer(const std::string& path) {
  Gazetteer gaz = Gazetteer::make_builtin();
  if (path.empty()) return gaz;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gazetteer " + path);
  std::string name;
  while (in >> name) gaz.add(name);
  return gaz;
}

std::vector<Example> load_split(const std::string& path,
                                const std::string& format,
                                const Gazetteer& gaz) {
  std::vector<Example> out = format == "text" ? load_examples_text(path)
                                              : load_examples_jsonl(path);
  annotate_examples(out, gaz);
  return out;
}

struct ModelFlags {
  int emb_dim = 32;
  int hidden = 16;
  bool features = false;
  std::string aux = "none";
  double gamma = 0.5;
  int aux_types = 4;
  int aux_tokens = 2;
  int order_classes = 8;
  double dropout = 0.0;
  std::string query = "last";

  void attach(CLI::App* cmd) {
    cmd->add_option("--emb", emb_dim, "word embedding size");
    cmd->add_option("--hidden", hidden, "context/query split size d");
    cmd->add_flag("--features", features, "use the word-level feature set");
    cmd->add_option("--aux", aux, "auxiliary task: none|repeat|order")
        ->check(CLI::IsMember({"none", "repeat", "order"}));
    cmd->add_option("--gamma", gamma, "auxiliary loss weight");
    cmd->add_option("--aux-types", aux_types, "entity types per document");
    cmd->add_option("--aux-tokens", aux_tokens, "tokens per entity type");
    cmd->add_option("--order-classes", order_classes,
                    "classes of the order-index task");
    cmd->add_option("--dropout", dropout, "input dropout rate");
    cmd->add_option("--query", query, "query mode: last|anywhere")
        ->check(CLI::IsMember({"last", "anywhere"}));
  }

  ReaderConfig to_config() const {
    ReaderConfig cfg;
    cfg.emb_dim = emb_dim;
    cfg.hidden = hidden;
    cfg.use_features = features;
    cfg.aux = aux_task_from_name(aux);
    cfg.gamma = gamma;
    cfg.aux_max_types = aux_types;
    cfg.aux_max_tokens = aux_tokens;
    cfg.order_classes = order_classes;
    cfg.dropout = dropout;
    cfg.query = query == "last" ? QueryMode::kLastWord : QueryMode::kAnywhere;
    validate_config(cfg);
    return cfg;
  }
};

void build_vocabs(const std::vector<Example>& train, Vocab& vocab, Vocab& pos,
                  Vocab& ner) {
  pos.add("O");
  ner.add("O");
  for (const Example& ex : train) {
    for (const Token& t : ex.tokens) {
      vocab.add(t.word);
      pos.add(t.pos);
      ner.add(t.ner);
    }
  }
}

void print_report(std::ostream& os, const AccuracyReport& rep) {
  auto line = [&os](const char* name, const CategoryAccuracy& c) {
    os << name << " " << format_exact(c.accuracy()) << " (" << c.correct << "/"
       << c.total << ")\n";
  };
  line("all", rep.all);
  line("entity", rep.entity);
  line("speaker", rep.speaker);
  line("quote", rep.quote);
}

int cmd_gen(const GenConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Corpus corpus = generate_corpus(cfg);
  save_examples_jsonl(out_dir + "/train.jsonl", corpus.train);
  save_examples_jsonl(out_dir + "/valid.jsonl", corpus.val);
  if (!corpus.test.empty()) {
    save_examples_jsonl(out_dir + "/test.jsonl", corpus.test);
  }
  std::cout << "wrote " << corpus.train.size() << " train, "
            << corpus.val.size() << " valid, " << corpus.test.size()
            << " test examples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entity-tracking attention-sum reader"};
  app.require_subcommand(1);

  // --- gen -------------------------------------------------------------
  GenConfig gen_cfg;
  std::string gen_out = "corpus";
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dialogue corpus");
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--train", gen_cfg.train, "training examples");
  gen->add_option("--val", gen_cfg.val, "validation examples");
  gen->add_option("--test", gen_cfg.test, "test examples");
  gen->add_option("--entity-answer-ratio", gen_cfg.entity_answer_ratio,
                  "share of examples with an entity answer");
  gen->add_option("--seed", gen_cfg.seed, "generator seed");
  gen->add_option("--name-pool", gen_cfg.name_pool, "distinct person names");
  gen->add_option("--min-turns", gen_cfg.min_turns, "min dialogue turns");
  gen->add_option("--max-turns", gen_cfg.max_turns, "max dialogue turns");
  gen->add_option("--unattributed-prob", gen_cfg.unattributed_prob,
                  "chance a middle turn drops its attribution");
  gen->add_option("--bystander-prob", gen_cfg.bystander_prob,
                  "chance of a third non-speaking person");
  gen->add_option("--handoff-prob", gen_cfg.handoff_prob,
                  "entity share answered by object handoff");

  // --- prep ------------------------------------------------------------
  std::string prep_in, prep_out, prep_format = "jsonl", prep_gaz;
  bool prep_filter = false, prep_anon = false;
  int prep_pool = 0;
  uint64_t prep_seed = 0;
  CLI::App* prep = app.add_subcommand("prep", "annotate, filter and anonymize a split");
  prep->add_option("--in", prep_in, "input file")->required();
  prep->add_option("--out", prep_out, "output jsonl file")->required();
  prep->add_option("--format", prep_format, "input format: jsonl|text")
      ->check(CLI::IsMember({"jsonl", "text"}));
  prep->add_flag("--train-filter", prep_filter,
                 "drop examples whose answer is not in the context");
  prep->add_flag("--anonymize", prep_anon, "replace entities with placeholders");
  prep->add_option("--placeholder-pool", prep_pool,
                   "anonymize from a shuffled placeholder pool of this size");
  prep->add_option("--seed", prep_seed, "seed for placeholder shuffling");
  prep->add_option("--gazetteer", prep_gaz, "extra person names, one per line");

  // --- features ----------------------------------------------------------
  std::string feat_in, feat_format = "passage", feat_gaz;
  int feat_index = 0;
  CLI::App* feat = app.add_subcommand("features", "print the word-level feature table");
  feat->add_option("--in", feat_in, "input file")->required();
  feat->add_option("--format", feat_format, "passage|jsonl|text")
      ->check(CLI::IsMember({"passage", "jsonl", "text"}));
  feat->add_option("--index", feat_index, "example index for jsonl/text input");
  feat->add_option("--gazetteer", feat_gaz, "extra person names, one per line");

  // --- train -------------------------------------------------------------
  ModelFlags train_flags;
  std::string train_train, train_val, train_save, train_format = "jsonl";
  std::string train_embeddings, train_gaz;
  int train_epochs = 20;
  double train_lr = 1e-3;
  uint64_t train_seed = 1, train_init_seed = 42;
  bool no_filter = false;
  double stop_acc = -1.0;
  CLI::App* tr = app.add_subcommand("train", "train a reader");
  tr->add_option("--train", train_train, "training jsonl")->required();
  tr->add_option("--val", train_val, "validation jsonl");
  tr->add_option("--save", train_save, "write the trained model here");
  tr->add_option("--format", train_format, "input format: jsonl|text")
      ->check(CLI::IsMember({"jsonl", "text"}));
  tr->add_option("--epochs", train_epochs, "training epochs");
  tr->add_option("--lr", train_lr, "adam learning rate");
  tr->add_option("--seed", train_seed, "training seed (order, dropout)");
  tr->add_option("--init-seed", train_init_seed, "parameter init seed");
  tr->add_option("--embeddings", train_embeddings,
                 "pretrained embedding text file for the leading dimensions");
  tr->add_option("--gazetteer", train_gaz, "extra person names, one per line");
  tr->add_flag("--no-train-filter", no_filter,
               "keep training examples whose answer is absent");
  tr->add_option("--stop-at-train-acc", stop_acc,
                 "stop once training accuracy reaches this value");
  train_flags.attach(tr);

  // --- eval ----------------------------------------------------------------
  std::string eval_model, eval_data, eval_out, eval_format = "jsonl", eval_gaz;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a saved model");
  ev->add_option("--model", eval_model, "model json")->required();
  ev->add_option("--data", eval_data, "examples to evaluate")->required();
  ev->add_option("--out", eval_out, "write per-example predictions here");
  ev->add_option("--format", eval_format, "input format: jsonl|text")
      ->check(CLI::IsMember({"jsonl", "text"}));
  ev->add_option("--gazetteer", eval_gaz, "extra person names, one per line");

  // --- compare ----------------------------------------------------------
  std::string cmp_a, cmp_b;
  double cmp_alpha = 0.05;
  CLI::App* cmp = app.add_subcommand(
      "compare", "McNemar test between two prediction files");
  cmp->add_option("--first", cmp_a, "first predictions jsonl")->required();
  cmp->add_option("--second", cmp_b, "second predictions jsonl")->required();
  cmp->add_option("--alpha", cmp_alpha, "significance level");

  // --- gradcheck ----------------------------------------------------------
  int gc_hidden = 4, gc_emb = 6, gc_examples = 2;
  CLI::App* gc = app.add_subcommand(
      "gradcheck", "finite-difference check of the full training losses");
  gc->add_option("--hidden", gc_hidden, "context/query split size d");
  gc->add_option("--emb", gc_emb, "embedding size");
  gc->add_option("--examples", gc_examples, "examples per configuration");

  // --- search ----------------------------------------------------------
  ModelFlags search_flags;
  std::string search_train, search_val;
  int search_trials = 8, search_epochs = 5;
  uint64_t search_seed = 1;
  CLI::App* sr = app.add_subcommand("search", "random hyperparameter search");
  sr->add_option("--train", search_train, "training jsonl")->required();
  sr->add_option("--val", search_val, "validation jsonl")->required();
  sr->add_option("--trials", search_trials, "search trials");
  sr->add_option("--epochs", search_epochs, "epochs per trial");
  sr->add_option("--seed", search_seed, "search seed");
  search_flags.attach(sr);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_cfg, gen_out);

    if (prep->parsed()) {
      Gazetteer gaz = load_gazetteer(prep_gaz);
      std::vector<Example> examples = load_split(prep_in, prep_format, gaz);
      size_t before = examples.size();
      if (prep_filter) examples = filter_answer_in_context(examples);
      if (prep_anon) {
        if (prep_pool > 0) {
          Rng rng(prep_seed);
          anonymize_examples(examples, &rng, prep_pool);
        } else {
          anonymize_examples(examples);
        }
      }
      save_examples_jsonl(prep_out, examples);
      std::cout << "kept " << examples.size() << " of " << before
                << " examples\n";
      return 0;
    }

    if (feat->parsed()) {
      Gazetteer gaz = load_gazetteer(feat_gaz);
      std::vector<Token> tokens;
      if (feat_format == "passage") {
        tokens = load_passage_json(feat_in);
      } else {
        std::vector<Example> examples = load_split(feat_in, feat_format, gaz);
        if (feat_index < 0 || feat_index >= static_cast<int>(examples.size())) {
          throw std::runtime_error("example index out of range");
        }
        tokens = examples[feat_index].tokens;
      }
      annotate(tokens, gaz);
      std::cout << format_feature_table(tokens, extract_features(tokens));
      return 0;
    }

    if (tr->parsed()) {
      Gazetteer gaz = load_gazetteer(train_gaz);
      std::vector<Example> train_set = load_split(train_train, train_format, gaz);
      std::vector<Example> val_set;
      if (!train_val.empty()) val_set = load_split(train_val, train_format, gaz);
      if (!no_filter) {
        size_t before = train_set.size();
        train_set = filter_answer_in_context(train_set);
        std::cout << "train filter kept " << train_set.size() << " of "
                  << before << "\n";
      }
      Vocab vocab, pos, ner;
      build_vocabs(train_set, vocab, pos, ner);
      ReaderModel model(train_flags.to_config(), vocab, pos, ner,
                        train_init_seed);
      if (!train_embeddings.empty()) {
        int loaded = model.load_pretrained_embeddings(train_embeddings);
        std::cout << "initialized " << loaded << " embeddings from "
                  << train_embeddings << "\n";
      }
      TrainConfig tc;
      tc.epochs = train_epochs;
      tc.lr = train_lr;
      tc.seed = train_seed;
      tc.stop_at_train_acc = stop_acc;
      tc.log = &std::cout;
      TrainResult result = train(model, model.compile(train_set),
                                 model.compile(val_set), tc);
      if (result.best_epoch >= 0) {
        std::cout << "best_epoch " << result.best_epoch << " best_val_acc "
                  << format_exact(result.best_val_acc) << "\n";
      }
      if (!train_save.empty()) {
        model.save(train_save);
        std::cout << "saved model to " << train_save << "\n";
      }
      return 0;
    }

    if (ev->parsed()) {
      Gazetteer gaz = load_gazetteer(eval_gaz);
      ReaderModel model = ReaderModel::load(eval_model);
      std::vector<Example> data = load_split(eval_data, eval_format, gaz);
      std::vector<PredictionRecord> records =
          evaluate(model, model.compile(data));
      print_report(std::cout, accuracy_report(records));
      if (!eval_out.empty()) {
        save_predictions_jsonl(eval_out, records);
        std::cout << "wrote predictions to " << eval_out << "\n";
      }
      return 0;
    }

    if (cmp->parsed()) {
      std::vector<PredictionRecord> a = load_predictions_jsonl(cmp_a);
      std::vector<PredictionRecord> b = load_predictions_jsonl(cmp_b);
      McNemarResult r = mcnemar_paired(a, b);
      std::cout << "first_acc " << format_exact(accuracy(a)) << "\n"
                << "second_acc " << format_exact(accuracy(b)) << "\n"
                << "b " << r.b << "\nc " << r.c << "\n"
                << "statistic " << format_exact(r.statistic) << "\n"
                << "p_value " << format_exact(r.p_value) << "\n"
                << "significant " << (r.significant(cmp_alpha) ? "yes" : "no")
                << "\n";
      return 0;
    }

    if (gc->parsed()) {
      GenConfig gcfg;
      gcfg.train = gc_examples;
      gcfg.val = 0;
      gcfg.seed = 99;
      gcfg.min_turns = 2;
      gcfg.max_turns = 3;
      Corpus corpus = generate_corpus(gcfg);
      Vocab vocab, pos, ner;
      build_vocabs(corpus.train, vocab, pos, ner);
      double worst = 0.0;
      for (AuxTask aux : {AuxTask::kNone, AuxTask::kRepeat, AuxTask::kOrder}) {
        ReaderConfig cfg;
        cfg.hidden = gc_hidden;
        cfg.emb_dim = gc_emb;
        cfg.use_features = true;
        cfg.aux = aux;
        cfg.gamma = 0.5;
        ReaderModel model(cfg, vocab, pos, ner, 7);
        std::vector<GradCheckParam> params;
        for (const Param& p : model.params().all()) {
          params.push_back(GradCheckParam{p.shape, p.value});
        }
        for (const CompiledExample& ex : model.compile(corpus.train)) {
          LossBuilder f = [&model, &ex](Tape& t, const std::vector<Tensor>& leaves) {
            BoundParams bound;
            bound.leaves = leaves;
            ForwardOptions opt;
            return model.forward_with(t, ex, opt, std::move(bound)).loss;
          };
          double err = grad_check(f, params, 1e-4);
          worst = std::max(worst, err);
          std::cout << "aux=" << aux_task_name(aux) << " max_rel_err "
                    << format_exact(err) << "\n";
        }
      }
      std::cout << (worst < 1e-3 ? "gradcheck passed" : "gradcheck FAILED")
                << " (worst " << format_exact(worst) << ")\n";
      return worst < 1e-3 ? 0 : 1;
    }

    if (sr->parsed()) {
      Gazetteer gaz = Gazetteer::builtin();
      std::vector<Example> train_set = load_split(search_train, "jsonl", gaz);
      train_set = filter_answer_in_context(train_set);
      std::vector<Example> val_set = load_split(search_val, "jsonl", gaz);
      Vocab vocab, pos, ner;
      build_vocabs(train_set, vocab, pos, ner);
      SearchSpace space;
      SearchResult result = random_search(
          search_flags.to_config(), space, train_set, val_set, vocab, pos, ner,
          search_trials, search_epochs, search_seed, &std::cout);
      const SearchTrial& best = result.trials[result.best];
      std::cout << "best trial " << result.best << " val_acc "
                << format_exact(best.val_acc) << "\n"
                << "best config " << config_to_json(best.config).dump()
                << " lr " << best.lr << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
