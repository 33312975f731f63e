#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "entrack/model.hpp"

namespace entrack {

// Per-example model output; the unit of evaluation and significance
// testing. Category flags follow the answer, not the prediction: entity
// answers, answers that are the attributed speaker of a quote, and
// answers masked inside quoted speech. Speaker and Quote are mutually
// exclusive subsets of Entity.
struct PredictionRecord {
  std::string predicted;
  std::string answer;
  bool correct = false;
  bool entity = false;
  bool speaker = false;
  bool quote = false;
};

inline PredictionRecord predict_record(const ReaderModel& model,
                                       const CompiledExample& ex) {
  PredictionRecord r;
  int id = model.predict(ex);
  r.predicted = id >= 0 ? model.vocab().word(id) : std::string();
  r.answer = ex.answer;
  r.correct = id >= 0 && r.predicted == ex.answer;
  r.entity = ex.entity_answer;
  r.speaker = ex.speaker_answer;
  r.quote = ex.quote_answer;
  return r;
}

inline std::vector<PredictionRecord> evaluate(
    const ReaderModel& model, const std::vector<CompiledExample>& exs) {
  std::vector<PredictionRecord> out;
  out.reserve(exs.size());
  for (const CompiledExample& ex : exs) {
    out.push_back(predict_record(model, ex));
  }
  return out;
}

struct CategoryAccuracy {
  int total = 0;
  int correct = 0;

  void tally(bool ok) {
    ++total;
    if (ok) ++correct;
  }

  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / total;
  }
};

struct AccuracyReport {
  CategoryAccuracy all, entity, speaker, quote;
};

inline AccuracyReport accuracy_report(std::span<const PredictionRecord> records) {
  AccuracyReport rep;
  for (const PredictionRecord& r : records) {
    rep.all.tally(r.correct);
    if (r.entity) rep.entity.tally(r.correct);
    if (r.speaker) rep.speaker.tally(r.correct);
    if (r.quote) rep.quote.tally(r.correct);
  }
  return rep;
}

inline double accuracy(std::span<const PredictionRecord> records) {
  return accuracy_report(records).all.accuracy();
}

// --- McNemar test -------------------------------------------------------

// Paired significance test on the discordant counts of two classifiers:
// b = first correct where second wrong, c = the reverse. Uses the
// continuity-corrected statistic (|b-c|-1)^2 / (b+c), chi-squared with one
// degree of freedom.
struct McNemarResult {
  long b = 0;
  long c = 0;
  double statistic = 0.0;
  double p_value = 1.0;

  bool significant(double alpha = 0.05) const { return p_value < alpha; }
};

inline double mcnemar_statistic(long b, long c) {
  if (b + c == 0) return 0.0;
  double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  return diff * diff / static_cast<double>(b + c);
}

// Survival function of chi-squared with 1 dof.
inline double chi2_1df_p_value(double statistic) {
  return std::erfc(std::sqrt(statistic / 2.0));
}

inline McNemarResult mcnemar(long b, long c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  r.statistic = mcnemar_statistic(b, c);
  r.p_value = (b + c == 0) ? 1.0 : chi2_1df_p_value(r.statistic);
  return r;
}

inline McNemarResult mcnemar_paired(std::span<const PredictionRecord> first,
                                    std::span<const PredictionRecord> second) {
  if (first.size() != second.size()) {
    throw std::invalid_argument("mcnemar: prediction lists differ in length");
  }
  long b = 0, c = 0;
  for (size_t i = 0; i < first.size(); ++i) {
    if (first[i].correct && !second[i].correct) ++b;
    if (!first[i].correct && second[i].correct) ++c;
  }
  return mcnemar(b, c);
}

// --- prediction file I/O --------------------------------------------------

inline void save_predictions_jsonl(const std::string& path,
                                   std::span<const PredictionRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const PredictionRecord& r : records) {
    out << nlohmann::json{{"predicted", r.predicted}, {"answer", r.answer},
                          {"correct", r.correct},     {"entity", r.entity},
                          {"speaker", r.speaker},     {"quote", r.quote}}
               .dump()
        << "\n";
  }
}

inline std::vector<PredictionRecord> load_predictions_jsonl(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PredictionRecord r;
    r.predicted = j.value("predicted", std::string());
    r.answer = j.value("answer", std::string());
    r.correct = j.value("correct", false);
    r.entity = j.value("entity", false);
    r.speaker = j.value("speaker", false);
    r.quote = j.value("quote", false);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace entrack
