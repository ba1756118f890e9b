#pragma once

// End-to-end glue: weak NER labels -> tagger -> predicted amounts, number
// encoder pretraining, LJP runs per strategy, and the comparison report.

#include <chrono>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/amount_labeler.hpp"
#include "numscl/config.hpp"
#include "numscl/ljp.hpp"
#include "numscl/ner_crf.hpp"
#include "numscl/num_encoder.hpp"

namespace numscl {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<std::int64_t> predicted_amounts(const std::vector<CaseInstance>& docs, const CrfTagger& tagger) {
  std::vector<std::int64_t> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(extract_amount(d, tagger));
  return out;
}

struct AmountRecovery {
  std::size_t solvable = 0;
  std::size_t exact = 0;
  double rate() const { return solvable ? static_cast<double>(exact) / static_cast<double>(solvable) : 0.0; }
  nlohmann::json to_json() const { return {{"solvable", solvable}, {"exact", exact}, {"exact_rate", rate()}}; }
};

/// Exact total recovery over documents whose sentence amounts admit a subset meeting the total.
inline AmountRecovery amount_recovery(const std::vector<CaseInstance>& docs, const std::vector<std::int64_t>& predicted) {
  if (docs.size() != predicted.size()) throw Error("amount_recovery: one prediction per document required");
  AmountRecovery r;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!docs[i].total_amount || !select_sentences(sentence_amounts(docs[i]))) continue;
    ++r.solvable;
    r.exact += predicted[i] == *docs[i].total_amount;
  }
  return r;
}

inline std::set<std::size_t> generator_confusing(const CorpusConfig& c) {
  std::set<std::size_t> s;
  for (auto [a, b] : c.confusing_pairs) s.insert(a), s.insert(b);
  return s;
}

inline std::set<std::size_t> number_sensitive_set(const CorpusConfig& c) {
  return {c.number_sensitive.begin(), c.number_sensitive.end()};
}

inline LjpDims dims_for(const CorpusConfig& c, std::size_t evidence_dim) {
  return {c.vocab_size, c.num_charges, c.num_laws, c.num_terms, evidence_dim};
}

/// Everything the LJP runs share: the corpus, per-split amounts and the frozen encoder.
struct SharedArtifacts {
  CorpusConfig config;
  Corpus corpus;
  std::vector<std::int64_t> amounts_train, amounts_validation, amounts_test;
  std::optional<NumEncoder> encoder;
  AmountRecovery test_recovery;
};

/// Progress sink; the CLI prints to stderr, tests pass a no-op.
using LogFn = std::function<void(const std::string&)>;

/// Trains the amount tagger on weakly labeled train/validation splits.
inline NerTrainResult train_amount_tagger(const Corpus& corpus, const CorpusConfig& cc, const NerConfig& cfg) {
  const CaeNerDataset train = build_caener(corpus.train);
  const CaeNerDataset val = build_caener(corpus.validation);
  return train_tagger(train.docs, val.docs, cc.vocab_size, cfg);
}

/// Corpus generation, amounts per the configured source, and (optionally) encoder pretraining.
inline SharedArtifacts prepare_artifacts(const AppConfig& app, bool with_encoder, const LogFn& log) {
  SharedArtifacts a;
  a.config = app.corpus;
  auto t0 = std::chrono::steady_clock::now();
  a.corpus = generate(app.corpus);
  log("corpus: " + std::to_string(a.corpus.train.size()) + "/" + std::to_string(a.corpus.validation.size()) + "/" +
      std::to_string(a.corpus.test.size()) + " documents");
  if (app.ljp.amount_source == AmountSource::Gold) {
    a.amounts_train = gold_amounts(a.corpus.train);
    a.amounts_validation = gold_amounts(a.corpus.validation);
    a.amounts_test = gold_amounts(a.corpus.test);
  } else {
    t0 = std::chrono::steady_clock::now();
    const NerTrainResult ner = train_amount_tagger(a.corpus, app.corpus, app.ner);
    a.amounts_train = predicted_amounts(a.corpus.train, ner.tagger);
    a.amounts_validation = predicted_amounts(a.corpus.validation, ner.tagger);
    a.amounts_test = predicted_amounts(a.corpus.test, ner.tagger);
    a.test_recovery = amount_recovery(a.corpus.test, a.amounts_test);
    log("ner: exact amount recovery on test " + std::to_string(a.test_recovery.rate()) + " (" +
        std::to_string(seconds_since(t0)) + " s)");
  }
  if (with_encoder) {
    t0 = std::chrono::steady_clock::now();
    const auto& nc = app.num_encoder;
    a.encoder = pretrain(sample_pairs(nc.pairs, nc.min_number, nc.max_number, nc.seed), nc).encoder;
    log("num_encoder: pretrained in " + std::to_string(seconds_since(t0)) + " s");
  }
  return a;
}

struct LjpRun {
  std::string strategy;
  bool evidence = false;
  std::uint64_t seed = 0;
  MetricsReport test;
  std::vector<LjpEpoch> history;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
  bool diverged = false;

  nlohmann::json to_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : history)
      h.push_back({{"loss", e.loss}, {"ce", e.ce}, {"scl", e.scl}, {"validation_charge_f1", e.validation_charge_f1}});
    return {{"strategy", strategy}, {"evidence", evidence}, {"seed", seed},     {"test", test.to_json(false)},
            {"history", h},         {"best_epoch", best_epoch}, {"seconds", seconds}, {"diverged", diverged}};
  }
};

inline std::vector<LjpExample> examples_for(const std::vector<CaseInstance>& docs, const std::vector<std::int64_t>& amounts,
                                            const NumEncoder* enc) {
  return make_examples(docs, amounts, enc);
}

/// Trains one LJP configuration and evaluates it on the test split.
inline LjpRun run_ljp(const SharedArtifacts& a, const LjpConfig& base, Strategy strategy, bool evidence,
                      std::uint64_t seed, const std::set<std::size_t>& confusing, const std::set<std::size_t>& sensitive) {
  const auto t0 = std::chrono::steady_clock::now();
  LjpConfig cfg = base;
  cfg.strategy = strategy;
  cfg.use_evidence = evidence;
  cfg.seed = seed;
  const NumEncoder* enc = nullptr;
  if (evidence) {
    if (!a.encoder) throw Error("run_ljp: evidence requested but no number encoder available");
    enc = &*a.encoder;
  }
  const auto train = examples_for(a.corpus.train, a.amounts_train, enc);
  const auto val = examples_for(a.corpus.validation, a.amounts_validation, enc);
  const auto test = examples_for(a.corpus.test, a.amounts_test, enc);
  const LjpDims dims = dims_for(a.config, enc ? enc->dim() : 0);
  auto res = train_ljp(train, val, dims, cfg);
  LjpRun run;
  run.strategy = strategy_name(strategy);
  run.evidence = evidence;
  run.seed = seed;
  run.test = evaluate(res.model, test, confusing, sensitive);
  run.history = std::move(res.history);
  run.best_epoch = res.best_epoch;
  run.diverged = res.diverged;
  run.seconds = seconds_since(t0);
  return run;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string label;
  std::size_t runs = 0;
  double charge_acc = 0, charge_f1 = 0, law_acc = 0, law_f1 = 0, term_acc = 0, term_f1 = 0, conf_f1 = 0, num_f1 = 0;
};

inline std::string run_label(const std::string& strategy, bool evidence) {
  return evidence ? strategy + "+num" : strategy;
}

/// Averages run metrics per (strategy, evidence) label, keeping first-seen order.
inline std::vector<ReportRow> summarize_runs(const std::vector<nlohmann::json>& runs) {
  std::vector<ReportRow> rows;
  std::map<std::string, std::size_t> index;
  for (const auto& r : runs) {
    const std::string label = run_label(r.at("strategy").get<std::string>(), r.value("evidence", false));
    if (!index.count(label)) {
      index[label] = rows.size();
      rows.push_back(ReportRow{label});
    }
    ReportRow& row = rows[index[label]];
    const auto& t = r.at("test");
    row.runs += 1;
    row.charge_acc += t.at("charge").at("accuracy").get<double>();
    row.charge_f1 += t.at("charge").at("macro_f1").get<double>();
    row.law_acc += t.at("law").at("accuracy").get<double>();
    row.law_f1 += t.at("law").at("macro_f1").get<double>();
    row.term_acc += t.at("term").at("accuracy").get<double>();
    row.term_f1 += t.at("term").at("macro_f1").get<double>();
    row.conf_f1 += t.at("conf_f1").get<double>();
    row.num_f1 += t.at("num_f1").get<double>();
  }
  for (auto& row : rows) {
    const double n = static_cast<double>(row.runs);
    for (double* v : {&row.charge_acc, &row.charge_f1, &row.law_acc, &row.law_f1, &row.term_acc, &row.term_f1,
                      &row.conf_f1, &row.num_f1})
      *v /= n;
  }
  return rows;
}

inline nlohmann::json report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"run", r.label},          {"runs", r.runs},         {"charge_acc", r.charge_acc},
                   {"charge_f1", r.charge_f1}, {"law_acc", r.law_acc},   {"law_f1", r.law_f1},
                   {"term_acc", r.term_acc},   {"term_f1", r.term_f1},   {"conf_f1", r.conf_f1},
                   {"num_f1", r.num_f1}});
  return out;
}

inline std::string report_markdown(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| run | seeds | charge acc | charge F1 | law acc | law F1 | term acc | term F1 | Conf. F1 | Num. F1 |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.label << " | " << r.runs << " | " << 100 * r.charge_acc << " | " << 100 * r.charge_f1 << " | "
       << 100 * r.law_acc << " | " << 100 * r.law_f1 << " | " << 100 * r.term_acc << " | " << 100 * r.term_f1 << " | "
       << 100 * r.conf_f1 << " | " << 100 * r.num_f1 << " |\n";
  return os.str();
}

}  // namespace numscl
