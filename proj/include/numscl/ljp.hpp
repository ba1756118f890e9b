#pragma once

// Multi-task legal judgment prediction: hierarchical shared fact encoder,
// private charge / law / term encoders, classification heads, optional fusion
// of the encoded crime amount into the term head, and contrastive training
// against momentum-encoder key queues.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/autodiff.hpp"
#include "numscl/checkpoint.hpp"
#include "numscl/corpus.hpp"
#include "numscl/layers.hpp"
#include "numscl/metrics.hpp"
#include "numscl/moco.hpp"
#include "numscl/num_encoder.hpp"
#include "numscl/optim.hpp"

namespace numscl {

enum class Strategy { CE, I, II, I_II, InBatch };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::CE: return "ce";
    case Strategy::I: return "I";
    case Strategy::II: return "II";
    case Strategy::I_II: return "I+II";
    case Strategy::InBatch: return "in-batch";
  }
  return "ce";
}

inline Strategy parse_strategy(const std::string& s) {
  for (Strategy v : {Strategy::CE, Strategy::I, Strategy::II, Strategy::I_II, Strategy::InBatch})
    if (s == strategy_name(v)) return v;
  throw Error("unknown strategy \"" + s + "\" (expected ce, I, II, I+II or in-batch)");
}

inline bool uses_private_keys(Strategy s) { return s == Strategy::I || s == Strategy::I_II; }
inline bool uses_shared_keys(Strategy s) { return s == Strategy::II || s == Strategy::I_II || s == Strategy::InBatch; }

enum class AmountSource { Ner, Gold };

inline AmountSource parse_amount_source(const std::string& s) {
  if (s == "ner") return AmountSource::Ner;
  if (s == "gold") return AmountSource::Gold;
  throw Error("unknown amount source \"" + s + "\" (expected ner or gold)");
}
inline const char* amount_source_name(AmountSource a) { return a == AmountSource::Ner ? "ner" : "gold"; }

struct LjpConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden = 32;
  std::size_t batch_size = 16;
  double learning_rate = 2e-3;
  std::size_t epochs = 10;
  std::uint64_t seed = 3;
  Strategy strategy = Strategy::CE;
  bool use_evidence = false;
  AmountSource amount_source = AmountSource::Ner;
  // contrastive weights and MoCo settings
  double alpha = 2.0;
  double beta = 2.0;
  double theta_w = 5.0;
  double lambda = 7.0;
  double temperature = 0.07;
  double momentum = 0.999;
  std::size_t queue_capacity = 1024;

  void validate() const {
    if (alpha < 0 || beta < 0 || theta_w < 0 || lambda < 0) throw Error("loss weights must be nonnegative");
    if (!(temperature > 0)) throw Error("temperature must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw Error("momentum must lie in [0, 1)");
    if (queue_capacity == 0) throw Error("queue capacity must be positive");
    if (batch_size == 0) throw Error("batch size must be positive");
    if (batch_size > queue_capacity) throw Error("batch size exceeds queue capacity");
    if (embed_dim == 0 || hidden == 0) throw Error("model dimensions must be positive");
  }
};

struct LjpDims {
  std::size_t vocab = 0;
  std::size_t charges = 0;
  std::size_t laws = 0;
  std::size_t terms = 0;
  std::size_t evidence_dim = 0;  // 0 disables fusion
  friend bool operator==(const LjpDims&, const LjpDims&) = default;
};

/// One training / evaluation case with its labels and (optionally) a frozen amount encoding.
struct LjpExample {
  std::vector<std::vector<std::size_t>> sentences;
  LabelTriple labels;
  std::int64_t amount = 0;
  std::optional<Tensor> evidence;
};

struct EvidenceStats {
  std::size_t clamped = 0;
};

/// Pairs instances with amounts (one per instance) and encodes them with the frozen encoder when given.
inline std::vector<LjpExample> make_examples(const std::vector<CaseInstance>& docs, const std::vector<std::int64_t>& amounts,
                                             const NumEncoder* encoder, EvidenceStats* stats = nullptr) {
  if (!amounts.empty() && amounts.size() != docs.size()) throw Error("make_examples: one amount per instance required");
  std::vector<LjpExample> out;
  out.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    LjpExample e;
    e.sentences = docs[i].sentences;
    e.labels = {docs[i].charge, docs[i].law, docs[i].term};
    e.amount = amounts.empty() ? 0 : amounts[i];
    if (encoder) {
      std::int64_t m = e.amount;
      if (!encoder->in_range(m)) {
        m = encoder->clamp(m);
        if (stats) ++stats->clamped;
      }
      e.evidence = encoder->encode_value(m);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<std::int64_t> gold_amounts(const std::vector<CaseInstance>& docs) {
  std::vector<std::int64_t> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.total_amount.value_or(0));
  return out;
}

struct LjpForward {
  Var hf;        // pooled shared feature
  Var states;    // sentence-level shared states (S x H)
  Var hc, hl, ht;
  Var charge_logits, law_logits, term_logits;
};

class LjpModel {
 public:
  LjpModel(const LjpDims& dims, const LjpConfig& cfg) : dims_(dims), cfg_(cfg) {
    if (dims.vocab == 0 || dims.charges == 0 || dims.laws == 0 || dims.terms == 0)
      throw Error("ljp: vocabulary and label spaces must be nonempty");
    const std::size_t e = cfg.embed_dim, h = cfg.hidden;
    Rng rng(cfg.seed);
    embed_ = Embedding::make(store_, "ljp.embed", dims.vocab, e, rng);
    word_gru_ = Gru::make(store_, "ljp.shared.word_gru", e, h, rng);
    word_attn_ = AttentionPool::make(store_, "ljp.shared.word_attn", h, h, rng);
    sent_gru_ = Gru::make(store_, "ljp.shared.sent_gru", h, h, rng);
    sent_attn_ = AttentionPool::make(store_, "ljp.shared.sent_attn", h, h, rng);
    const char* names[3] = {"charge", "law", "term"};
    for (int k = 0; k < 3; ++k) {
      priv_gru_[k] = Gru::make(store_, std::string("ljp.") + names[k] + ".gru", h, h, rng);
      priv_attn_[k] = AttentionPool::make(store_, std::string("ljp.") + names[k] + ".attn", h, h, rng);
    }
    charge_head_ = MlpHead::make(store_, "ljp.head.charge", h, h, dims.charges, rng);
    law_head_ = MlpHead::make(store_, "ljp.head.law", h, h, dims.laws, rng);
    term_head_ = MlpHead::make(store_, "ljp.head.term", h + dims.evidence_dim, h, dims.terms, rng);
  }
  LjpModel(LjpModel&&) = default;
  LjpModel& operator=(LjpModel&&) = default;

  const LjpDims& dims() const { return dims_; }
  const LjpConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  bool fuses_evidence() const { return dims_.evidence_dim > 0; }

  LjpModel clone() const {
    LjpModel c(dims_, cfg_);
    c.store_.copy_values_from(store_);
    return c;
  }

  /// Hierarchical shared encoder: word GRU + attention per sentence, sentence GRU + attention per document.
  void shared(Tape& t, const std::vector<std::vector<std::size_t>>& sentences, Var& states, Var& pooled) const {
    if (sentences.empty()) throw Error("ljp: empty document");
    std::vector<Var> sv;
    sv.reserve(sentences.size());
    for (const auto& s : sentences) {
      if (s.empty()) throw Error("ljp: empty sentence");
      for (auto tok : s)
        if (tok >= dims_.vocab)
          throw Error("ljp: token id " + std::to_string(tok) + " outside vocabulary of " + std::to_string(dims_.vocab));
      sv.push_back(word_attn_(t, word_gru_(t, embed_.lookup(t, s))));
    }
    states = sent_gru_(t, stack_rows(sv));
    pooled = sent_attn_(t, states);
  }

  /// Task-private encoder k (0 charge, 1 law, 2 term) over the shared sentence states.
  Var private_feature(Tape& t, const Var& states, int k) const { return priv_attn_[k](t, priv_gru_[k](t, states)); }

  /// Term logits from H_t, concatenated with the amount encoding when fusion is enabled.
  Var term_logits(Tape& t, const Var& ht, const std::optional<Tensor>& evidence) const {
    if (!fuses_evidence()) return term_head_(t, ht);
    if (!evidence) throw Error("ljp: model fuses numerical evidence but the example carries none");
    if (evidence->size() != dims_.evidence_dim) throw Error("ljp: evidence dimension mismatch");
    return term_head_(t, concat(ht, t.constant(*evidence)));
  }

  LjpForward forward(Tape& t, const LjpExample& ex) const {
    LjpForward f;
    shared(t, ex.sentences, f.states, f.hf);
    f.hc = private_feature(t, f.states, 0);
    f.hl = private_feature(t, f.states, 1);
    f.ht = private_feature(t, f.states, 2);
    f.charge_logits = charge_head_(t, f.hc);
    f.law_logits = law_head_(t, f.hl);
    f.term_logits = term_logits(t, f.ht, ex.evidence);
    return f;
  }

  LabelTriple predict(const LjpExample& ex) const {
    Tape t(false);
    const LjpForward f = forward(t, ex);
    return {argmax(f.charge_logits.value().data()), argmax(f.law_logits.value().data()),
            argmax(f.term_logits.value().data())};
  }

  nlohmann::json to_json() const {
    nlohmann::json j = checkpoint_header("ljp");
    j["dims"] = {{"vocab", dims_.vocab}, {"charges", dims_.charges}, {"laws", dims_.laws}, {"terms", dims_.terms},
                 {"evidence_dim", dims_.evidence_dim}};
    j["config"] = {{"embed_dim", cfg_.embed_dim},
                   {"hidden", cfg_.hidden},
                   {"seed", cfg_.seed},
                   {"strategy", strategy_name(cfg_.strategy)},
                   {"use_evidence", cfg_.use_evidence},
                   {"amount_source", amount_source_name(cfg_.amount_source)}};
    j["params"] = params_to_json(store_);
    return j;
  }

  static LjpModel from_json(const nlohmann::json& j) {
    check_header(j, "ljp");
    const auto& d = j.at("dims");
    LjpDims dims{d.at("vocab"), d.at("charges"), d.at("laws"), d.at("terms"), d.at("evidence_dim")};
    const auto& c = j.at("config");
    LjpConfig cfg;
    cfg.embed_dim = c.at("embed_dim");
    cfg.hidden = c.at("hidden");
    cfg.seed = c.at("seed");
    cfg.strategy = parse_strategy(c.at("strategy"));
    cfg.use_evidence = c.at("use_evidence");
    cfg.amount_source = parse_amount_source(c.at("amount_source"));
    LjpModel m(dims, cfg);
    params_from_json(m.store_, j.at("params"));
    return m;
  }

 private:
  LjpDims dims_;
  LjpConfig cfg_;
  ParamStore store_;
  Embedding embed_;
  Gru word_gru_, sent_gru_;
  AttentionPool word_attn_, sent_attn_;
  Gru priv_gru_[3];
  AttentionPool priv_attn_[3];
  MlpHead charge_head_, law_head_, term_head_;
};

// ---------------------------------------------------------------------------
// Losses

/// Sum of the three softmax cross-entropies.
inline Var ce_total(const LjpForward& f, const LabelTriple& y) {
  const Var parts[] = {softmax_cross_entropy(f.charge_logits, y.charge), softmax_cross_entropy(f.law_logits, y.law),
                       softmax_cross_entropy(f.term_logits, y.term)};
  return add_n(parts);
}

/// Mean of ce_total over the batch.
inline Var batch_ce(Tape&, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys) {
  if (fs.empty() || fs.size() != ys.size()) throw Error("batch_ce: forwards and labels must align and be nonempty");
  std::vector<Var> parts;
  parts.reserve(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) parts.push_back(ce_total(fs[i], ys[i]));
  return scale(add_n(parts), 1.0 / static_cast<double>(fs.size()));
}

struct LossBreakdown {
  Var total;
  double ce = 0.0;
  double scl_charge = 0.0, scl_law = 0.0, scl_term = 0.0, scl_shared = 0.0;
  bool warning = false;  // some contrastive term had no usable positives
};

struct StrategyQueues {
  MomentumQueue charge, law, term, shared;
  StrategyQueues(std::size_t capacity, std::size_t dim)
      : charge(capacity, dim), law(capacity, dim), term(capacity, dim), shared(capacity, dim) {}
};

namespace detail {

inline SclResult queue_scl(Tape& t, const std::vector<Var>& queries, const MomentumQueue& q,
                           const std::vector<std::vector<std::size_t>>& pos, double temperature) {
  if (q.empty()) {
    SclResult r;
    r.loss = t.constant(Tensor::scalar(0.0));
    r.warning = true;
    return r;
  }
  return scl_loss(t, queries, pos, q.features(), temperature);
}

}  // namespace detail

/// l_ce + alpha l^c + beta l^l + theta_w l^t, with per-task queues and single-label positives.
inline LossBreakdown loss_strategy1(Tape& t, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys,
                                    const StrategyQueues& qs, const LjpConfig& cfg) {
  LossBreakdown out;
  Var ce = batch_ce(t, fs, ys);
  out.ce = ce.item();
  std::vector<Var> terms{ce};
  const struct {
    Task task;
    const MomentumQueue* queue;
    double weight;
    double* slot;
  } parts[] = {{Task::Charge, &qs.charge, cfg.alpha, &out.scl_charge},
               {Task::Law, &qs.law, cfg.beta, &out.scl_law},
               {Task::Term, &qs.term, cfg.theta_w, &out.scl_term}};
  for (const auto& p : parts) {
    if (p.weight == 0.0) continue;
    std::vector<Var> queries;
    std::vector<std::vector<std::size_t>> pos;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const Var& h = p.task == Task::Charge ? fs[i].hc : p.task == Task::Law ? fs[i].hl : fs[i].ht;
      queries.push_back(l2_normalize(h));
      pos.push_back(positives_strategy1(*p.queue, ys[i].get(p.task), p.task));
    }
    const SclResult r = detail::queue_scl(t, queries, *p.queue, pos, cfg.temperature);
    *p.slot = r.loss.item();
    out.warning = out.warning || r.warning;
    terms.push_back(scale(r.loss, p.weight));
  }
  out.total = add_n(terms);
  return out;
}

/// Contrastive term on the normalized shared features with all-three-label positives.
inline SclResult shared_scl(Tape& t, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys,
                            const MomentumQueue& queue, double temperature) {
  std::vector<Var> queries;
  std::vector<std::vector<std::size_t>> pos;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    queries.push_back(l2_normalize(fs[i].hf));
    pos.push_back(positives_strategy2(queue, ys[i]));
  }
  return detail::queue_scl(t, queries, queue, pos, temperature);
}

/// l_ce + lambda l^B on the shared features, positives agreeing on all three labels.
inline LossBreakdown loss_strategy2(Tape& t, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys,
                                    const MomentumQueue& queue, const LjpConfig& cfg) {
  LossBreakdown out;
  Var ce = batch_ce(t, fs, ys);
  out.ce = ce.item();
  if (cfg.lambda == 0.0) {
    out.total = ce;
    return out;
  }
  const SclResult r = shared_scl(t, fs, ys, queue, cfg.temperature);
  out.scl_shared = r.loss.item();
  out.warning = r.warning;
  out.total = add(ce, scale(r.loss, cfg.lambda));
  return out;
}

/// Both objectives: Strategy I plus lambda l^B.
inline LossBreakdown loss_strategy12(Tape& t, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys,
                                     const StrategyQueues& qs, const LjpConfig& cfg) {
  LossBreakdown out = loss_strategy1(t, fs, ys, qs, cfg);
  if (cfg.lambda == 0.0) return out;
  const SclResult r = shared_scl(t, fs, ys, qs.shared, cfg.temperature);
  out.scl_shared = r.loss.item();
  out.warning = out.warning || r.warning;
  out.total = add(out.total, scale(r.loss, cfg.lambda));
  return out;
}

/// Strategy II objective with the dictionary replaced by the batch's own key features.
inline LossBreakdown loss_in_batch(Tape& t, const std::vector<LjpForward>& fs, const std::vector<LabelTriple>& ys,
                                   const Tensor& batch_keys, const LjpConfig& cfg) {
  LossBreakdown out;
  Var ce = batch_ce(t, fs, ys);
  out.ce = ce.item();
  if (cfg.lambda == 0.0) {
    out.total = ce;
    return out;
  }
  std::vector<Var> queries;
  for (const auto& f : fs) queries.push_back(l2_normalize(f.hf));
  const SclResult r = in_batch_scl_loss(t, queries, batch_keys, ys, cfg.temperature,
                                        [](const LabelTriple& a, const LabelTriple& b) { return a == b; });
  out.scl_shared = r.loss.item();
  out.warning = r.warning;
  out.total = add(ce, scale(r.loss, cfg.lambda));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricsReport {
  ClassScores charge, law, term;
  ConfusionMatrix charge_confusion, law_confusion, term_confusion;
  double conf_f1 = 0.0;  // charge macro-F1 over confusing-charge instances
  double num_f1 = 0.0;   // term macro-F1 over number-sensitive-charge instances
  std::size_t conf_support = 0, num_support = 0;

  nlohmann::json to_json(bool with_confusion = true) const {
    nlohmann::json j = {{"charge", charge.to_json()}, {"law", law.to_json()},       {"term", term.to_json()},
                        {"conf_f1", conf_f1},         {"num_f1", num_f1},           {"conf_support", conf_support},
                        {"num_support", num_support}};
    if (with_confusion)
      j["confusion"] = {{"charge", charge_confusion}, {"law", law_confusion}, {"term", term_confusion}};
    return j;
  }
};

inline MetricsReport evaluate(const LjpModel& model, const std::vector<LjpExample>& data,
                              const std::set<std::size_t>& confusing, const std::set<std::size_t>& number_sensitive) {
  const LjpDims& d = model.dims();
  std::vector<std::size_t> gc, gl, gt, pc, pl, pt, conf_g, conf_p, num_g, num_p;
  for (const auto& ex : data) {
    const LabelTriple p = model.predict(ex);
    gc.push_back(ex.labels.charge), pc.push_back(p.charge);
    gl.push_back(ex.labels.law), pl.push_back(p.law);
    gt.push_back(ex.labels.term), pt.push_back(p.term);
    if (confusing.count(ex.labels.charge)) conf_g.push_back(ex.labels.charge), conf_p.push_back(p.charge);
    if (number_sensitive.count(ex.labels.charge)) num_g.push_back(ex.labels.term), num_p.push_back(p.term);
  }
  MetricsReport r;
  r.charge_confusion = confusion_matrix(gc, pc, d.charges);
  r.law_confusion = confusion_matrix(gl, pl, d.laws);
  r.term_confusion = confusion_matrix(gt, pt, d.terms);
  r.charge = scores_from_confusion(r.charge_confusion);
  r.law = scores_from_confusion(r.law_confusion);
  r.term = scores_from_confusion(r.term_confusion);
  r.conf_f1 = classification_scores(conf_g, conf_p, d.charges).macro_f1;
  r.num_f1 = classification_scores(num_g, num_p, d.terms).macro_f1;
  r.conf_support = conf_g.size();
  r.num_support = num_g.size();
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct LjpEpoch {
  double loss = 0.0;
  double ce = 0.0;
  double scl = 0.0;  // weighted contrastive part
  double validation_charge_f1 = 0.0;
  double train_seconds = 0.0;
  friend bool operator==(const LjpEpoch& a, const LjpEpoch& b) {
    return a.loss == b.loss && a.ce == b.ce && a.scl == b.scl && a.validation_charge_f1 == b.validation_charge_f1;
  }
};

struct LjpTrainResult {
  LjpModel model;
  std::vector<LjpEpoch> history;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> queue_fill;  // shared or charge queue fill after each step (contrastive runs)
  std::size_t warnings = 0;             // batches where some contrastive term had no positives
  bool diverged = false;
  std::string divergence_message;
};

namespace detail {

struct KeyBatch {
  Tensor shared;
  Tensor priv[3];
};

/// Normalized key-encoder features for a batch; private features only when requested.
inline KeyBatch key_features(const LjpModel& key, const std::vector<const LjpExample*>& batch, bool with_private) {
  const std::size_t n = batch.size(), h = key.config().hidden;
  KeyBatch out{Tensor(Shape{n, h}), {Tensor(Shape{n, h}), Tensor(Shape{n, h}), Tensor(Shape{n, h})}};
  for (std::size_t i = 0; i < n; ++i) {
    Tape t(false);
    Var states, pooled;
    key.shared(t, batch[i]->sentences, states, pooled);
    auto put = [&](Tensor& dst, const Var& f) {
      const Tensor v = l2_normalize(f).value();
      std::copy(v.data().begin(), v.data().end(), dst.row(i).begin());
    };
    put(out.shared, pooled);
    if (with_private)
      for (int k = 0; k < 3; ++k) put(out.priv[k], key.private_feature(t, states, k));
  }
  return out;
}

}  // namespace detail

/// Mini-batch Adam training with the configured objective; returns the best-validation-charge-F1 model.
inline LjpTrainResult train_ljp(const std::vector<LjpExample>& train, const std::vector<LjpExample>& validation,
                                const LjpDims& dims, const LjpConfig& cfg) {
  cfg.validate();
  if (train.empty() || validation.empty()) throw Error("train_ljp: train and validation splits must be nonempty");
  if ((dims.evidence_dim > 0) != cfg.use_evidence) throw Error("train_ljp: evidence dimension disagrees with use_evidence");
  LjpModel model(dims, cfg);
  Adam opt(model.params(), cfg.learning_rate);
  const bool contrastive = cfg.strategy != Strategy::CE;
  std::optional<LjpModel> key;
  if (contrastive) key.emplace(model.clone());
  StrategyQueues queues(cfg.queue_capacity, cfg.hidden);
  Rng rng(derive_seed(cfg.seed, 31));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  LjpTrainResult res{model.clone(), {}, 0, {}, 0, false, {}};
  double best = -1.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LjpEpoch ep;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<const LjpExample*> batch;
      std::vector<LabelTriple> ys;
      for (std::size_t i = b; i < e; ++i) batch.push_back(&train[order[i]]), ys.push_back(train[order[i]].labels);
      try {
        Tape tape;
        std::vector<LjpForward> fs;
        for (const auto* ex : batch) fs.push_back(model.forward(tape, *ex));
        LossBreakdown lb;
        switch (cfg.strategy) {
          case Strategy::CE:
            lb.total = batch_ce(tape, fs, ys);
            lb.ce = lb.total.item();
            break;
          case Strategy::I: lb = loss_strategy1(tape, fs, ys, queues, cfg); break;
          case Strategy::II: lb = loss_strategy2(tape, fs, ys, queues.shared, cfg); break;
          case Strategy::I_II: lb = loss_strategy12(tape, fs, ys, queues, cfg); break;
          case Strategy::InBatch:
            lb = loss_in_batch(tape, fs, ys, detail::key_features(*key, batch, false).shared, cfg);
            break;
        }
        if (!std::isfinite(lb.total.item())) throw Error("non-finite loss");
        res.warnings += lb.warning;
        const double n = static_cast<double>(batch.size());
        ep.loss += lb.total.item() * n;
        ep.ce += lb.ce * n;
        ep.scl += (lb.total.item() - lb.ce) * n;
        seen += batch.size();
        tape.backward(lb.total);
        opt.step();
      } catch (const Error& err) {
        res.diverged = true;
        res.divergence_message = "epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(b / cfg.batch_size) + ": " + err.what();
        return res;
      }
      if (contrastive) {
        momentum_update(key->params(), model.params(), cfg.momentum);
        if (cfg.strategy != Strategy::InBatch) {
          const detail::KeyBatch kb = detail::key_features(*key, batch, uses_private_keys(cfg.strategy));
          if (uses_shared_keys(cfg.strategy)) queues.shared.enqueue(kb.shared, ys);
          if (uses_private_keys(cfg.strategy)) {
            queues.charge.enqueue(kb.priv[0], ys);
            queues.law.enqueue(kb.priv[1], ys);
            queues.term.enqueue(kb.priv[2], ys);
          }
          res.queue_fill.push_back(uses_shared_keys(cfg.strategy) ? queues.shared.size() : queues.charge.size());
        }
      }
    }
    ep.loss /= static_cast<double>(seen);
    ep.ce /= static_cast<double>(seen);
    ep.scl /= static_cast<double>(seen);
    ep.validation_charge_f1 = evaluate(model, validation, {}, {}).charge.macro_f1;
    res.history.push_back(ep);
    if (ep.validation_charge_f1 > best) {
      best = ep.validation_charge_f1;
      res.model = model.clone();
      res.best_epoch = epoch + 1;
    }
  }
  return res;
}

}  // namespace numscl
