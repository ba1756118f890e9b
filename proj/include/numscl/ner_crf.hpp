#pragma once

// Numerical-evidence extraction: bidirectional GRU token encoder + linear-chain
// CRF over the tags {O, B-AMT, I-AMT}. The predicted crime amount is the sum of
// the numbers decoded as entities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/amount_labeler.hpp"
#include "numscl/autodiff.hpp"
#include "numscl/checkpoint.hpp"
#include "numscl/layers.hpp"
#include "numscl/optim.hpp"

namespace numscl {

/// Score added to structurally forbidden moves (O -> I-AMT, start -> I-AMT).
inline constexpr double kForbiddenScore = -1e9;

// ---------------------------------------------------------------------------
// Linear-chain CRF scoring on the tape

/// log sum over all tag paths of exp(start[y0] + sum_t E[t][yt] + sum_t A[y_{t-1}][y_t] + end[yL-1]).
inline Var crf_log_partition(const Var& emissions, const Var& transitions, const Var& start, const Var& end) {
  const std::size_t len = emissions.value().rows();
  Var alpha = add(start, row(emissions, 0));
  for (std::size_t t = 1; t < len; ++t) {
    // scores[i][j] = alpha[i] + A[i][j]; reduce over the previous tag i
    alpha = add(logsumexp(add_col(transitions, alpha), 0), row(emissions, t));
  }
  return logsumexp(add(alpha, end));
}

/// Score of one tag path.
inline Var crf_path_score(const Var& emissions, const Var& transitions, const Var& start, const Var& end,
                          const std::vector<std::size_t>& tags) {
  Tape& tape = *emissions.tape();
  const std::size_t len = emissions.value().rows(), k = emissions.value().cols();
  if (tags.size() != len) throw Error("crf_path_score: tag count does not match sequence length");
  Tensor emit_mask(Shape{len, k});
  Tensor trans_count(Shape{k, k});
  Tensor start_mask(Shape{k}), end_mask(Shape{k});
  for (std::size_t t = 0; t < len; ++t) {
    if (tags[t] >= k) throw Error("crf_path_score: tag out of range");
    emit_mask.at(t, tags[t]) = 1.0;
    if (t > 0) trans_count.at(tags[t - 1], tags[t]) += 1.0;
  }
  start_mask[tags.front()] = 1.0;
  end_mask[tags.back()] = 1.0;
  const Var parts[] = {sum(mul(emissions, tape.constant(std::move(emit_mask)))),
                       sum(mul(transitions, tape.constant(std::move(trans_count)))),
                       dot(start, tape.constant(std::move(start_mask))), dot(end, tape.constant(std::move(end_mask)))};
  return add_n(parts);
}

/// Highest-scoring path; ties resolve toward the lowest tag index at each backpointer.
inline std::vector<std::size_t> viterbi_decode(const Tensor& emissions, const Tensor& transitions, const Tensor& start,
                                               const Tensor& end) {
  const std::size_t len = emissions.rows(), k = emissions.cols();
  std::vector<double> score(k), next(k);
  std::vector<std::size_t> back(len * k, 0);
  for (std::size_t j = 0; j < k; ++j) score[j] = start[j] + emissions.at(0, j);
  for (std::size_t t = 1; t < len; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t bi = 0;
      double best = score[0] + transitions.at(0, j);
      for (std::size_t i = 1; i < k; ++i) {
        const double s = score[i] + transitions.at(i, j);
        if (s > best) best = s, bi = i;
      }
      next[j] = best + emissions.at(t, j);
      back[t * k + j] = bi;
    }
    score.swap(next);
  }
  std::size_t last = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (score[j] + end[j] > score[last] + end[last]) last = j;
  std::vector<std::size_t> path(len);
  path[len - 1] = last;
  for (std::size_t t = len - 1; t > 0; --t) path[t - 1] = back[t * k + path[t]];
  return path;
}

/// Plain-double path score (for decoding diagnostics and tests).
inline double path_score(const Tensor& emissions, const Tensor& transitions, const Tensor& start, const Tensor& end,
                         const std::vector<std::size_t>& tags) {
  double s = start[tags.front()] + end[tags.back()];
  for (std::size_t t = 0; t < tags.size(); ++t) {
    s += emissions.at(t, tags[t]);
    if (t > 0) s += transitions.at(tags[t - 1], tags[t]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tagger model

struct NerConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden = 32;
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  double learning_rate = 5e-3;
  std::uint64_t seed = 7;
};

class CrfTagger {
 public:
  CrfTagger(std::size_t vocab, const NerConfig& cfg) : vocab_(vocab), cfg_(cfg) {
    if (vocab == 0) throw Error("tagger: empty vocabulary");
    Rng rng(cfg.seed);
    embed_ = Embedding::make(store_, "ner.embed", vocab, cfg.embed_dim, rng);
    fwd_ = Gru::make(store_, "ner.gru_fwd", cfg.embed_dim, cfg.hidden, rng);
    bwd_ = Gru::make(store_, "ner.gru_bwd", cfg.embed_dim, cfg.hidden, rng);
    const double k = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.hidden));
    emit_w_ = &store_.add("ner.emit.weight", uniform_init(Shape{2 * cfg.hidden, kNumTags}, k, rng));
    emit_b_ = &store_.add("ner.emit.bias", Tensor(Shape{kNumTags}));
    transitions_ = &store_.add("ner.crf.transitions", uniform_init(Shape{kNumTags, kNumTags}, 0.1, rng));
    start_ = &store_.add("ner.crf.start", Tensor(Shape{kNumTags}));
    end_ = &store_.add("ner.crf.end", Tensor(Shape{kNumTags}));
  }
  CrfTagger(CrfTagger&&) = default;
  CrfTagger& operator=(CrfTagger&&) = default;

  std::size_t vocab() const { return vocab_; }
  const NerConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  CrfTagger clone() const {
    CrfTagger c(vocab_, cfg_);
    c.store_.copy_values_from(store_);
    return c;
  }

  /// Per-token tag scores (L x K) for one sentence.
  Var emissions(Tape& t, const std::vector<std::size_t>& tokens) const {
    if (tokens.empty()) throw Error("tagger: empty token sequence");
    for (auto tok : tokens)
      if (tok >= vocab_) throw Error("tagger: token id " + std::to_string(tok) + " outside vocabulary of " + std::to_string(vocab_));
    Var x = embed_.lookup(t, tokens);
    Var h = concat_cols(fwd_(t, x), bwd_(t, x, true));
    return add_row(matmul(h, t.param(*emit_w_)), t.param(*emit_b_));
  }

  /// Transition and start scores including the structural BIO penalties.
  Var constrained_transitions(Tape& t) const { return add(t.param(*transitions_), t.constant(transition_mask())); }
  Var constrained_start(Tape& t) const { return add(t.param(*start_), t.constant(start_mask())); }
  Var end_scores(Tape& t) const { return t.param(*end_); }

  /// Negative log-likelihood of the gold tags for one sentence.
  Var nll(Tape& t, const std::vector<std::size_t>& tokens, const std::vector<BioTag>& tags) const {
    if (tokens.empty()) throw Error("crf_nll: empty token sequence");
    if (tags.size() != tokens.size()) throw Error("crf_nll: tag count does not match token count");
    Var e = emissions(t, tokens);
    Var a = constrained_transitions(t);
    Var s = constrained_start(t);
    Var n = end_scores(t);
    std::vector<std::size_t> y(tags.size());
    for (std::size_t i = 0; i < tags.size(); ++i) y[i] = static_cast<std::size_t>(tags[i]);
    return sub(crf_log_partition(e, a, s, n), crf_path_score(e, a, s, n, y));
  }

  std::vector<BioTag> decode(const std::vector<std::size_t>& tokens) const {
    Tape t(false);
    Var e = emissions(t, tokens);
    const auto path = viterbi_decode(e.value(), constrained_transitions(t).value(), constrained_start(t).value(),
                                     end_scores(t).value());
    std::vector<BioTag> out(path.size());
    for (std::size_t i = 0; i < path.size(); ++i) out[i] = static_cast<BioTag>(path[i]);
    return out;
  }

  std::vector<std::vector<BioTag>> tag_document(const std::vector<std::vector<std::size_t>>& sentences) const {
    std::vector<std::vector<BioTag>> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(decode(s));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = checkpoint_header("ner");
    j["vocab"] = vocab_;
    j["config"] = {{"embed_dim", cfg_.embed_dim}, {"hidden", cfg_.hidden}, {"epochs", cfg_.epochs},
                   {"batch_size", cfg_.batch_size}, {"learning_rate", cfg_.learning_rate}, {"seed", cfg_.seed}};
    j["params"] = params_to_json(store_);
    return j;
  }

  static CrfTagger from_json(const nlohmann::json& j) {
    check_header(j, "ner");
    NerConfig cfg;
    const auto& c = j.at("config");
    cfg.embed_dim = c.at("embed_dim");
    cfg.hidden = c.at("hidden");
    cfg.epochs = c.at("epochs");
    cfg.batch_size = c.at("batch_size");
    cfg.learning_rate = c.at("learning_rate");
    cfg.seed = c.at("seed");
    CrfTagger t(j.at("vocab").get<std::size_t>(), cfg);
    params_from_json(t.store_, j.at("params"));
    return t;
  }

  static Tensor transition_mask() {
    Tensor m(Shape{kNumTags, kNumTags});
    m.at(static_cast<std::size_t>(BioTag::O), static_cast<std::size_t>(BioTag::I)) = kForbiddenScore;
    return m;
  }
  static Tensor start_mask() {
    Tensor m(Shape{kNumTags});
    m[static_cast<std::size_t>(BioTag::I)] = kForbiddenScore;
    return m;
  }

 private:
  std::size_t vocab_;
  NerConfig cfg_;
  ParamStore store_;
  Embedding embed_;
  Gru fwd_, bwd_;
  Param* emit_w_ = nullptr;
  Param* emit_b_ = nullptr;
  Param* transitions_ = nullptr;
  Param* start_ = nullptr;
  Param* end_ = nullptr;
};

// ---------------------------------------------------------------------------
// Evaluation and training

struct TaggingScores {
  double token_accuracy = 0.0;
  double entity_precision = 0.0;
  double entity_recall = 0.0;
  double entity_f1 = 0.0;
  std::size_t tokens = 0;
};

/// Token accuracy plus exact-match entity P/R/F1 (an entity is a B-AMT token with its I-AMT continuation).
inline TaggingScores score_tagging(const CrfTagger& tagger, const std::vector<BioTaggedDoc>& docs) {
  std::size_t correct = 0, total = 0, tp = 0, n_pred = 0, n_gold = 0;
  auto spans = [](const std::vector<BioTag>& tags) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (tags[i] != BioTag::B) continue;
      std::size_t j = i + 1;
      while (j < tags.size() && tags[j] == BioTag::I) ++j;
      out.emplace_back(i, j);
    }
    return out;
  };
  for (const auto& d : docs)
    for (std::size_t s = 0; s < d.tokens.size(); ++s) {
      const auto pred = tagger.decode(d.tokens[s]);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == d.tags[s][i];
      total += pred.size();
      const auto ps = spans(pred), gs = spans(d.tags[s]);
      n_pred += ps.size();
      n_gold += gs.size();
      for (const auto& p : ps) tp += std::count(gs.begin(), gs.end(), p);
    }
  TaggingScores r;
  r.tokens = total;
  r.token_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.entity_precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  r.entity_recall = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
  const double pr = r.entity_precision + r.entity_recall;
  r.entity_f1 = pr > 0 ? 2.0 * r.entity_precision * r.entity_recall / pr : 0.0;
  return r;
}

struct NerEpoch {
  double train_loss = 0.0;
  TaggingScores validation;
};

struct NerTrainResult {
  CrfTagger tagger;
  std::vector<NerEpoch> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

/// Mini-batch Adam on mean sentence NLL; keeps the best validation token-accuracy checkpoint.
inline NerTrainResult train_tagger(const std::vector<BioTaggedDoc>& train, const std::vector<BioTaggedDoc>& validation,
                                   std::size_t vocab, const NerConfig& cfg) {
  if (train.empty() || validation.empty()) throw Error("train_tagger: train and validation splits must be nonempty");
  CrfTagger model(vocab, cfg);
  std::vector<std::pair<std::size_t, std::size_t>> seqs;  // (doc, sentence)
  for (std::size_t d = 0; d < train.size(); ++d)
    for (std::size_t s = 0; s < train[d].tokens.size(); ++s)
      if (!train[d].tokens[s].empty()) seqs.emplace_back(d, s);
  Adam opt(model.params(), cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, 17));
  NerTrainResult res{model.clone(), {}, 0};
  double best = -1.0;
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(seqs.begin(), seqs.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < seqs.size(); b += bs) {
      const std::size_t e = std::min(seqs.size(), b + bs);
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t i = b; i < e; ++i) {
        const auto [d, s] = seqs[i];
        losses.push_back(model.nll(tape, train[d].tokens[s], train[d].tags[s]));
      }
      Var loss = scale(add_n(losses), 1.0 / static_cast<double>(e - b));
      if (!std::isfinite(loss.item()))
        throw Error("train_tagger: loss diverged at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b / bs));
      total += loss.item() * static_cast<double>(e - b);
      tape.backward(loss);
      opt.step();
    }
    NerEpoch ep;
    ep.train_loss = total / static_cast<double>(seqs.size());
    ep.validation = score_tagging(model, validation);
    res.history.push_back(ep);
    if (ep.validation.token_accuracy > best) {
      best = ep.validation.token_accuracy;
      res.tagger = model.clone();
      res.best_epoch = epoch + 1;
    }
  }
  return res;
}

/// Sum of the values of numeric tokens carrying an entity tag.
inline std::int64_t amount_from_tags(const CaseInstance& doc, const std::vector<std::vector<BioTag>>& tags) {
  std::int64_t total = 0;
  for (const auto& span : doc.numeric_spans) {
    const BioTag t = tags.at(span.sent).at(span.pos);
    if (t == BioTag::B || t == BioTag::I) total += span.value;
  }
  return total;
}

/// Predicted crime amount: Viterbi-decode every sentence and sum the tagged numbers (0 if none).
inline std::int64_t extract_amount(const CaseInstance& doc, const CrfTagger& tagger) {
  return amount_from_tags(doc, tagger.tag_document(doc.sentences));
}

}  // namespace numscl
