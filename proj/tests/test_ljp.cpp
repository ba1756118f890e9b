#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "numscl/gradcheck.hpp"
#include "numscl/ljp.hpp"

#include "oracles.hpp"

using namespace numscl;
using namespace numscl::oracle;

namespace {

LjpDims tiny_dims(std::size_t evidence = 0) { return {12, 3, 3, 4, evidence}; }

LjpConfig tiny_config(std::uint64_t seed = 1) {
  LjpConfig c;
  c.embed_dim = 3;
  c.hidden = 3;
  c.seed = seed;
  c.batch_size = 4;
  c.queue_capacity = 16;
  c.temperature = 0.5;
  return c;
}

LjpExample random_example(Rng& rng, const LjpDims& d, std::size_t evidence_dim = 0) {
  std::uniform_int_distribution<std::size_t> tok(0, d.vocab - 1), len(1, 4), ns(1, 3);
  LjpExample e;
  const std::size_t n = ns(rng);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> sent(len(rng));
    for (auto& t : sent) t = tok(rng);
    e.sentences.push_back(sent);
  }
  e.labels = {rng() % d.charges, rng() % d.laws, rng() % d.terms};
  if (evidence_dim) {
    std::normal_distribution<double> g;
    Tensor v(Shape{evidence_dim});
    for (std::size_t i = 0; i < evidence_dim; ++i) v[i] = g(rng);
    e.evidence = v;
  }
  return e;
}

std::vector<LabelTriple> random_triples(std::size_t n, const LjpDims& d, Rng& rng) {
  std::vector<LabelTriple> out(n);
  for (auto& l : out) l = {rng() % d.charges, rng() % d.laws, rng() % d.terms};
  return out;
}

void fill_queues(StrategyQueues& q, Rng& rng, const LjpDims& d, std::size_t n) {
  q.charge.enqueue(unit_rows(n, q.charge.dim(), rng), random_triples(n, d, rng));
  q.law.enqueue(unit_rows(n, q.law.dim(), rng), random_triples(n, d, rng));
  q.term.enqueue(unit_rows(n, q.term.dim(), rng), random_triples(n, d, rng));
  q.shared.enqueue(unit_rows(n, q.shared.dim(), rng), random_triples(n, d, rng));
}

std::vector<Param*> all_params(ParamStore& s) {
  std::vector<Param*> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(&s[i]);
  return out;
}

// Toy corpus where every instance is distinct and short.
std::vector<LjpExample> toy_corpus(std::size_t n, const LjpDims& d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LjpExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_example(rng, d));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// metrics

TEST(Metrics, HandComputedTwoClassExample) {
  const ConfusionMatrix m = {{1, 1}, {0, 2}};
  const auto s = scores_from_confusion(m);
  EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
  // class 0: P 1, R 0.5 -> 2/3 ; class 1: P 2/3, R 1 -> 0.8
  EXPECT_NEAR(s.macro_f1, (2.0 / 3.0 + 0.8) / 2.0, 1e-12);
  EXPECT_NEAR(s.macro_precision, (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
  EXPECT_NEAR(s.macro_recall, 0.75, 1e-12);
}

TEST(Metrics, PerfectAndSingleClass) {
  const auto p = classification_scores({0, 1, 2, 2}, {0, 1, 2, 2}, 4);
  EXPECT_DOUBLE_EQ(p.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(p.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(p.macro_precision, 1.0);
  const auto s = classification_scores({1, 1, 1, 1}, {1, 0, 1, 1}, 3);
  EXPECT_NEAR(s.macro_f1, 2 * 1.0 * 0.75 / 1.75, 1e-12);
  EXPECT_DOUBLE_EQ(classification_scores({}, {}, 3).macro_f1, 0.0);
}

TEST(Metrics, ConfusionRowSumsEqualSupport) {
  Rng rng(2);
  std::vector<std::size_t> g(200), p(200);
  for (auto& v : g) v = rng() % 5;
  for (auto& v : p) v = rng() % 5;
  const auto m = confusion_matrix(g, p, 5);
  for (std::size_t c = 0; c < 5; ++c) {
    std::size_t row = 0;
    for (auto v : m[c]) row += v;
    EXPECT_EQ(row, static_cast<std::size_t>(std::count(g.begin(), g.end(), c)));
  }
  EXPECT_THROW(confusion_matrix({7}, {0}, 5), Error);
}

TEST(ConfusingClasses, Examples) {
  ConfusionMatrix m(8, std::vector<std::size_t>(8, 0));
  for (std::size_t i = 0; i < 8; ++i) m[i][i] = 50;
  EXPECT_TRUE(confusing_classes(m, 5).empty());
  m[3][5] = 6;
  EXPECT_EQ(confusing_classes(m, 5), (std::set<std::size_t>{3, 5}));
  EXPECT_THROW(confusing_classes(m, 0), Error);
}

TEST(ConfusingClasses, MatchesScanAndIsMonotone) {
  Rng rng(3);
  for (int draw = 0; draw < 30; ++draw) {
    ConfusionMatrix m(6, std::vector<std::size_t>(6));
    for (auto& r : m)
      for (auto& v : r) v = rng() % 20;
    for (double thr : {1.0, 5.0, 10.0, 15.0}) {
      std::set<std::size_t> naive;
      for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t b = 0; b < 6; ++b)
          if (a != b && m[a][b] > thr) naive.insert(a), naive.insert(b);
      EXPECT_EQ(confusing_classes(m, thr), naive);
    }
    std::size_t prev = 7;
    for (double thr = 0.5; thr < 25; thr += 0.5) {
      const auto s = confusing_classes(m, thr);
      EXPECT_LE(s.size(), prev);
      prev = s.size();
    }
  }
}

// ---------------------------------------------------------------------------
// model

TEST(LjpModel, ForwardDeterministicWithConfiguredShapes) {
  Rng rng(4);
  const LjpModel m(tiny_dims(), tiny_config());
  const LjpExample ex = random_example(rng, tiny_dims());
  Tape a(false), b(false);
  const auto fa = m.forward(a, ex), fb = m.forward(b, ex);
  EXPECT_TRUE(fa.charge_logits.value() == fb.charge_logits.value());
  EXPECT_TRUE(fa.term_logits.value() == fb.term_logits.value());
  EXPECT_EQ(fa.charge_logits.shape(), Shape{3});
  EXPECT_EQ(fa.law_logits.shape(), Shape{3});
  EXPECT_EQ(fa.term_logits.shape(), Shape{4});
  EXPECT_EQ(fa.hf.shape(), Shape{3});
  EXPECT_EQ(fa.hc.shape(), Shape{3});
}

TEST(LjpModel, SentenceOrderMatters) {
  LjpConfig cfg = tiny_config();
  cfg.hidden = 8;
  cfg.embed_dim = 8;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    cfg.seed = seed;
    const LjpModel m(tiny_dims(), cfg);
    LjpExample ex;
    ex.sentences = {{1, 2, 3}, {4, 5}};
    LjpExample swapped = ex;
    std::swap(swapped.sentences[0], swapped.sentences[1]);
    Tape t(false);
    EXPECT_FALSE(m.forward(t, ex).hf.value() == m.forward(t, swapped).hf.value());
  }
}

TEST(LjpModel, RejectsBadInput) {
  const LjpModel m(tiny_dims(), tiny_config());
  Tape t;
  LjpExample ex;
  EXPECT_THROW(m.forward(t, ex), Error);
  ex.sentences = {{1, 40}};
  EXPECT_THROW(m.forward(t, ex), Error);
  const LjpModel fused(tiny_dims(5), tiny_config());
  ex.sentences = {{1, 2}};
  EXPECT_THROW(fused.forward(t, ex), Error);
}

TEST(Fusion, DisabledEvidenceUsesTermFeatureAlone) {
  const LjpModel m(tiny_dims(), tiny_config());
  const Param* w = m.params().find("ljp.head.term.hidden.weight");
  ASSERT_NE(w, nullptr);
  EXPECT_EQ(w->value.cols(), 3u);
  const LjpModel f(tiny_dims(5), tiny_config());
  EXPECT_EQ(f.params().find("ljp.head.term.hidden.weight")->value.cols(), 8u);
}

TEST(Fusion, AmountAffectsOnlyTermLogits) {
  NumEncoderConfig nc;
  nc.dim = 6;
  nc.digit_embed = 4;
  const NumEncoder enc(nc);
  const LjpModel m(tiny_dims(6), tiny_config());
  CaseInstance doc;
  doc.sentences = {{2, 1, 5}, {7, 3}};
  const auto lo = make_examples({doc}, {0}, &enc);
  const auto hi = make_examples({doc}, {nc.max_number}, &enc);
  Tape t(false);
  const auto a = m.forward(t, lo[0]), b = m.forward(t, hi[0]);
  EXPECT_TRUE(a.charge_logits.value() == b.charge_logits.value());
  EXPECT_TRUE(a.law_logits.value() == b.law_logits.value());
  EXPECT_FALSE(a.term_logits.value() == b.term_logits.value());
}

TEST(Fusion, OutOfRangeAmountsAreClampedAndCounted) {
  NumEncoderConfig nc;
  nc.dim = 4;
  nc.digit_embed = 2;
  const NumEncoder enc(nc);
  CaseInstance doc;
  doc.sentences = {{1}};
  EvidenceStats st;
  const auto ex = make_examples({doc, doc, doc}, {-5, 500000, 100}, &enc, &st);
  EXPECT_EQ(st.clamped, 2u);
  EXPECT_TRUE(*ex[1].evidence == enc.encode_value(nc.max_number));
  EXPECT_TRUE(*ex[0].evidence == enc.encode_value(0));
}

// ---------------------------------------------------------------------------
// losses

TEST(Losses, UniformLogitsGiveThreeLn2) {
  Tape t;
  LjpForward f;
  f.charge_logits = t.constant(Tensor(Shape{2}));
  f.law_logits = t.constant(Tensor(Shape{2}));
  f.term_logits = t.constant(Tensor(Shape{2}));
  EXPECT_NEAR(ce_total(f, {0, 1, 1}).item(), 3 * std::log(2.0), 1e-12);
  f.charge_logits = t.constant(Tensor(Shape{2}, {60.0, -60.0}));
  f.law_logits = t.constant(Tensor(Shape{2}, {-60.0, 60.0}));
  f.term_logits = t.constant(Tensor(Shape{2}, {60.0, -60.0}));
  EXPECT_LT(ce_total(f, {0, 1, 0}).item(), 1e-40);
}

TEST(Losses, CeTotalIsSumOfTaskLosses) {
  Rng rng(5);
  const LjpModel m(tiny_dims(), tiny_config());
  for (int i = 0; i < 10; ++i) {
    const auto ex = random_example(rng, tiny_dims());
    Tape t;
    const auto f = m.forward(t, ex);
    auto ce = [](const Tensor& z, std::size_t y) {
      double mx = z[0];
      for (double v : z.values()) mx = std::max(mx, v);
      double s = 0;
      for (double v : z.values()) s += std::exp(v - mx);
      return mx + std::log(s) - z[y];
    };
    const double expect = ce(f.charge_logits.value(), ex.labels.charge) + ce(f.law_logits.value(), ex.labels.law) +
                          ce(f.term_logits.value(), ex.labels.term);
    EXPECT_NEAR(ce_total(f, ex.labels).item(), expect, 1e-12);
  }
}

TEST(Losses, ZeroWeightsReduceToCe) {
  Rng rng(6);
  const LjpDims d = tiny_dims();
  LjpConfig cfg = tiny_config();
  cfg.alpha = cfg.beta = cfg.theta_w = cfg.lambda = 0.0;
  const LjpModel m(d, cfg);
  StrategyQueues q(16, 3);
  fill_queues(q, rng, d, 10);
  std::vector<LabelTriple> ys;
  Tape t;
  std::vector<LjpForward> fs;
  for (int i = 0; i < 4; ++i) {
    const auto ex = random_example(rng, d);
    fs.push_back(m.forward(t, ex));
    ys.push_back(ex.labels);
  }
  const double ce = batch_ce(t, fs, ys).item();
  EXPECT_EQ(loss_strategy1(t, fs, ys, q, cfg).total.item(), ce);
  EXPECT_EQ(loss_strategy2(t, fs, ys, q.shared, cfg).total.item(), ce);
  EXPECT_EQ(loss_strategy12(t, fs, ys, q, cfg).total.item(), ce);
}

TEST(Losses, EmptyQueuesAndUnmatchedLabelsContributeNothing) {
  Rng rng(7);
  const LjpDims d = tiny_dims();
  const LjpConfig cfg = tiny_config();
  const LjpModel m(d, cfg);
  StrategyQueues q(16, 3);
  Tape t;
  std::vector<LjpForward> fs;
  std::vector<LabelTriple> ys;
  for (int i = 0; i < 4; ++i) {
    auto ex = random_example(rng, d);
    ex.labels = {0, 0, 0};
    fs.push_back(m.forward(t, ex));
    ys.push_back(ex.labels);
  }
  const double ce = batch_ce(t, fs, ys).item();
  const auto l1 = loss_strategy1(t, fs, ys, q, cfg);
  EXPECT_DOUBLE_EQ(l1.total.item(), ce);
  EXPECT_TRUE(l1.warning);
  // queue whose triples never equal (0,0,0)
  std::vector<LabelTriple> other(6, LabelTriple{1, 1, 1});
  q.shared.enqueue(unit_rows(6, 3, rng), other);
  EXPECT_DOUBLE_EQ(loss_strategy2(t, fs, ys, q.shared, cfg).total.item(), ce);
}

TEST(Losses, StrategyObjectivesMatchModuleComposition) {
  Rng rng(8);
  const LjpDims d = tiny_dims();
  const LjpConfig cfg = tiny_config();
  for (int draw = 0; draw < 10; ++draw) {
    const LjpModel m(d, tiny_config(50 + draw));
    StrategyQueues q(16, 3);
    fill_queues(q, rng, d, 14);
    Tape t;
    std::vector<LjpForward> fs;
    std::vector<LabelTriple> ys;
    for (int i = 0; i < 4; ++i) {
      const auto ex = random_example(rng, d);
      fs.push_back(m.forward(t, ex));
      ys.push_back(ex.labels);
    }
    // hand composition from module calls
    double ce = 0;
    for (std::size_t i = 0; i < fs.size(); ++i) ce += ce_total(fs[i], ys[i]).item();
    ce /= static_cast<double>(fs.size());
    auto task_scl = [&](const MomentumQueue& queue, auto feature, auto positives) {
      std::vector<Var> qs;
      std::vector<std::vector<std::size_t>> pos;
      for (std::size_t i = 0; i < fs.size(); ++i) {
        qs.push_back(l2_normalize(feature(fs[i])));
        pos.push_back(positives(i));
      }
      return scl_loss(t, qs, pos, queue.features(), cfg.temperature).loss.item();
    };
    const double lc = task_scl(q.charge, [](const LjpForward& f) { return f.hc; },
                               [&](std::size_t i) { return positives_strategy1(q.charge, ys[i].charge, Task::Charge); });
    const double ll = task_scl(q.law, [](const LjpForward& f) { return f.hl; },
                               [&](std::size_t i) { return positives_strategy1(q.law, ys[i].law, Task::Law); });
    const double lt = task_scl(q.term, [](const LjpForward& f) { return f.ht; },
                               [&](std::size_t i) { return positives_strategy1(q.term, ys[i].term, Task::Term); });
    const double lb = task_scl(q.shared, [](const LjpForward& f) { return f.hf; },
                               [&](std::size_t i) { return positives_strategy2(q.shared, ys[i]); });
    const double s1 = ce + cfg.alpha * lc + cfg.beta * ll + cfg.theta_w * lt;
    EXPECT_NEAR(loss_strategy1(t, fs, ys, q, cfg).total.item(), s1, 1e-12);
    EXPECT_NEAR(loss_strategy2(t, fs, ys, q.shared, cfg).total.item(), ce + cfg.lambda * lb, 1e-12);
    EXPECT_NEAR(loss_strategy12(t, fs, ys, q, cfg).total.item(), s1 + cfg.lambda * lb, 1e-12);
  }
}

TEST(Losses, StrategyGradientsMatchFiniteDifferences) {
  Rng rng(9);
  const LjpDims d = tiny_dims(2);
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    LjpConfig cfg = tiny_config(200 + draw);
    LjpModel m(d, cfg);
    StrategyQueues q(16, 3);
    // labels drawn from the batch so that positives exist
    std::vector<LjpExample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_example(rng, d, 2));
    std::vector<LabelTriple> qlabels;
    for (int i = 0; i < 8; ++i) qlabels.push_back(batch[i % 3].labels);
    for (MomentumQueue* mq : {&q.charge, &q.law, &q.term, &q.shared}) mq->enqueue(unit_rows(8, 3, rng), qlabels);
    std::vector<LabelTriple> ys;
    for (const auto& e : batch) ys.push_back(e.labels);
    auto forwards = [&](Tape& t) {
      std::vector<LjpForward> fs;
      for (const auto& e : batch) fs.push_back(m.forward(t, e));
      return fs;
    };
    // whole-model losses are O(1), so gradients under ~1e-7 sit in the difference quotient's rounding noise
    const double floor = 1e-6;
    const auto r1 = finite_diff_check([&](Tape& t) { return loss_strategy1(t, forwards(t), ys, q, cfg).total; },
                                      all_params(m.params()), 1e-4, floor);
    EXPECT_LT(r1.max_rel_error, 1e-4) << "I draw " << draw << " " << r1.worst_name << "[" << r1.worst_index << "] " << r1.analytic << " " << r1.numeric;
    const auto r2 = finite_diff_check([&](Tape& t) { return loss_strategy2(t, forwards(t), ys, q.shared, cfg).total; },
                                      all_params(m.params()), 1e-4, floor);
    EXPECT_LT(r2.max_rel_error, 1e-4) << "II draw " << draw << " " << r2.worst_name << "[" << r2.worst_index << "] " << r2.analytic << " " << r2.numeric;
  }
}

// ---------------------------------------------------------------------------
// training and evaluation

TEST(Train, CeOnlyOverfitsToyCorpus) {
  const LjpDims d{30, 4, 3, 3, 0};
  const auto data = toy_corpus(50, d, 10);
  LjpConfig cfg;
  cfg.embed_dim = 16;
  cfg.hidden = 16;
  cfg.epochs = 100;
  cfg.batch_size = 10;
  cfg.learning_rate = 1e-2;
  const auto res = train_ljp(data, data, d, cfg);
  ASSERT_FALSE(res.diverged) << res.divergence_message;
  // take the final state rather than the selected checkpoint: charge F1 on the train split may tie early
  const auto rep = evaluate(res.model, data, {}, {});
  EXPECT_DOUBLE_EQ(rep.charge.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(rep.law.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(rep.term.accuracy, 1.0);
}

TEST(Train, FixedSeedGivesIdenticalHistory) {
  const LjpDims d = tiny_dims();
  const auto data = toy_corpus(12, d, 11);
  LjpConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.strategy = Strategy::I_II;
  const auto a = train_ljp(data, data, d, cfg);
  const auto b = train_ljp(data, data, d, cfg);
  EXPECT_EQ(a.history, b.history);
  for (std::size_t i = 0; i < a.model.params().size(); ++i)
    EXPECT_TRUE(a.model.params()[i].value == b.model.params()[i].value);
}

TEST(Train, QueueFillGrowsByBatchUntilCapacity) {
  const LjpDims d = tiny_dims();
  const auto data = toy_corpus(24, d, 12);
  LjpConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.queue_capacity = 10;
  cfg.strategy = Strategy::II;
  const auto res = train_ljp(data, data, d, cfg);
  EXPECT_EQ(res.queue_fill, (std::vector<std::size_t>{4, 8, 10, 10, 10, 10}));
}

TEST(Train, ZeroContrastiveWeightsMatchCeBaselineBitForBit) {
  const LjpDims d = tiny_dims();
  const auto data = toy_corpus(16, d, 13);
  LjpConfig ce = tiny_config();
  ce.epochs = 2;
  const auto base = train_ljp(data, data, d, ce);
  for (Strategy s : {Strategy::I, Strategy::II, Strategy::I_II, Strategy::InBatch}) {
    LjpConfig z = ce;
    z.strategy = s;
    z.alpha = z.beta = z.theta_w = z.lambda = 0.0;
    const auto r = train_ljp(data, data, d, z);
    EXPECT_EQ(r.history.size(), base.history.size());
    for (std::size_t e = 0; e < r.history.size(); ++e) {
      EXPECT_EQ(r.history[e].loss, base.history[e].loss) << strategy_name(s);
      EXPECT_EQ(r.history[e].validation_charge_f1, base.history[e].validation_charge_f1);
    }
    for (std::size_t i = 0; i < r.model.params().size(); ++i)
      EXPECT_TRUE(r.model.params()[i].value == base.model.params()[i].value) << strategy_name(s);
  }
}

TEST(Train, DivergenceAbortsWithLastGoodModel) {
  const LjpDims d = tiny_dims(2);
  Rng rng(14);
  std::vector<LjpExample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_example(rng, d, 2));
  auto poisoned = data;
  (*poisoned[5].evidence)[0] = std::nan("");
  LjpConfig cfg = tiny_config();
  cfg.use_evidence = true;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  const auto res = train_ljp(poisoned, data, d, cfg);
  EXPECT_TRUE(res.diverged);
  EXPECT_NE(res.divergence_message.find("epoch 1"), std::string::npos) << res.divergence_message;
  EXPECT_TRUE(res.history.empty());
  const LjpModel fresh(d, cfg);
  for (std::size_t i = 0; i < res.model.params().size(); ++i)
    EXPECT_TRUE(res.model.params()[i].value == fresh.params()[i].value);
}

TEST(Train, RejectsBadConfig) {
  const LjpDims d = tiny_dims();
  const auto data = toy_corpus(4, d, 15);
  LjpConfig cfg = tiny_config();
  cfg.temperature = 0;
  EXPECT_THROW(train_ljp(data, data, d, cfg), Error);
  cfg = tiny_config();
  cfg.momentum = 1.0;
  EXPECT_THROW(train_ljp(data, data, d, cfg), Error);
  cfg = tiny_config();
  EXPECT_THROW(train_ljp({}, data, d, cfg), Error);
  EXPECT_THROW(train_ljp(data, data, tiny_dims(4), cfg), Error);
}

TEST(Evaluate, PermutationInvariant) {
  const LjpDims d = tiny_dims();
  auto data = toy_corpus(40, d, 16);
  const LjpModel m(d, tiny_config());
  const auto a = evaluate(m, data, {0, 1}, {2});
  Rng rng(3);
  std::shuffle(data.begin(), data.end(), rng);
  const auto b = evaluate(m, data, {0, 1}, {2});
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Evaluate, SlicesRestrictToChargeSets) {
  const LjpDims d = tiny_dims();
  const auto data = toy_corpus(60, d, 17);
  const LjpModel m(d, tiny_config());
  const auto r = evaluate(m, data, {0}, {1, 2});
  std::size_t c0 = 0, c12 = 0;
  for (const auto& e : data) c0 += e.labels.charge == 0, c12 += e.labels.charge != 0;
  EXPECT_EQ(r.conf_support, c0);
  EXPECT_EQ(r.num_support, c12);
  for (double v : {r.charge.macro_f1, r.law.accuracy, r.term.macro_recall, r.conf_f1, r.num_f1}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Checkpoint, LjpRoundTrip) {
  Rng rng(18);
  const LjpModel a(tiny_dims(), tiny_config(77));
  const LjpModel b = LjpModel::from_json(a.to_json());
  EXPECT_EQ(a.dims(), b.dims());
  const auto ex = random_example(rng, tiny_dims());
  EXPECT_EQ(a.predict(ex), b.predict(ex));
}
