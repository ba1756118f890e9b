#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "numscl/gradcheck.hpp"
#include "numscl/layers.hpp"
#include "numscl/moco.hpp"

#include "oracles.hpp"

using namespace numscl;
using namespace numscl::oracle;

namespace {

Tensor one_row(const Tensor& m, std::size_t r) {
  return Tensor(Shape{1, m.cols()}, std::vector<double>(m.row(r).begin(), m.row(r).end()));
}

SclResult scl_of(Tape& t, const Tensor& q, const std::vector<std::vector<std::size_t>>& pos, const Tensor& keys,
                 double temp) {
  std::vector<Var> qs;
  for (std::size_t i = 0; i < q.rows(); ++i) qs.push_back(row(t.constant(q), i));
  return scl_loss(t, qs, pos, keys, temp);
}

}  // namespace

TEST(Queue, FifoEviction) {
  MomentumQueue q(4, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor f(Shape{1, 2}, {i % 2 ? 1.0 : 0.0, i % 2 ? 0.0 : 1.0});
    q.enqueue(f, {{i, 0, 0}});
  }
  ASSERT_EQ(q.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(q.label(i).charge, i + 2);
}

TEST(Queue, FirstPushSetsFill) {
  Rng rng(1);
  MomentumQueue q(16, 3);
  q.enqueue(unit_rows(5, 3, rng), random_labels(5, 3, rng));
  EXPECT_EQ(q.size(), 5u);
}

TEST(Queue, RejectsBadInput) {
  Rng rng(2);
  MomentumQueue q(4, 3);
  EXPECT_THROW(q.enqueue(unit_rows(2, 4, rng), random_labels(2, 3, rng)), Error);
  EXPECT_THROW(q.enqueue(unit_rows(5, 3, rng), random_labels(5, 3, rng)), Error);
  EXPECT_THROW(q.enqueue(Tensor(Shape{1, 3}, {1.0, 1.0, 0.0}), {{0, 0, 0}}), Error);
  EXPECT_THROW(q.enqueue(unit_rows(2, 3, rng), random_labels(1, 3, rng)), Error);
  EXPECT_THROW(MomentumQueue(0, 3), Error);
  EXPECT_THROW(q.features(), Error);
}

TEST(Queue, MatchesShadowListOver1000Operations) {
  Rng rng(3);
  MomentumQueue q(37, 4);
  std::deque<std::pair<std::vector<double>, LabelTriple>> shadow;
  std::uniform_int_distribution<std::size_t> bs(1, 9);
  for (int op = 0; op < 1000; ++op) {
    const std::size_t b = bs(rng);
    const Tensor f = unit_rows(b, 4, rng);
    const auto l = random_labels(b, 5, rng);
    q.enqueue(f, l);
    for (std::size_t r = 0; r < b; ++r) {
      shadow.emplace_back(std::vector<double>(f.row(r).begin(), f.row(r).end()), l[r]);
      if (shadow.size() > 37) shadow.pop_front();
    }
    ASSERT_EQ(q.size(), shadow.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      ASSERT_TRUE(std::equal(q.feature(i).begin(), q.feature(i).end(), shadow[i].first.begin()));
      ASSERT_EQ(q.label(i), shadow[i].second);
    }
  }
}

TEST(Queue, JsonDump) {
  Rng rng(4);
  MomentumQueue q(8, 2);
  q.enqueue(unit_rows(3, 2, rng), {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  const auto j = q.to_json();
  EXPECT_EQ(j["fill"], 3);
  EXPECT_EQ(j["labels"][1], nlohmann::json({4, 5, 6}));
  EXPECT_FALSE(j.contains("features_base64"));
  const auto jf = q.to_json(true);
  EXPECT_EQ(jf["features_base64"].get<std::string>().size(), (3 * 2 * 8 + 2) / 3 * 4);
  EXPECT_EQ(base64_encode(reinterpret_cast<const unsigned char*>("Man"), 3), "TWFu");
  EXPECT_EQ(base64_encode(reinterpret_cast<const unsigned char*>("Ma"), 2), "TWE=");
}

TEST(Positives, Strategy1Examples) {
  MomentumQueue q(8, 1);
  const Tensor f(Shape{3, 1}, {1.0, 1.0, 1.0});
  q.enqueue(f, {{2, 0, 0}, {7, 0, 0}, {2, 0, 0}});
  EXPECT_EQ(positives_strategy1(q, 2, Task::Charge), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(positives_strategy1(q, 5, Task::Charge).empty());
}

TEST(Positives, Strategy2Examples) {
  MomentumQueue q(8, 1);
  const Tensor f(Shape{3, 1}, {1.0, 1.0, 1.0});
  q.enqueue(f, {{1, 1, 1}, {1, 2, 1}, {1, 1, 1}});
  EXPECT_EQ(positives_strategy2(q, {1, 1, 1}), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(positives_strategy2(q, {9, 9, 9}).empty());
}

TEST(Positives, MatchNaiveScanAndIntersection) {
  Rng rng(5);
  MomentumQueue q(1024, 2);
  for (int i = 0; i < 80; ++i) q.enqueue(unit_rows(16, 2, rng), random_labels(16, 4, rng));
  ASSERT_EQ(q.size(), 1024u);
  const auto labels = q.labels();
  for (const auto& query : random_labels(30, 4, rng)) {
    for (Task t : {Task::Charge, Task::Law, Task::Term}) {
      std::vector<std::size_t> naive;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i].get(t) == query.get(t)) naive.push_back(i);
      EXPECT_EQ(positives_strategy1(q, query.get(t), t), naive);
    }
    const auto c = positives_strategy1(q, query.charge, Task::Charge);
    const auto l = positives_strategy1(q, query.law, Task::Law);
    const auto tm = positives_strategy1(q, query.term, Task::Term);
    std::vector<std::size_t> cl, clt;
    std::set_intersection(c.begin(), c.end(), l.begin(), l.end(), std::back_inserter(cl));
    std::set_intersection(cl.begin(), cl.end(), tm.begin(), tm.end(), std::back_inserter(clt));
    EXPECT_EQ(positives_strategy2(q, query), clt);
  }
}

TEST(Scl, EqualLogitsGiveLn2) {
  const Tensor q(Shape{1, 2}, {1.0, 0.0});
  const Tensor k(Shape{2, 2}, {0.0, 1.0, 0.0, -1.0});
  for (double temp : {0.07, 1.0, 3.0}) {
    Tape t;
    EXPECT_NEAR(scl_of(t, q, {{0}}, k, temp).loss.item(), std::log(2.0), 1e-12);
  }
}

TEST(Scl, AllPositiveUniformGivesLogN) {
  const Tensor q(Shape{1, 2}, {1.0, 0.0});
  const Tensor k(Shape{5, 2}, {0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0});
  Tape t;
  EXPECT_NEAR(scl_of(t, q, {{0, 1, 2, 3, 4}}, k, 0.07).loss.item(), std::log(5.0), 1e-12);
}

TEST(Scl, MatchesNaiveDoubleLoop) {
  Rng rng(6);
  for (int draw = 0; draw < 20; ++draw) {
    const Tensor q = unit_rows(8, 5, rng), k = unit_rows(64, 5, rng);
    const auto ql = random_labels(8, 3, rng), kl = random_labels(64, 3, rng);
    std::vector<std::vector<std::size_t>> pos(8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t a = 0; a < 64; ++a)
        if (kl[a].charge == ql[i].charge) pos[i].push_back(a);
    pos[draw % 8].clear();
    Tape t;
    const auto r = scl_of(t, q, pos, k, 0.07);
    EXPECT_NEAR(r.loss.item(), naive_scl(q, k, pos, 0.07), 1e-10);
    EXPECT_EQ(r.included, 7u);
    EXPECT_GE(r.loss.item(), 0.0);
  }
}

TEST(Scl, PermutationInvariant) {
  Rng rng(7);
  const Tensor q = unit_rows(6, 4, rng), k = unit_rows(40, 4, rng);
  const auto kl = random_labels(40, 3, rng);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor kp(Shape{40, 4});
  std::vector<LabelTriple> klp(40);
  for (std::size_t a = 0; a < 40; ++a) {
    std::copy(k.row(perm[a]).begin(), k.row(perm[a]).end(), kp.row(a).begin());
    klp[a] = kl[perm[a]];
  }
  auto positives = [&](const std::vector<LabelTriple>& l) {
    std::vector<std::vector<std::size_t>> pos(6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t a = 0; a < 40; ++a)
        if (l[a].law == i % 3) pos[i].push_back(a);
    return pos;
  };
  Tape t1, t2;
  EXPECT_NEAR(scl_of(t1, q, positives(kl), k, 0.5).loss.item(), scl_of(t2, q, positives(klp), kp, 0.5).loss.item(), 1e-12);
}

TEST(Scl, AllExcludedWarns) {
  Rng rng(8);
  const Tensor q = unit_rows(3, 4, rng), k = unit_rows(5, 4, rng);
  Tape t;
  const auto r = scl_of(t, q, {{}, {}, {}}, k, 0.07);
  EXPECT_EQ(r.loss.item(), 0.0);
  EXPECT_TRUE(r.warning);
  EXPECT_THROW(scl_of(t, q, {{0}, {}, {}}, k, 0.0), Error);
}

TEST(Scl, QueueOfOwnKeysReproducesInBatch) {
  Rng rng(9);
  for (int draw = 0; draw < 20; ++draw) {
    const Tensor q = unit_rows(16, 6, rng), k = unit_rows(16, 6, rng);
    const auto labels = random_labels(16, 2, rng);
    MomentumQueue queue(64, 6);
    queue.enqueue(k, labels);
    Tape t;
    std::vector<Var> qs;
    std::vector<std::vector<std::size_t>> pos;
    for (std::size_t i = 0; i < 16; ++i) {
      qs.push_back(row(t.constant(q), i));
      pos.push_back(positives_strategy2(queue, labels[i]));
    }
    const double queued = scl_loss(t, qs, pos, queue.features(), 0.07).loss.item();
    const double inbatch =
        in_batch_scl_loss(t, qs, k, labels, 0.07, [](const LabelTriple& a, const LabelTriple& b) { return a == b; })
            .loss.item();
    EXPECT_NEAR(queued, inbatch, 1e-12);
  }
}

TEST(Scl, GradientFlowsToQueriesOnly) {
  Rng rng(10);
  ParamStore store;
  Param& qp = store.add("q", unit_rows(4, 5, rng));
  Param& kp = store.add("k", unit_rows(12, 5, rng));
  const auto kl = random_labels(12, 2, rng);
  std::vector<std::vector<std::size_t>> pos(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t a = 0; a < 12; ++a)
      if (kl[a].term == i % 2) pos[i].push_back(a);
  auto build = [&](Tape& t) {
    Var qm = t.param(qp);
    std::vector<Var> qs;
    for (std::size_t i = 0; i < 4; ++i) qs.push_back(l2_normalize(row(qm, i)));
    // keys enter as constants: the tape never sees kp as a parameter
    return scl_loss(t, qs, pos, kp.value, 0.2).loss;
  };
  Tape t;
  t.backward(build(t));
  double gk = 0, gq = 0;
  for (double v : kp.grad.values()) gk += std::fabs(v);
  for (double v : qp.grad.values()) gq += std::fabs(v);
  EXPECT_EQ(gk, 0.0);
  EXPECT_GT(gq, 0.0);
  store.zero_grad();
  const auto r = finite_diff_check(build, {&qp});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Momentum, DirectFormula) {
  ParamStore k, q;
  k.add("w", Tensor(Shape{3}, 0.0));
  q.add("w", Tensor(Shape{3}, 1.0));
  momentum_update(k, q, 0.999);
  for (double v : k[0].value.values()) EXPECT_NEAR(v, 0.001, 1e-15);
  momentum_update(k, q, 0.0);
  EXPECT_TRUE(k[0].value == q[0].value);
}

TEST(Momentum, ClosedFormGeometricSeries) {
  Rng rng(11);
  for (std::size_t u : {1u, 10u, 1000u}) {
    ParamStore k, q;
    k.add("a", uniform_init(Shape{4, 3}, 1.0, rng));
    q.add("a", uniform_init(Shape{4, 3}, 1.0, rng));
    const Tensor k0 = k[0].value;
    const double m = 0.999;
    for (std::size_t s = 0; s < u; ++s) momentum_update(k, q, m);
    const double mu = std::pow(m, static_cast<double>(u));
    for (std::size_t j = 0; j < k0.size(); ++j) EXPECT_NEAR(k[0].value[j], mu * k0[j] + (1 - mu) * q[0].value[j], 1e-12);
  }
}

TEST(Momentum, StaysInIntervalHull) {
  Rng rng(12);
  ParamStore k, q;
  k.add("a", uniform_init(Shape{20}, 1.0, rng));
  q.add("a", Tensor(Shape{20}));
  std::vector<double> lo(k[0].value.values()), hi(lo);
  std::uniform_real_distribution<double> u(-3, 3), mm(0.0, 0.999);
  for (int step = 0; step < 200; ++step) {
    for (std::size_t j = 0; j < 20; ++j) {
      q[0].value[j] = u(rng);
      lo[j] = std::min(lo[j], q[0].value[j]);
      hi[j] = std::max(hi[j], q[0].value[j]);
    }
    momentum_update(k, q, mm(rng));
    for (std::size_t j = 0; j < 20; ++j) {
      EXPECT_GE(k[0].value[j], lo[j] - 1e-15);
      EXPECT_LE(k[0].value[j], hi[j] + 1e-15);
    }
  }
}

TEST(Momentum, RejectsMismatch) {
  ParamStore k, q;
  k.add("a", Tensor(Shape{2}));
  q.add("a", Tensor(Shape{3}));
  EXPECT_THROW(momentum_update(k, q, 0.9), Error);
  EXPECT_THROW(momentum_update(k, k, 1.0), Error);
}
