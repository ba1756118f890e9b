#pragma once

// Reference implementations used as test oracles: exhaustive enumeration,
// plain-loop transcriptions and random input generators. Nothing here calls
// into the library code under test except for path_score (itself checked
// against hand-computed values) and the tensor type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "numscl/amount_labeler.hpp"
#include "numscl/moco.hpp"
#include "numscl/ner_crf.hpp"

namespace numscl::oracle {

inline Tensor random_tensor(Shape s, Rng& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// n rows of unit L2 norm, Gaussian directions.
inline Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::normal_distribution<double> g;
  Tensor t(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (auto& v : t.row(r)) v = g(rng), s += v * v;
    for (auto& v : t.row(r)) v /= std::sqrt(s);
  }
  return t;
}

inline std::vector<LabelTriple> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> u(0, k - 1);
  std::vector<LabelTriple> out(n);
  for (auto& l : out) l = {u(rng), u(rng), u(rng)};
  return out;
}

// ---------------------------------------------------------------------------
// CRF

/// Calls f on every tag path of length len over k tags.
template <class F>
void for_each_path(std::size_t len, std::size_t k, F&& f) {
  std::vector<std::size_t> y(len, 0);
  while (true) {
    f(y);
    std::size_t i = 0;
    while (i < len && ++y[i] == k) y[i++] = 0;
    if (i == len) return;
  }
}

inline double brute_log_partition(const Tensor& e, const Tensor& a, const Tensor& s, const Tensor& n) {
  std::vector<double> scores;
  for_each_path(e.rows(), e.cols(), [&](const std::vector<std::size_t>& y) { scores.push_back(path_score(e, a, s, n, y)); });
  const double mx = *std::max_element(scores.begin(), scores.end());
  double acc = 0.0;
  for (double v : scores) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

/// Highest-scoring path; the first maximum in enumeration order wins.
inline std::vector<std::size_t> brute_best(const Tensor& e, const Tensor& a, const Tensor& s, const Tensor& n) {
  std::vector<std::size_t> best;
  double bs = -INFINITY;
  for_each_path(e.rows(), e.cols(), [&](const std::vector<std::size_t>& y) {
    const double v = path_score(e, a, s, n, y);
    if (v > bs) bs = v, best = y;
  });
  return best;
}

// ---------------------------------------------------------------------------
// Subset sum

/// All subsets summing to the target, each as ascending indices.
inline std::vector<std::vector<std::size_t>> brute_force(const SentenceAmounts& sa) {
  std::vector<std::vector<std::size_t>> out;
  const std::size_t n = sa.amounts.size();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    std::int64_t s = 0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) s += sa.amounts[i], idx.push_back(i);
    if (s == sa.target) out.push_back(idx);
  }
  return out;
}

inline std::int64_t sum_at(const SentenceAmounts& sa, const std::vector<std::size_t>& idx) {
  std::int64_t s = 0;
  for (auto i : idx) s += sa.amounts.at(i);
  return s;
}

/// Up to 12 sentences with small amounts, so that both outcomes are common.
inline SentenceAmounts random_amounts(Rng& rng) {
  std::uniform_int_distribution<std::size_t> n(1, 12);
  std::uniform_int_distribution<std::int64_t> v(0, 20), t(0, 60);
  SentenceAmounts sa;
  sa.amounts.resize(n(rng));
  for (auto& m : sa.amounts) m = v(rng);
  sa.target = t(rng);
  return sa;
}

// ---------------------------------------------------------------------------
// Contrastive loss

/// The contrastive loss written with plain loops: per query, the mean over its
/// positives of -log softmax over all keys; averaged over queries with positives.
inline double naive_scl(const Tensor& q, const Tensor& k, const std::vector<std::vector<std::size_t>>& pos, double t) {
  double total = 0;
  std::size_t inc = 0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    if (pos[i].empty()) continue;
    ++inc;
    auto dotp = [&](std::size_t a) {
      double s = 0;
      for (std::size_t j = 0; j < q.cols(); ++j) s += q.at(i, j) * k.at(a, j);
      return s / t;
    };
    double den = 0;
    for (std::size_t a = 0; a < k.rows(); ++a) den += std::exp(dotp(a));
    double term = 0;
    for (std::size_t p : pos[i]) term += -std::log(std::exp(dotp(p)) / den);
    total += term / static_cast<double>(pos[i].size());
  }
  return inc ? total / static_cast<double>(inc) : 0.0;
}

}  // namespace numscl::oracle
