#pragma once

// Momentum contrast for supervised contrastive learning: FIFO key queues with
// label buffers, the queue-based supervised contrastive loss, and the momentum
// update of the key encoder.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <sodium/utils.h>

#include "numscl/autodiff.hpp"

namespace numscl {

enum class Task : std::uint8_t { Charge = 0, Law = 1, Term = 2 };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Charge: return "charge";
    case Task::Law: return "law";
    case Task::Term: return "term";
  }
  return "charge";
}

struct LabelTriple {
  std::size_t charge = 0;
  std::size_t law = 0;
  std::size_t term = 0;
  std::size_t get(Task t) const { return t == Task::Charge ? charge : t == Task::Law ? law : term; }
  friend bool operator==(const LabelTriple&, const LabelTriple&) = default;
};

inline constexpr double kUnitNormTolerance = 1e-9;

inline std::string base64_encode(const unsigned char* p, std::size_t n) {
  std::string out(sodium_base64_ENCODED_LEN(n, sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), p, n, sodium_base64_VARIANT_ORIGINAL);
  out.pop_back();  // trailing NUL
  return out;
}

/// Fixed-capacity FIFO of unit-norm key features with aligned label triples.
/// Logical index 0 is the oldest entry.
class MomentumQueue {
 public:
  MomentumQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0) throw Error("queue capacity must be positive");
    if (dim == 0) throw Error("queue feature dimension must be positive");
    features_.assign(capacity * dim, 0.0);
    labels_.resize(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return fill_; }
  bool empty() const { return fill_ == 0; }

  std::span<const double> feature(std::size_t i) const { return {&features_[slot(i) * dim_], dim_}; }
  const LabelTriple& label(std::size_t i) const { return labels_[slot(i)]; }

  /// Appends the rows of `feats` (B x d) in order, evicting the oldest entries when full.
  void enqueue(const Tensor& feats, const std::vector<LabelTriple>& labels) {
    if (feats.rank() != 2 || feats.cols() != dim_)
      throw Error("enqueue: features " + shape_str(feats.shape()) + " do not match queue dimension " + std::to_string(dim_));
    const std::size_t b = feats.rows();
    if (labels.size() != b) throw Error("enqueue: label count does not match feature rows");
    if (b > capacity_) throw Error("enqueue: batch of " + std::to_string(b) + " exceeds queue capacity " + std::to_string(capacity_));
    for (std::size_t r = 0; r < b; ++r) {
      double n2 = 0.0;
      for (double v : feats.row(r)) n2 += v * v;
      if (std::fabs(std::sqrt(n2) - 1.0) > kUnitNormTolerance) throw Error("enqueue: features must have unit L2 norm");
    }
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t dst = (head_ + fill_) % capacity_;
      std::copy(feats.row(r).begin(), feats.row(r).end(), features_.begin() + static_cast<std::ptrdiff_t>(dst * dim_));
      labels_[dst] = labels[r];
      if (fill_ < capacity_) {
        ++fill_;
      } else {
        head_ = (head_ + 1) % capacity_;
      }
    }
  }

  /// Filled features in logical order (fill x d); the queue must be nonempty.
  Tensor features() const {
    if (fill_ == 0) throw Error("queue is empty");
    Tensor out(Shape{fill_, dim_});
    for (std::size_t i = 0; i < fill_; ++i) std::copy(feature(i).begin(), feature(i).end(), out.row(i).begin());
    return out;
  }

  std::vector<LabelTriple> labels() const {
    std::vector<LabelTriple> out;
    out.reserve(fill_);
    for (std::size_t i = 0; i < fill_; ++i) out.push_back(label(i));
    return out;
  }

  nlohmann::json to_json(bool include_features = false) const {
    nlohmann::json labs = nlohmann::json::array();
    for (std::size_t i = 0; i < fill_; ++i) labs.push_back({label(i).charge, label(i).law, label(i).term});
    nlohmann::json j = {{"capacity", capacity_}, {"dim", dim_}, {"fill", fill_}, {"labels", std::move(labs)}};
    if (include_features && fill_ > 0) {
      const Tensor f = features();
      std::vector<unsigned char> bytes(f.size() * sizeof(double));
      std::memcpy(bytes.data(), f.data().data(), bytes.size());
      j["features_base64"] = base64_encode(bytes.data(), bytes.size());
    }
    return j;
  }

 private:
  std::size_t slot(std::size_t i) const {
    if (i >= fill_) throw Error("queue index " + std::to_string(i) + " out of range (fill " + std::to_string(fill_) + ")");
    return (head_ + i) % capacity_;
  }

  std::size_t capacity_, dim_;
  std::size_t fill_ = 0, head_ = 0;
  std::vector<double> features_;
  std::vector<LabelTriple> labels_;
};

/// Queue entries whose label for `task` equals the query's.
inline std::vector<std::size_t> positives_strategy1(const MomentumQueue& q, std::size_t query_label, Task task) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q.label(i).get(task) == query_label) out.push_back(i);
  return out;
}

/// Queue entries agreeing with the query on charge, law and term.
inline std::vector<std::size_t> positives_strategy2(const MomentumQueue& q, const LabelTriple& query) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q.label(i) == query) out.push_back(i);
  return out;
}

struct SclResult {
  Var loss;
  std::size_t included = 0;  // queries with at least one positive
  bool warning = false;      // every query was excluded
};

/// Supervised contrastive loss of unit-norm queries against constant keys (N x d).
/// Each included query contributes logsumexp_a(q.k_a/t) - mean_{p in P} q.k_p/t;
/// the result is the mean over included queries. Queries with empty P are skipped.
inline SclResult scl_loss(Tape& tape, std::span<const Var> queries, const std::vector<std::vector<std::size_t>>& positives,
                          const Tensor& keys, double temperature) {
  if (temperature <= 0) throw Error("scl_loss: temperature must be positive");
  if (positives.size() != queries.size()) throw Error("scl_loss: one positive set per query required");
  std::vector<Var> rows;
  std::vector<const std::vector<std::size_t>*> sets;
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (!positives[i].empty()) {
      rows.push_back(queries[i]);
      sets.push_back(&positives[i]);
    }
  SclResult res;
  res.included = rows.size();
  if (rows.empty()) {
    res.loss = tape.constant(Tensor::scalar(0.0));
    res.warning = true;
    return res;
  }
  if (keys.rank() != 2) throw Error("scl_loss: keys must be a matrix");
  const std::size_t n = keys.rows(), d = keys.cols();
  Tensor kt(Shape{d, n});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t j = 0; j < d; ++j) kt.at(j, a) = keys.at(a, j);
  Tensor pos_weight(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double w = 1.0 / static_cast<double>(sets[r]->size());
    for (std::size_t p : *sets[r]) {
      if (p >= n) throw Error("scl_loss: positive index out of range");
      pos_weight.at(r, p) += w;
    }
  }
  Var logits = scale(matmul(stack_rows(rows), tape.constant(std::move(kt))), 1.0 / temperature);
  Var per_query = sub(sum(logsumexp(logits, 1)), sum(mul(logits, tape.constant(std::move(pos_weight)))));
  res.loss = scale(per_query, 1.0 / static_cast<double>(rows.size()));
  return res;
}

/// Contrastive loss whose dictionary is the current batch's own key features
/// (self included); positives are batch entries with matching labels under `match`.
template <class Match>
SclResult in_batch_scl_loss(Tape& tape, std::span<const Var> queries, const Tensor& batch_keys,
                            const std::vector<LabelTriple>& labels, double temperature, Match match) {
  if (temperature <= 0) throw Error("in_batch_scl_loss: temperature must be positive");
  const std::size_t b = queries.size();
  if (batch_keys.rank() != 2 || batch_keys.rows() != b || labels.size() != b)
    throw Error("in_batch_scl_loss: keys and labels must align with the batch");
  SclResult res;
  std::vector<Var> terms;
  for (std::size_t i = 0; i < b; ++i) {
    Tensor mask(Shape{b});
    double np = 0.0;
    for (std::size_t j = 0; j < b; ++j)
      if (match(labels[i], labels[j])) mask[j] = 1.0, np += 1.0;
    if (np == 0.0) continue;
    for (std::size_t j = 0; j < b; ++j) mask[j] /= np;
    Var sim = scale(matmul(tape.constant(batch_keys), queries[i]), 1.0 / temperature);
    terms.push_back(sub(logsumexp(sim), dot(sim, tape.constant(std::move(mask)))));
  }
  res.included = terms.size();
  if (terms.empty()) {
    res.loss = tape.constant(Tensor::scalar(0.0));
    res.warning = true;
    return res;
  }
  res.loss = scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
  return res;
}

/// theta_k <- m * theta_k + (1 - m) * theta_q, parameter by parameter.
inline void momentum_update(ParamStore& key, const ParamStore& query, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw Error("momentum must lie in [0, 1)");
  if (key.size() != query.size()) throw Error("momentum_update: parameter count mismatch");
  for (std::size_t i = 0; i < key.size(); ++i) {
    Tensor& k = key[i].value;
    const Tensor& q = query[i].value;
    Tensor::require_same_shape(k, q, "momentum_update");
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
  }
}

}  // namespace numscl
