#pragma once

// Synthetic legal-like multi-task corpora and their JSONL serialization.
//
// Token-id layout (see VocabLayout): 0 padding, 1 the number placeholder,
// then amount cues, distractor cues, a generic word pool, and per-charge
// content pools. Members of a confusing pair draw most content tokens from a
// pool they share; number-sensitive charges take their term label from the
// bucket of the total crime amount.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/layers.hpp"
#include "numscl/tensor.hpp"

namespace numscl {

struct NumericSpan {
  std::size_t sent = 0;
  std::size_t pos = 0;
  std::int64_t value = 0;
  bool relevant = false;
  friend bool operator==(const NumericSpan&, const NumericSpan&) = default;
};

struct CaseInstance {
  std::vector<std::vector<std::size_t>> sentences;
  std::vector<NumericSpan> numeric_spans;
  std::size_t charge = 0;
  std::size_t law = 0;
  std::size_t term = 0;
  std::optional<std::int64_t> total_amount;
  friend bool operator==(const CaseInstance&, const CaseInstance&) = default;

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
};

struct CorpusConfig {
  std::size_t num_charges = 20;
  std::size_t num_laws = 15;
  std::size_t num_terms = 11;
  std::size_t vocab_size = 2000;
  std::size_t min_sentences = 5;
  std::size_t max_sentences = 15;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 10;
  std::size_t min_relevant = 1;
  std::size_t max_relevant = 4;
  std::size_t min_distractors = 0;
  std::size_t max_distractors = 5;
  std::vector<std::pair<std::size_t, std::size_t>> confusing_pairs{{0, 1}, {6, 7}, {8, 9}, {10, 11}};
  std::vector<std::size_t> number_sensitive{0, 1, 2, 3, 4, 5};
  double overlap_ratio = 0.8;
  /// Probability that a non-number word is drawn from the charge's content pool.
  double content_rate = 0.3;
  double law_noise = 0.05;
  std::vector<std::int64_t> term_bucket_edges{10000, 20000, 40000, 60000, 80000, 100000, 130000, 160000, 200000, 250000};
  std::int64_t min_part = 100;
  std::int64_t max_total = 300000;
  std::size_t private_pool = 10;
  std::size_t generic_pool = 200;
  std::size_t cue_tokens = 4;
  std::size_t train_size = 4000;
  std::size_t validation_size = 500;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;
};

inline constexpr std::size_t kPadToken = 0;
inline constexpr std::size_t kNumberToken = 1;

/// Id ranges of the synthetic vocabulary.
struct VocabLayout {
  std::size_t amount_cue_begin = 0, distractor_cue_begin = 0, generic_begin = 0, content_begin = 0, end = 0;
  std::size_t shared_pool = 0;
  std::size_t pool_per_charge = 0;
  /// Per charge: its private content ids, and the shared-pool ids (empty if not in a pair).
  std::vector<std::vector<std::size_t>> private_ids;
  std::vector<std::vector<std::size_t>> shared_ids;

  bool is_content(std::size_t tok) const { return tok >= content_begin && tok < end; }
};

inline std::size_t term_bucket(std::int64_t total, const std::vector<std::int64_t>& edges) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), total) - edges.begin());
}

inline void validate(const CorpusConfig& c) {
  if (c.num_charges < 2) throw Error("corpus: at least 2 charges required");
  if (c.num_laws < 1 || c.num_terms < 1) throw Error("corpus: law and term counts must be positive");
  if (c.vocab_size == 0) throw Error("corpus: empty vocabulary");
  for (std::size_t i = 1; i < c.term_bucket_edges.size(); ++i)
    if (c.term_bucket_edges[i] <= c.term_bucket_edges[i - 1])
      throw Error("corpus: term bucket edges must be strictly increasing");
  if (c.term_bucket_edges.size() + 1 > c.num_terms)
    throw Error("corpus: " + std::to_string(c.term_bucket_edges.size() + 1) + " amount buckets exceed term count " +
                std::to_string(c.num_terms));
  if (!c.term_bucket_edges.empty() && (c.term_bucket_edges.front() <= 0 || c.term_bucket_edges.back() >= c.max_total))
    throw Error("corpus: term bucket edges must lie inside (0, max_total)");
  if (c.min_sentences == 0 || c.min_sentences > c.max_sentences) throw Error("corpus: bad sentence count range");
  if (c.min_tokens < 2 || c.min_tokens > c.max_tokens) throw Error("corpus: bad token count range (min 2)");
  if (c.min_relevant > c.max_relevant || c.min_distractors > c.max_distractors)
    throw Error("corpus: bad number count range");
  if (c.max_relevant + c.max_distractors > c.max_sentences)
    throw Error("corpus: more numbers than sentences can hold");
  if (c.min_part <= 0 || c.min_part * static_cast<std::int64_t>(std::max<std::size_t>(1, c.max_relevant)) > c.max_total)
    throw Error("corpus: bad amount range");
  if (c.overlap_ratio < 0.0 || c.overlap_ratio >= 1.0) throw Error("corpus: overlap ratio must lie in [0, 1)");
  if (c.content_rate < 0.0 || c.content_rate > 1.0 || c.law_noise < 0.0 || c.law_noise > 1.0)
    throw Error("corpus: rates must lie in [0, 1]");
  if (c.cue_tokens == 0 || c.private_pool == 0 || c.generic_pool == 0) throw Error("corpus: pools must be nonempty");
  std::set<std::size_t> seen;
  for (auto [a, b] : c.confusing_pairs) {
    if (a == b || a >= c.num_charges || b >= c.num_charges)
      throw Error("corpus: confusing pair (" + std::to_string(a) + "," + std::to_string(b) + ") invalid");
    if (!seen.insert(a).second || !seen.insert(b).second) throw Error("corpus: confusing pairs must be disjoint");
  }
  for (std::size_t s : c.number_sensitive)
    if (s >= c.num_charges) throw Error("corpus: number-sensitive charge " + std::to_string(s) + " out of range");
}

inline VocabLayout make_layout(const CorpusConfig& c) {
  VocabLayout v;
  v.amount_cue_begin = 2;
  v.distractor_cue_begin = v.amount_cue_begin + c.cue_tokens;
  v.generic_begin = v.distractor_cue_begin + c.cue_tokens;
  v.content_begin = v.generic_begin + c.generic_pool;
  // shared / (shared + private) >= overlap_ratio
  v.shared_pool = c.overlap_ratio > 0.0
                      ? static_cast<std::size_t>(std::ceil(c.private_pool * c.overlap_ratio / (1.0 - c.overlap_ratio) - 1e-9))
                      : 0;
  v.pool_per_charge = c.private_pool + v.shared_pool;
  v.private_ids.assign(c.num_charges, {});
  v.shared_ids.assign(c.num_charges, {});
  std::vector<int> partner(c.num_charges, -1);
  for (auto [a, b] : c.confusing_pairs) {
    partner[a] = static_cast<int>(b);
    partner[b] = static_cast<int>(a);
  }
  std::size_t next = v.content_begin;
  for (std::size_t ch = 0; ch < c.num_charges; ++ch) {
    if (partner[ch] >= 0 && static_cast<std::size_t>(partner[ch]) < ch) continue;  // pool already assigned
    if (partner[ch] >= 0) {
      std::vector<std::size_t> shared(v.shared_pool);
      std::iota(shared.begin(), shared.end(), next);
      next += v.shared_pool;
      v.shared_ids[ch] = shared;
      v.shared_ids[static_cast<std::size_t>(partner[ch])] = shared;
      for (std::size_t who : {ch, static_cast<std::size_t>(partner[ch])}) {
        v.private_ids[who].resize(c.private_pool);
        std::iota(v.private_ids[who].begin(), v.private_ids[who].end(), next);
        next += c.private_pool;
      }
    } else {
      v.private_ids[ch].resize(v.pool_per_charge);
      std::iota(v.private_ids[ch].begin(), v.private_ids[ch].end(), next);
      next += v.pool_per_charge;
    }
  }
  v.end = next;
  if (v.end > c.vocab_size)
    throw Error("corpus: vocabulary size " + std::to_string(c.vocab_size) + " too small for layout needing " +
                std::to_string(v.end));
  return v;
}

inline std::size_t law_of_charge(std::size_t charge, std::size_t num_laws) { return charge % num_laws; }

namespace detail {

/// Splits `total` into k parts, each at least `min_part`.
inline std::vector<std::int64_t> split_amount(std::int64_t total, std::size_t k, std::int64_t min_part, Rng& rng) {
  std::int64_t slack = total - static_cast<std::int64_t>(k) * min_part;
  std::vector<std::int64_t> cuts{0, slack};
  std::uniform_int_distribution<std::int64_t> d(0, slack);
  for (std::size_t i = 1; i < k; ++i) cuts.push_back(d(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::int64_t> parts;
  for (std::size_t i = 0; i < k; ++i) parts.push_back(min_part + cuts[i + 1] - cuts[i]);
  return parts;
}

inline std::size_t charge_term(std::size_t charge, std::size_t num_terms, Rng& rng) {
  const long centre = static_cast<long>((charge * 7 + 3) % num_terms);
  std::discrete_distribution<int> offs({0.05, 0.2, 0.5, 0.2, 0.05});
  long t = centre + offs(rng) - 2;
  const long n = static_cast<long>(num_terms);
  if (t < 0) t = -t;
  if (t >= n) t = 2 * (n - 1) - t;
  return static_cast<std::size_t>(std::clamp(t, 0L, n - 1));
}

inline CaseInstance generate_instance(const CorpusConfig& c, const VocabLayout& v, std::size_t charge,
                                      const std::vector<bool>& sensitive, Rng& rng) {
  auto uni = [&rng](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  CaseInstance inst;
  inst.charge = charge;
  inst.law = law_of_charge(charge, c.num_laws);
  if (u01(rng) < c.law_noise) {
    std::size_t other = uni(0, c.num_laws - 1);
    if (c.num_laws > 1 && other == inst.law) other = (other + 1) % c.num_laws;
    inst.law = other;
  }

  const std::size_t n_rel = uni(c.min_relevant, c.max_relevant);
  const std::size_t n_dis = uni(c.min_distractors, c.max_distractors);
  std::vector<std::int64_t> amounts;
  if (n_rel > 0) {
    const std::int64_t floor_total = static_cast<std::int64_t>(n_rel) * c.min_part;
    std::int64_t total = 0;
    if (sensitive[charge]) {
      const std::size_t buckets = c.term_bucket_edges.size() + 1;
      std::size_t b = uni(0, buckets - 1);
      std::int64_t lo = b == 0 ? floor_total : c.term_bucket_edges[b - 1];
      std::int64_t hi = b + 1 == buckets ? c.max_total : c.term_bucket_edges[b] - 1;
      lo = std::max(lo, floor_total);
      if (hi < lo) hi = lo;
      total = std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
      inst.term = term_bucket(total, c.term_bucket_edges);
    } else {
      total = std::uniform_int_distribution<std::int64_t>(floor_total, c.max_total)(rng);
      inst.term = charge_term(charge, c.num_terms, rng);
    }
    amounts = split_amount(total, n_rel, c.min_part, rng);
    inst.total_amount = total;
  } else {
    inst.total_amount = 0;
    inst.term = sensitive[charge] ? 0 : charge_term(charge, c.num_terms, rng);
  }

  const std::size_t n_sent = std::max(uni(c.min_sentences, c.max_sentences), n_rel + n_dis);
  std::vector<std::size_t> slots(n_sent);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  // slot role: 0 plain, 1 relevant amount, 2 distractor
  std::vector<int> role(n_sent, 0);
  std::vector<std::int64_t> value(n_sent, 0);
  for (std::size_t i = 0; i < n_rel; ++i) {
    role[slots[i]] = 1;
    value[slots[i]] = amounts[i];
  }
  for (std::size_t i = 0; i < n_dis; ++i) {
    role[slots[n_rel + i]] = 2;
    // ages, dates, counts: small values
    value[slots[n_rel + i]] = static_cast<std::int64_t>(uni(1, 99));
  }

  const auto& priv = v.private_ids[charge];
  const auto& shared = v.shared_ids[charge];
  auto content_token = [&]() {
    if (!shared.empty() && u01(rng) < c.overlap_ratio) return shared[uni(0, shared.size() - 1)];
    return priv[uni(0, priv.size() - 1)];
  };
  auto word = [&]() {
    if (u01(rng) < c.content_rate) return content_token();
    return v.generic_begin + uni(0, c.generic_pool - 1);
  };

  inst.sentences.resize(n_sent);
  for (std::size_t s = 0; s < n_sent; ++s) {
    const std::size_t len = uni(c.min_tokens, c.max_tokens);
    auto& toks = inst.sentences[s];
    toks.reserve(len);
    for (std::size_t i = 0; i < len; ++i) toks.push_back(word());
    if (role[s] != 0) {
      const std::size_t pos = uni(1, len - 1);
      const std::size_t cue_base = role[s] == 1 ? v.amount_cue_begin : v.distractor_cue_begin;
      toks[pos - 1] = cue_base + uni(0, c.cue_tokens - 1);
      toks[pos] = kNumberToken;
      inst.numeric_spans.push_back({s, pos, value[s], role[s] == 1});
    }
  }
  std::sort(inst.numeric_spans.begin(), inst.numeric_spans.end(),
            [](const NumericSpan& a, const NumericSpan& b) { return std::tie(a.sent, a.pos) < std::tie(b.sent, b.pos); });
  return inst;
}

inline std::vector<CaseInstance> generate_split(const CorpusConfig& c, const VocabLayout& v, std::size_t n,
                                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<bool> sensitive(c.num_charges, false);
  for (std::size_t s : c.number_sensitive) sensitive[s] = true;
  // balanced charge marginal
  std::vector<std::size_t> charges(n);
  for (std::size_t i = 0; i < n; ++i) charges[i] = i % c.num_charges;
  std::shuffle(charges.begin(), charges.end(), rng);
  std::vector<CaseInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_instance(c, v, charges[i], sensitive, rng));
  return out;
}

}  // namespace detail

struct Corpus {
  std::vector<CaseInstance> train, validation, test;
};

/// Deterministic given config.seed; each split uses an independently derived seed.
inline Corpus generate(const CorpusConfig& c) {
  validate(c);
  const VocabLayout v = make_layout(c);
  Corpus out;
  out.train = detail::generate_split(c, v, c.train_size, derive_seed(c.seed, 101));
  out.validation = detail::generate_split(c, v, c.validation_size, derive_seed(c.seed, 102));
  out.test = detail::generate_split(c, v, c.test_size, derive_seed(c.seed, 103));
  return out;
}

/// Content (non-generic, non-cue) token ids used by instances of one charge.
inline std::set<std::size_t> charge_vocabulary(const std::vector<CaseInstance>& data, std::size_t charge,
                                               const VocabLayout& v) {
  std::set<std::size_t> out;
  for (const auto& inst : data)
    if (inst.charge == charge)
      for (const auto& s : inst.sentences)
        for (std::size_t t : s)
          if (v.is_content(t)) out.insert(t);
  return out;
}

/// |Va ∩ Vb| / min(|Va|, |Vb|); 0 when either is empty.
inline double vocabulary_overlap(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t common = 0;
  for (std::size_t t : a) common += b.count(t);
  return static_cast<double>(common) / static_cast<double>(std::min(a.size(), b.size()));
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::json to_json(const CaseInstance& inst) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : inst.numeric_spans)
    spans.push_back({{"sent", s.sent}, {"pos", s.pos}, {"value", s.value}, {"relevant", s.relevant}});
  nlohmann::json j = {{"sentences", inst.sentences},
                      {"numeric_spans", std::move(spans)},
                      {"charge", inst.charge},
                      {"law", inst.law},
                      {"term", inst.term}};
  if (inst.total_amount) j["total_amount"] = *inst.total_amount;
  return j;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw Error(std::string("missing required field \"") + name + "\"");
  return *it;
}

template <typename T>
T field_as(const nlohmann::json& j, const char* name) {
  const auto& f = require_field(j, name);
  try {
    return f.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(std::string("field \"") + name + "\" has the wrong type");
  }
}

}  // namespace detail

inline CaseInstance instance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("instance is not a JSON object");
  CaseInstance inst;
  inst.sentences = detail::field_as<std::vector<std::vector<std::size_t>>>(j, "sentences");
  const auto& spans = detail::require_field(j, "numeric_spans");
  if (!spans.is_array()) throw Error("field \"numeric_spans\" has the wrong type");
  for (const auto& s : spans) {
    NumericSpan ns;
    ns.sent = detail::field_as<std::size_t>(s, "sent");
    ns.pos = detail::field_as<std::size_t>(s, "pos");
    ns.value = detail::field_as<std::int64_t>(s, "value");
    ns.relevant = detail::field_as<bool>(s, "relevant");
    if (ns.sent >= inst.sentences.size() || ns.pos >= inst.sentences[ns.sent].size())
      throw Error("numeric span (" + std::to_string(ns.sent) + "," + std::to_string(ns.pos) + ") outside the document");
    inst.numeric_spans.push_back(ns);
  }
  inst.charge = detail::field_as<std::size_t>(j, "charge");
  inst.law = detail::field_as<std::size_t>(j, "law");
  inst.term = detail::field_as<std::size_t>(j, "term");
  if (j.contains("total_amount")) inst.total_amount = detail::field_as<std::int64_t>(j, "total_amount");
  return inst;
}

inline void write_jsonl(const std::vector<CaseInstance>& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  for (const auto& inst : data) os << to_json(inst).dump() << '\n';
  if (!os) throw Error("write failed: " + path);
}

inline std::vector<CaseInstance> read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  std::vector<CaseInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace numscl
