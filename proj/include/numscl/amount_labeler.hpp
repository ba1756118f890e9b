#pragma once

// Weak supervision for numerical-evidence extraction: pick the sentences whose
// amounts add up to the known crime total, then tag their numbers as entities.

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/corpus.hpp"

namespace numscl {

struct SentenceAmounts {
  std::vector<std::int64_t> amounts;  // one aggregate per sentence
  std::int64_t target = 0;
};

enum class BioTag : std::uint8_t { O = 0, B = 1, I = 2 };
inline constexpr std::size_t kNumTags = 3;

inline const char* tag_name(BioTag t) {
  switch (t) {
    case BioTag::O: return "O";
    case BioTag::B: return "B-AMT";
    case BioTag::I: return "I-AMT";
  }
  return "O";
}

inline BioTag parse_tag(const std::string& s) {
  if (s == "O") return BioTag::O;
  if (s == "B-AMT") return BioTag::B;
  if (s == "I-AMT") return BioTag::I;
  throw Error("unknown BIO tag \"" + s + "\"");
}

struct BioTaggedDoc {
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::vector<BioTag>> tags;
  friend bool operator==(const BioTaggedDoc&, const BioTaggedDoc&) = default;
};

/// I-AMT never starts a sentence or follows O; tag and token lengths agree.
inline bool well_formed(const BioTaggedDoc& d) {
  if (d.tokens.size() != d.tags.size()) return false;
  for (std::size_t s = 0; s < d.tags.size(); ++s) {
    if (d.tags[s].size() != d.tokens[s].size()) return false;
    for (std::size_t i = 0; i < d.tags[s].size(); ++i)
      if (d.tags[s][i] == BioTag::I && (i == 0 || d.tags[s][i - 1] == BioTag::O)) return false;
  }
  return true;
}

inline void validate(const SentenceAmounts& sa) {
  if (sa.amounts.empty()) throw Error("sentence amounts must be nonempty");
  if (sa.target < 0) throw Error("target amount must be nonnegative");
  for (auto m : sa.amounts)
    if (m < 0) throw Error("sentence amounts must be nonnegative");
}

namespace detail {

inline bool binary_select(const std::vector<std::int64_t>& m, std::int64_t target, std::size_t start,
                          std::vector<std::size_t>& chosen) {
  for (std::size_t i = start; i < m.size(); ++i) {
    if (m[i] < target) {
      if (binary_select(m, target - m[i], i + 1, chosen)) {
        chosen.push_back(i);
        return true;
      }
    } else if (m[i] == target) {
      chosen.push_back(i);
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// First subset (depth-first, ascending index order) whose amounts sum exactly
/// to the target, as ascending indices; nullopt when none exists. A zero target
/// is met by the empty selection.
inline std::optional<std::vector<std::size_t>> select_sentences(const SentenceAmounts& sa) {
  validate(sa);
  if (sa.target == 0) return std::vector<std::size_t>{};
  std::vector<std::size_t> chosen;
  if (!detail::binary_select(sa.amounts, sa.target, 0, chosen)) return std::nullopt;
  std::reverse(chosen.begin(), chosen.end());
  return chosen;
}

struct SubsetSumResult {
  bool exists = false;
  std::vector<std::size_t> witness;  // ascending indices
};

inline constexpr std::int64_t kDefaultTargetCap = 10'000'000;

/// Exact 0-1 subset-sum by dynamic programming over (items x target), witness by backtracking.
inline SubsetSumResult subset_sum_oracle(const SentenceAmounts& sa, std::int64_t cap = kDefaultTargetCap) {
  validate(sa);
  if (sa.target > cap)
    throw Error("subset-sum target " + std::to_string(sa.target) + " exceeds cap " + std::to_string(cap));
  const std::size_t n = sa.amounts.size();
  const std::size_t T = static_cast<std::size_t>(sa.target);
  std::vector<std::vector<bool>> reach(n + 1, std::vector<bool>(T + 1, false));
  reach[0][0] = true;
  for (std::size_t i = 1; i <= n; ++i) {
    const auto mi = sa.amounts[i - 1];
    for (std::size_t s = 0; s <= T; ++s) {
      bool r = reach[i - 1][s];
      if (!r && mi >= 0 && static_cast<std::int64_t>(s) >= mi) r = reach[i - 1][s - static_cast<std::size_t>(mi)];
      reach[i][s] = r;
    }
  }
  SubsetSumResult res;
  res.exists = reach[n][T];
  if (!res.exists) return res;
  std::size_t s = T;
  for (std::size_t i = n; i > 0; --i) {
    if (reach[i - 1][s]) continue;
    res.witness.push_back(i - 1);
    s -= static_cast<std::size_t>(sa.amounts[i - 1]);
  }
  std::reverse(res.witness.begin(), res.witness.end());
  return res;
}

/// Number of distinct subsets of the nonzero amounts summing to the target
/// (enumeration; intended for at most ~20 nonzero entries).
inline std::size_t count_subset_solutions(const SentenceAmounts& sa) {
  std::vector<std::int64_t> nz;
  for (auto m : sa.amounts)
    if (m != 0) nz.push_back(m);
  if (nz.size() > 24) throw Error("count_subset_solutions: too many nonzero amounts for enumeration");
  std::size_t count = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << nz.size()); ++mask) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < nz.size(); ++i)
      if (mask >> i & 1U) s += nz[i];
    count += s == sa.target;
  }
  return count;
}

/// Per-sentence sums of all numeric spans, with the instance's known total.
inline SentenceAmounts sentence_amounts(const CaseInstance& doc) {
  if (!doc.total_amount) throw Error("instance has no total_amount");
  SentenceAmounts sa;
  sa.amounts.assign(doc.sentences.size(), 0);
  for (const auto& s : doc.numeric_spans) sa.amounts.at(s.sent) += s.value;
  sa.target = *doc.total_amount;
  return sa;
}

/// Tags every numeric token of the selected sentences B-AMT, everything else O.
inline BioTaggedDoc to_bio(const CaseInstance& doc, const std::vector<std::size_t>& selected) {
  BioTaggedDoc out;
  out.tokens = doc.sentences;
  out.tags.resize(doc.sentences.size());
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) out.tags[s].assign(doc.sentences[s].size(), BioTag::O);
  std::vector<bool> sel(doc.sentences.size(), false);
  for (std::size_t i : selected) {
    if (i >= sel.size()) throw Error("to_bio: selected sentence " + std::to_string(i) + " out of range");
    sel[i] = true;
  }
  for (const auto& span : doc.numeric_spans)
    if (sel[span.sent]) out.tags[span.sent][span.pos] = BioTag::B;
  return out;
}

struct CaeNerReport {
  std::size_t total = 0;
  std::size_t solved = 0;
  std::size_t dropped_count = 0;
  std::size_t ambiguous_count = 0;
  std::size_t unmeasured_count = 0;  // too many numeric sentences to enumerate
  double solvable_fraction = 0.0;

  nlohmann::json to_json() const {
    return {{"solvable_fraction", solvable_fraction},
            {"ambiguous_count", ambiguous_count},
            {"dropped_count", dropped_count},
            {"total", total},
            {"unmeasured_count", unmeasured_count}};
  }
};

struct CaeNerDataset {
  std::vector<BioTaggedDoc> docs;
  std::vector<std::size_t> source_index;  // position of each doc in the input corpus
  std::vector<bool> ambiguous;
  CaeNerReport report;
};

inline constexpr std::size_t kAmbiguityEnumerationLimit = 12;

/// Converts amount-annotated instances into BIO training data; unsolvable ones are dropped.
inline CaeNerDataset build_caener(const std::vector<CaseInstance>& corpus) {
  CaeNerDataset out;
  out.report.total = corpus.size();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SentenceAmounts sa = sentence_amounts(corpus[i]);
    auto sel = select_sentences(sa);
    if (!sel) {
      ++out.report.dropped_count;
      continue;
    }
    std::size_t nonzero = 0;
    for (auto m : sa.amounts) nonzero += m != 0;
    bool ambiguous = false;
    if (nonzero <= kAmbiguityEnumerationLimit) {
      ambiguous = count_subset_solutions(sa) > 1;
    } else {
      ++out.report.unmeasured_count;
    }
    out.report.ambiguous_count += ambiguous;
    out.docs.push_back(to_bio(corpus[i], *sel));
    out.source_index.push_back(i);
    out.ambiguous.push_back(ambiguous);
  }
  out.report.solved = out.docs.size();
  if (out.docs.empty()) throw Error("CAE-NER conversion produced an empty dataset");
  out.report.solvable_fraction = static_cast<double>(out.report.solved) / static_cast<double>(out.report.total);
  return out;
}

inline nlohmann::json to_json(const BioTaggedDoc& d) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& s : d.tags) {
    nlohmann::json row = nlohmann::json::array();
    for (BioTag t : s) row.push_back(tag_name(t));
    tags.push_back(std::move(row));
  }
  return {{"tokens", d.tokens}, {"tags", std::move(tags)}};
}

inline BioTaggedDoc bio_from_json(const nlohmann::json& j) {
  BioTaggedDoc d;
  d.tokens = detail::field_as<std::vector<std::vector<std::size_t>>>(j, "tokens");
  const auto raw = detail::field_as<std::vector<std::vector<std::string>>>(j, "tags");
  for (const auto& s : raw) {
    std::vector<BioTag> row;
    for (const auto& t : s) row.push_back(parse_tag(t));
    d.tags.push_back(std::move(row));
  }
  if (!well_formed(d)) throw Error("BIO document is not well-formed");
  return d;
}

inline void write_bio_jsonl(const std::vector<BioTaggedDoc>& docs, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  for (const auto& d : docs) os << to_json(d).dump() << '\n';
}

inline std::vector<BioTaggedDoc> read_bio_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  std::vector<BioTaggedDoc> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(bio_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace numscl
