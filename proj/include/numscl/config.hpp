#pragma once

// Run configuration: one JSON document with sections corpus, ner, num_encoder,
// scl, ljp and eval, plus a top-level seed from which every component seed is
// derived unless the section sets its own.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/checkpoint.hpp"
#include "numscl/corpus.hpp"
#include "numscl/ljp.hpp"
#include "numscl/ner_crf.hpp"
#include "numscl/num_encoder.hpp"

namespace numscl {

struct EvalConfig {
  /// "generator": confusing charges are the corpus's confusing pairs;
  /// "baseline": derived from a CE baseline's validation confusion matrix.
  std::string confusing_source = "generator";
  double confusing_threshold = 5.0;
  std::vector<std::string> strategies{"ce", "I", "II", "I+II", "in-batch"};
  std::size_t seeds = 5;
};

struct AppConfig {
  std::uint64_t seed = 2024;
  CorpusConfig corpus;
  NerConfig ner;
  NumEncoderConfig num_encoder;
  LjpConfig ljp;
  EvalConfig eval;
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw Error("config section \"" + section_ + "\" must be an object");
  }

  template <class T>
  bool read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error("config " + section_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
    return true;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error("config: unknown key " + section_ + "." + it.key());
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

inline const nlohmann::json& section(const nlohmann::json& root, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  return root.contains(name) ? root.at(name) : empty;
}

}  // namespace detail

/// Component seed tags for derive_seed.
inline constexpr std::uint64_t kSeedCorpus = 1, kSeedNer = 2, kSeedNum = 3, kSeedLjp = 4;

inline AppConfig config_from_json(const nlohmann::json& root) {
  if (!root.is_object()) throw Error("config must be a JSON object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    static const std::set<std::string> known{"seed", "corpus", "ner", "num_encoder", "scl", "ljp", "eval"};
    if (!known.count(it.key())) throw Error("config: unknown section \"" + it.key() + "\"");
  }
  AppConfig c;
  if (root.contains("seed")) c.seed = root.at("seed").get<std::uint64_t>();
  c.corpus.seed = derive_seed(c.seed, kSeedCorpus);
  c.ner.seed = derive_seed(c.seed, kSeedNer);
  c.num_encoder.seed = derive_seed(c.seed, kSeedNum);
  c.ljp.seed = derive_seed(c.seed, kSeedLjp);

  {
    detail::SectionReader r(detail::section(root, "corpus"), "corpus");
    auto& k = c.corpus;
    r.read("num_charges", k.num_charges);
    r.read("num_laws", k.num_laws);
    r.read("num_terms", k.num_terms);
    r.read("vocab_size", k.vocab_size);
    r.read("min_sentences", k.min_sentences);
    r.read("max_sentences", k.max_sentences);
    r.read("min_tokens", k.min_tokens);
    r.read("max_tokens", k.max_tokens);
    r.read("min_relevant", k.min_relevant);
    r.read("max_relevant", k.max_relevant);
    r.read("min_distractors", k.min_distractors);
    r.read("max_distractors", k.max_distractors);
    r.read("confusing_pairs", k.confusing_pairs);
    r.read("number_sensitive", k.number_sensitive);
    r.read("overlap_ratio", k.overlap_ratio);
    r.read("content_rate", k.content_rate);
    r.read("law_noise", k.law_noise);
    r.read("term_bucket_edges", k.term_bucket_edges);
    r.read("min_part", k.min_part);
    r.read("max_total", k.max_total);
    r.read("private_pool", k.private_pool);
    r.read("generic_pool", k.generic_pool);
    r.read("cue_tokens", k.cue_tokens);
    r.read("train_size", k.train_size);
    r.read("validation_size", k.validation_size);
    r.read("test_size", k.test_size);
    r.read("seed", k.seed);
    r.finish();
    validate(k);
  }
  {
    detail::SectionReader r(detail::section(root, "ner"), "ner");
    auto& k = c.ner;
    r.read("embed_dim", k.embed_dim);
    r.read("hidden", k.hidden);
    r.read("epochs", k.epochs);
    r.read("batch_size", k.batch_size);
    r.read("learning_rate", k.learning_rate);
    r.read("seed", k.seed);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(root, "num_encoder"), "num_encoder");
    auto& k = c.num_encoder;
    r.read("dim", k.dim);
    r.read("digit_embed", k.digit_embed);
    r.read("pairs", k.pairs);
    r.read("min_number", k.min_number);
    r.read("max_number", k.max_number);
    r.read("epochs", k.epochs);
    r.read("batch_size", k.batch_size);
    r.read("learning_rate", k.learning_rate);
    r.read("seed", k.seed);
    r.finish();
    if (k.max_number <= k.min_number || k.min_number < 0) throw Error("config num_encoder: need 0 <= min_number < max_number");
  }
  {
    detail::SectionReader r(detail::section(root, "scl"), "scl");
    auto& k = c.ljp;
    r.read("alpha", k.alpha);
    r.read("beta", k.beta);
    r.read("theta_w", k.theta_w);
    r.read("lambda", k.lambda);
    r.read("temperature", k.temperature);
    r.read("momentum", k.momentum);
    r.read("queue_capacity", k.queue_capacity);
    r.finish();
  }
  {
    detail::SectionReader r(detail::section(root, "ljp"), "ljp");
    auto& k = c.ljp;
    r.read("embed_dim", k.embed_dim);
    r.read("hidden", k.hidden);
    r.read("batch_size", k.batch_size);
    r.read("learning_rate", k.learning_rate);
    r.read("epochs", k.epochs);
    r.read("seed", k.seed);
    std::string s;
    if (r.read("strategy", s)) k.strategy = parse_strategy(s);
    r.read("use_evidence", k.use_evidence);
    if (r.read("amount_source", s)) k.amount_source = parse_amount_source(s);
    r.finish();
    k.validate();
  }
  {
    detail::SectionReader r(detail::section(root, "eval"), "eval");
    auto& k = c.eval;
    r.read("confusing_source", k.confusing_source);
    r.read("confusing_threshold", k.confusing_threshold);
    r.read("strategies", k.strategies);
    r.read("seeds", k.seeds);
    r.finish();
    if (k.confusing_source != "generator" && k.confusing_source != "baseline")
      throw Error("config eval.confusing_source must be \"generator\" or \"baseline\"");
    if (!(k.confusing_threshold > 0)) throw Error("config eval.confusing_threshold must be positive");
    for (const auto& s : k.strategies) parse_strategy(s);
  }
  return c;
}

/// Applies "section.key=value" to a config document; the value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("override \"" + assignment + "\" is not of the form key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    root[path] = value;
  } else {
    root[path.substr(0, dot)][path.substr(dot + 1)] = value;
  }
}

/// Large dimensions and data sizes; same code paths as the desk-scale defaults.
inline void apply_full_scale(nlohmann::json& root) {
  auto& l = root["ljp"];
  l["embed_dim"] = 200;
  l["hidden"] = 256;
  l["batch_size"] = 128;
  l["epochs"] = 16;
  auto& n = root["num_encoder"];
  n["dim"] = 256;
  n["pairs"] = 128000;
  n["epochs"] = 100;
  root["scl"]["queue_capacity"] = 65536;
}

inline nlohmann::json config_to_json(const AppConfig& c) {
  const auto& k = c.corpus;
  const auto& l = c.ljp;
  std::vector<std::string> strategies = c.eval.strategies;
  return {
      {"seed", c.seed},
      {"corpus",
       {{"num_charges", k.num_charges}, {"num_laws", k.num_laws}, {"num_terms", k.num_terms},
        {"vocab_size", k.vocab_size}, {"min_sentences", k.min_sentences}, {"max_sentences", k.max_sentences},
        {"min_tokens", k.min_tokens}, {"max_tokens", k.max_tokens}, {"min_relevant", k.min_relevant},
        {"max_relevant", k.max_relevant}, {"min_distractors", k.min_distractors},
        {"max_distractors", k.max_distractors}, {"confusing_pairs", k.confusing_pairs},
        {"number_sensitive", k.number_sensitive}, {"overlap_ratio", k.overlap_ratio},
        {"content_rate", k.content_rate}, {"law_noise", k.law_noise}, {"term_bucket_edges", k.term_bucket_edges},
        {"min_part", k.min_part}, {"max_total", k.max_total}, {"private_pool", k.private_pool},
        {"generic_pool", k.generic_pool}, {"cue_tokens", k.cue_tokens}, {"train_size", k.train_size},
        {"validation_size", k.validation_size}, {"test_size", k.test_size}, {"seed", k.seed}}},
      {"ner",
       {{"embed_dim", c.ner.embed_dim}, {"hidden", c.ner.hidden}, {"epochs", c.ner.epochs},
        {"batch_size", c.ner.batch_size}, {"learning_rate", c.ner.learning_rate}, {"seed", c.ner.seed}}},
      {"num_encoder",
       {{"dim", c.num_encoder.dim}, {"digit_embed", c.num_encoder.digit_embed}, {"pairs", c.num_encoder.pairs},
        {"min_number", c.num_encoder.min_number}, {"max_number", c.num_encoder.max_number},
        {"epochs", c.num_encoder.epochs}, {"batch_size", c.num_encoder.batch_size},
        {"learning_rate", c.num_encoder.learning_rate}, {"seed", c.num_encoder.seed}}},
      {"scl",
       {{"alpha", l.alpha}, {"beta", l.beta}, {"theta_w", l.theta_w}, {"lambda", l.lambda},
        {"temperature", l.temperature}, {"momentum", l.momentum}, {"queue_capacity", l.queue_capacity}}},
      {"ljp",
       {{"embed_dim", l.embed_dim}, {"hidden", l.hidden}, {"batch_size", l.batch_size},
        {"learning_rate", l.learning_rate}, {"epochs", l.epochs}, {"seed", l.seed},
        {"strategy", strategy_name(l.strategy)}, {"use_evidence", l.use_evidence},
        {"amount_source", amount_source_name(l.amount_source)}}},
      {"eval",
       {{"confusing_source", c.eval.confusing_source}, {"confusing_threshold", c.eval.confusing_threshold},
        {"strategies", strategies}, {"seeds", c.eval.seeds}}}};
}

/// Loads a config file (or defaults when path is empty) and applies overrides in order.
inline AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {},
                             bool full_scale = false) {
  nlohmann::json root = path.empty() ? nlohmann::json::object() : load_json(path);
  if (!root.is_object()) throw Error(path + ": config must be a JSON object");
  if (full_scale) apply_full_scale(root);
  for (const auto& o : overrides) apply_override(root, o);
  return config_from_json(root);
}

}  // namespace numscl
