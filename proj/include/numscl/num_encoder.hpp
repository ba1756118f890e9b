#pragma once

// Number encoder over decimal digit sequences, pretrained so that the cosine
// distance between two encodings tracks the relative distance of the numbers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/autodiff.hpp"
#include "numscl/checkpoint.hpp"
#include "numscl/layers.hpp"
#include "numscl/optim.hpp"

namespace numscl {

inline constexpr std::size_t kEndDigit = 10;
inline constexpr std::size_t kDigitSymbols = 11;

struct NumEncoderConfig {
  std::size_t dim = 32;
  std::size_t digit_embed = 16;
  std::size_t pairs = 20000;
  std::int64_t min_number = 0;
  std::int64_t max_number = 300000;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::uint64_t seed = 11;
};

struct NumberPair {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const NumberPair&, const NumberPair&) = default;
};

/// 2|x-y| / (|x|+|y|), in [0, 2].
inline double relative_distance(std::int64_t x, std::int64_t y) {
  const double den = std::fabs(static_cast<double>(x)) + std::fabs(static_cast<double>(y));
  if (den == 0.0) throw Error("relative distance undefined for (0, 0)");
  return 2.0 * std::fabs(static_cast<double>(x - y)) / den;
}

/// Decimal digits, most-significant first, followed by the end symbol.
inline std::vector<std::size_t> digit_sequence(std::int64_t n) {
  if (n < 0) throw Error("negative numbers are not supported");
  std::vector<std::size_t> d;
  do {
    d.push_back(static_cast<std::size_t>(n % 10));
    n /= 10;
  } while (n > 0);
  std::reverse(d.begin(), d.end());
  d.push_back(kEndDigit);
  return d;
}

class NumEncoder {
 public:
  explicit NumEncoder(const NumEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.max_number <= cfg.min_number || cfg.min_number < 0)
      throw Error("num_encoder: need 0 <= min_number < max_number");
    if (cfg.dim == 0 || cfg.digit_embed == 0) throw Error("num_encoder: dimensions must be positive");
    Rng rng(cfg.seed);
    embed_ = Embedding::make(store_, "num.embed", kDigitSymbols, cfg.digit_embed, rng);
    gru_ = Gru::make(store_, "num.gru", cfg.digit_embed, cfg.dim, rng);
  }
  NumEncoder(NumEncoder&&) = default;
  NumEncoder& operator=(NumEncoder&&) = default;

  const NumEncoderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  NumEncoder clone() const {
    NumEncoder c(cfg_);
    c.store_.copy_values_from(store_);
    return c;
  }

  bool in_range(std::int64_t n) const { return n >= cfg_.min_number && n <= cfg_.max_number; }
  std::int64_t clamp(std::int64_t n) const { return std::clamp(n, cfg_.min_number, cfg_.max_number); }

  /// Final GRU state over the digit sequence.
  Var encode(Tape& t, std::int64_t n) const {
    if (!in_range(n))
      throw Error("number " + std::to_string(n) + " outside encoder range [" + std::to_string(cfg_.min_number) + ", " +
                  std::to_string(cfg_.max_number) + "]");
    const auto digits = digit_sequence(n);
    Var h = gru_(t, embed_.lookup(t, digits));
    return row(h, digits.size() - 1);
  }

  /// Frozen encoding as a plain tensor.
  Tensor encode_value(std::int64_t n) const {
    Tape t(false);
    return encode(t, n).value();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = checkpoint_header("num_encoder");
    j["config"] = {{"dim", cfg_.dim},          {"digit_embed", cfg_.digit_embed}, {"pairs", cfg_.pairs},
                   {"min_number", cfg_.min_number}, {"max_number", cfg_.max_number}, {"epochs", cfg_.epochs},
                   {"batch_size", cfg_.batch_size}, {"learning_rate", cfg_.learning_rate}, {"seed", cfg_.seed}};
    j["params"] = params_to_json(store_);
    return j;
  }

  static NumEncoder from_json(const nlohmann::json& j) {
    check_header(j, "num_encoder");
    const auto& c = j.at("config");
    NumEncoderConfig cfg;
    cfg.dim = c.at("dim");
    cfg.digit_embed = c.at("digit_embed");
    cfg.pairs = c.at("pairs");
    cfg.min_number = c.at("min_number");
    cfg.max_number = c.at("max_number");
    cfg.epochs = c.at("epochs");
    cfg.batch_size = c.at("batch_size");
    cfg.learning_rate = c.at("learning_rate");
    cfg.seed = c.at("seed");
    NumEncoder e(cfg);
    params_from_json(e.store_, j.at("params"));
    return e;
  }

 private:
  NumEncoderConfig cfg_;
  ParamStore store_;
  Embedding embed_;
  Gru gru_;
};

/// | relative_distance(x, y) - cosdist(enc(x), enc(y)) |
inline Var pair_loss(Tape& t, const NumEncoder& enc, const NumberPair& p) {
  const double target = relative_distance(p.x, p.y);
  return abs(add_scalar(cosine_distance(enc.encode(t, p.x), enc.encode(t, p.y)), -target));
}

inline std::vector<NumberPair> sample_pairs(std::size_t count, std::int64_t min_number, std::int64_t max_number,
                                            std::uint64_t seed) {
  if (count == 0) throw Error("sample_pairs: count must be positive");
  if (max_number <= min_number || min_number < 0) throw Error("sample_pairs: need 0 <= min < max");
  Rng rng(seed);
  std::uniform_int_distribution<std::int64_t> u(min_number, max_number);
  std::vector<NumberPair> out;
  out.reserve(count);
  while (out.size() < count) {
    NumberPair p{u(rng), u(rng)};
    if (p.x == 0 && p.y == 0) continue;
    out.push_back(p);
  }
  return out;
}

struct NumPretrainResult {
  NumEncoder encoder;
  std::vector<double> history;  // mean pair loss per epoch
};

inline NumPretrainResult pretrain(const std::vector<NumberPair>& pairs, const NumEncoderConfig& cfg) {
  if (pairs.empty()) throw Error("pretrain: no training pairs");
  NumEncoder enc(cfg);
  Adam opt(enc.params(), cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, 23));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t i = b; i < e; ++i) losses.push_back(pair_loss(tape, enc, pairs[order[i]]));
      Var loss = scale(add_n(losses), 1.0 / static_cast<double>(e - b));
      if (!std::isfinite(loss.item())) throw Error("pretrain: loss diverged at epoch " + std::to_string(epoch + 1));
      total += loss.item() * static_cast<double>(e - b);
      tape.backward(loss);
      opt.step();
    }
    history.push_back(total / static_cast<double>(order.size()));
  }
  return {std::move(enc), std::move(history)};
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("pearson: need two equal-length samples of size >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct NumeracyReport {
  double pearson = 0.0;
  double mean_loss = 0.0;
  std::size_t pairs = 0;
  nlohmann::json to_json() const { return {{"pearson", pearson}, {"mean_loss", mean_loss}, {"pairs", pairs}}; }
};

/// Correlation between encoder cosine distance and the relative-distance target.
inline NumeracyReport evaluate_numeracy(const NumEncoder& enc, const std::vector<NumberPair>& pairs) {
  std::vector<double> cd, target;
  double loss = 0.0;
  for (const auto& p : pairs) {
    Tape t(false);
    const double c = cosine_distance(enc.encode(t, p.x), enc.encode(t, p.y)).item();
    const double r = relative_distance(p.x, p.y);
    cd.push_back(c);
    target.push_back(r);
    loss += std::fabs(r - c);
  }
  NumeracyReport rep;
  rep.pairs = pairs.size();
  rep.pearson = pearson(cd, target);
  rep.mean_loss = pairs.empty() ? 0.0 : loss / static_cast<double>(pairs.size());
  return rep;
}

}  // namespace numscl
