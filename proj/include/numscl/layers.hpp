#pragma once

// Parameter bundles for the recurrent/attention building blocks shared by the
// tagger, the number encoder and the judgment model.

#include <cmath>
#include <cstdint>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "numscl/autodiff.hpp"

namespace numscl {

using Rng = std::mt19937_64;

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Derives an independent stream seed from a parent seed and a component tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Embedding {
  Param* table = nullptr;

  static Embedding make(ParamStore& s, const std::string& name, std::size_t vocab, std::size_t dim, Rng& rng) {
    return {&s.add(name, uniform_init(Shape{vocab, dim}, 0.5, rng))};
  }
  std::size_t vocab() const { return table->value.rows(); }
  std::size_t dim() const { return table->value.cols(); }
  Var lookup(Tape& t, std::vector<std::size_t> ids) const { return gather_rows(t.param(*table), std::move(ids)); }
};

struct Linear {
  Param* weight = nullptr;  // out x in
  Param* bias = nullptr;

  static Linear make(ParamStore& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = &s.add(name + ".weight", uniform_init(Shape{out, in}, k, rng));
    l.bias = &s.add(name + ".bias", uniform_init(Shape{out}, k, rng));
    return l;
  }
  std::size_t in_dim() const { return weight->value.cols(); }
  std::size_t out_dim() const { return weight->value.rows(); }
  Var operator()(Tape& t, const Var& x) const { return add(matmul(t.param(*weight), x), t.param(*bias)); }
};

struct Gru {
  Param* w = nullptr;
  Param* u = nullptr;
  Param* b = nullptr;

  static Gru make(ParamStore& s, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    Gru g;
    g.w = &s.add(name + ".w", uniform_init(Shape{3 * hidden, in}, k, rng));
    g.u = &s.add(name + ".u", uniform_init(Shape{3 * hidden, hidden}, k, rng));
    g.b = &s.add(name + ".b", uniform_init(Shape{3 * hidden}, k, rng));
    return g;
  }
  std::size_t hidden() const { return u->value.cols(); }
  /// All hidden states (T x H) for the rows of x.
  Var operator()(Tape& t, const Var& x, bool reverse = false) const {
    return gru_sequence(x, t.param(*w), t.param(*u), t.param(*b), reverse);
  }
};

/// Additive attention pooling: alpha = softmax(ctx . tanh(H W + b)), out = alpha^T H.
struct AttentionPool {
  Param* proj = nullptr;  // in x attn
  Param* bias = nullptr;
  Param* context = nullptr;

  static AttentionPool make(ParamStore& s, const std::string& name, std::size_t in, std::size_t attn, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    AttentionPool a;
    a.proj = &s.add(name + ".proj", uniform_init(Shape{in, attn}, k, rng));
    a.bias = &s.add(name + ".bias", uniform_init(Shape{attn}, k, rng));
    a.context = &s.add(name + ".context", uniform_init(Shape{attn}, 1.0 / std::sqrt(static_cast<double>(attn)), rng));
    return a;
  }
  Var operator()(Tape& t, const Var& states) const {
    Var hidden = tanh(add_row(matmul(states, t.param(*proj)), t.param(*bias)));
    Var alpha = softmax(matmul(hidden, t.param(*context)));
    return matmul(alpha, states);
  }
};

/// One-hidden-layer tanh perceptron used for classification heads.
struct MlpHead {
  Linear hidden;
  Linear out;

  static MlpHead make(ParamStore& s, const std::string& name, std::size_t in, std::size_t hid, std::size_t classes,
                      Rng& rng) {
    return {Linear::make(s, name + ".hidden", in, hid, rng), Linear::make(s, name + ".out", hid, classes, rng)};
  }
  std::size_t in_dim() const { return hidden.in_dim(); }
  std::size_t classes() const { return out.out_dim(); }
  Var operator()(Tape& t, const Var& x) const { return out(t, tanh(hidden(t, x))); }
};

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace numscl
