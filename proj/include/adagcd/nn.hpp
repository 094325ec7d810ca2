#pragma once

// Small neural-network building blocks on top of the autodiff tape. Every
// module registers its weights in a ParameterStore under a dotted name.

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adagcd/autodiff.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

// Owns named parameters with stable addresses.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(const std::string& name, Matrix value) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw ContractError("ParameterStore: duplicate parameter '" + name + "'");
    it->second.name = name;
    it->second.value = std::move(value);
    it->second.zero_grad();
    order_.push_back(&it->second);
    return it->second;
  }

  Parameter* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  const Parameter* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }

  Parameter& at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ContractError("ParameterStore: unknown parameter '" + name + "'");
    return *p;
  }

  // Parameters in registration order.
  const std::vector<Parameter*>& all() const { return order_; }

  void zero_grad() {
    for (Parameter* p : order_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Parameter* p : order_) n += p->value.size();
    return n;
  }

 private:
  std::map<std::string, Parameter> params_;
  std::vector<Parameter*> order_;
};

// Deterministic initializer stream for a named parameter.
inline Rng init_rng(std::uint64_t seed, const std::string& name) {
  return Rng(derive_seed(seed, {hash_string(name)}));
}

// y = x·W + b, W stored in×out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
         bool bias = true)
      : in_(in), out_(out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Rng w_rng = init_rng(seed, name + ".weight");
    weight_ = &store.add(name + ".weight", uniform_matrix(in, out, w_rng, -bound, bound));
    if (bias) {
      Rng b_rng = init_rng(seed, name + ".bias");
      bias_ = &store.add(name + ".bias", uniform_matrix(1, out, b_rng, -bound, bound));
    }
  }

  Var operator()(Tape& t, const Var& x) const {
    Var y = ad::matmul(x, t.parameter(*weight_));
    if (bias_) y = ad::add_row(y, t.parameter(*bias_));
    return y;
  }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width, double eps = 1e-5) : eps_(eps) {
    gamma_ = &store.add(name + ".weight", Matrix(1, width, 1.0));
    beta_ = &store.add(name + ".bias", Matrix(1, width, 0.0));
  }

  Var operator()(Tape& t, const Var& x) const {
    return ad::layer_norm_rows(x, t.parameter(*gamma_), t.parameter(*beta_), eps_);
  }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  double eps_ = 1e-5;
};

enum class Activation { Relu, Gelu };

inline Var activate(Activation a, const Var& x) { return a == Activation::Relu ? ad::relu(x) : ad::gelu(x); }

// Stack of Linear layers with an activation between consecutive layers (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths, std::uint64_t seed,
      Activation act = Activation::Relu)
      : act_(act) {
    if (widths.size() < 2) throw ConfigError("Mlp '" + name + "': needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], seed);
  }

  Var operator()(Tape& t, Var x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](t, x);
      if (i + 1 < layers_.size()) x = activate(act_, x);
    }
    return x;
  }

  std::size_t depth() const { return layers_.size(); }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  Activation act_ = Activation::Relu;
};

// Gated recurrent unit cell, PyTorch gate layout (reset, update, new).
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden, std::uint64_t seed)
      : input_r_(store, name + ".input_reset", input, hidden, seed),
        input_z_(store, name + ".input_update", input, hidden, seed),
        input_n_(store, name + ".input_new", input, hidden, seed),
        hidden_r_(store, name + ".hidden_reset", hidden, hidden, seed),
        hidden_z_(store, name + ".hidden_update", hidden, hidden, seed),
        hidden_n_(store, name + ".hidden_new", hidden, hidden, seed) {}

  Var operator()(Tape& t, const Var& x, const Var& h) const {
    const Var r = ad::sigmoid(ad::add(input_r_(t, x), hidden_r_(t, h)));
    const Var z = ad::sigmoid(ad::add(input_z_(t, x), hidden_z_(t, h)));
    const Var n = ad::tanh(ad::add(input_n_(t, x), ad::mul(r, hidden_n_(t, h))));
    // h' = (1 − z)⊙n + z⊙h = n + z⊙(h − n)
    return ad::add(n, ad::mul(z, ad::sub(h, n)));
  }

 private:
  Linear input_r_, input_z_, input_n_;
  Linear hidden_r_, hidden_z_, hidden_n_;
};

}  // namespace adagcd
