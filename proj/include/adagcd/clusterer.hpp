#pragma once

// Component clusterer: slot attention over a feature grid with sample-specific
// Gaussian slot initialization, followed by Gumbel-Softmax keep/drop selection
// of each slot.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adagcd/autodiff.hpp"
#include "adagcd/backbone.hpp"
#include "adagcd/nn.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

enum class SelectionMode { Stochastic, Hard };

struct ClustererConfig {
  std::size_t k_max = 50;
  std::size_t d_slot = 64;
  std::size_t iterations = 3;
  double gumbel_temperature = 1.0;
  SelectionMode selection_mode = SelectionMode::Stochastic;
  double sparsity_weight = 0.0;
  // When false every slot is always kept (fixed-slot baseline).
  bool adaptive = true;
  std::size_t mlp_hidden = 0;       // residual refinement width; 0 → 2·d_slot
  std::size_t selector_hidden = 0;  // scoring network width; 0 → d_slot

  std::size_t refine_width() const { return mlp_hidden ? mlp_hidden : 2 * d_slot; }
  std::size_t selector_width() const { return selector_hidden ? selector_hidden : d_slot; }

  void validate() const {
    if (k_max < 1) throw ConfigError("clusterer.k_max must be ≥ 1");
    if (d_slot < 1) throw ConfigError("clusterer.d_slot must be ≥ 1");
    if (iterations < 1) throw ConfigError("clusterer.iterations must be ≥ 1");
    if (!(gumbel_temperature > 0.0)) throw ConfigError("clusterer.gumbel_temperature must be > 0");
    if (sparsity_weight < 0.0) throw ConfigError("clusterer.sparsity_weight must be ≥ 0");
  }
};

struct SlotState {
  Matrix slots;                       // K×D_slot
  Matrix attention;                   // K×N, columns sum to one
  std::vector<double> keep_prob;      // K
  std::vector<std::uint8_t> keep_mask;  // K

  std::size_t kept_count() const {
    std::size_t n = 0;
    for (auto m : keep_mask) n += m;
    return n;
  }

  Matrix mask_matrix() const {
    Matrix m(keep_mask.size(), 1);
    for (std::size_t k = 0; k < keep_mask.size(); ++k) m[k] = keep_mask[k];
    return m;
  }
};

struct SlotSeeds {
  std::uint64_t init = 0;
  std::uint64_t gumbel = 0;

  static SlotSeeds from(std::uint64_t seed) { return {derive_seed(seed, {0x1A17}), derive_seed(seed, {0x6B3E})}; }
};

struct AttendVars {
  Var slots;      // K×D_slot
  Var attention;  // K×N
};

struct SelectVars {
  Var logits;     // K×2, column 0 = keep
  Var keep_prob;  // K×1
  Var keep_mask;  // K×1, hard 0/1 values
};

struct SlotVars {
  Var slots;
  Var attention;
  Var keep_prob;
  Var keep_mask;

  SlotState state() const {
    SlotState s;
    s.slots = slots.value();
    s.attention = attention.value();
    const Matrix& kp = keep_prob.value();
    const Matrix& km = keep_mask.value();
    s.keep_prob.assign(kp.data().begin(), kp.data().end());
    for (double m : km.data()) s.keep_mask.push_back(m >= 0.5 ? 1 : 0);
    return s;
  }
};

inline Matrix draw_gumbel_noise(std::size_t k, Rng& rng) {
  Matrix g(k, 2);
  for (double& v : g.data()) v = standard_gumbel(rng);
  return g;
}

// One hard keep/drop decision per row of K×2 logits (column 0 = keep) after
// adding `noise`, without the force-keep rule. Ties go to keep.
inline std::vector<std::uint8_t> keep_decisions(const Matrix& logits, const Matrix& noise) {
  if (logits.cols() != 2 || !logits.same_shape(noise)) throw ShapeError("selection logits and noise must be K×2");
  std::vector<std::uint8_t> keep(logits.rows());
  for (std::size_t k = 0; k < logits.rows(); ++k)
    keep[k] = logits(k, 0) + noise(k, 0) >= logits(k, 1) + noise(k, 1) ? 1 : 0;
  return keep;
}

// Stochastic mode keeps a slot with probability softmax(logits)[keep]
// (Gumbel-max); hard mode takes the argmax of the logits.
inline std::vector<std::uint8_t> draw_keep_decisions(const Matrix& logits, double temperature, SelectionMode mode,
                                                     Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("gumbel temperature must be > 0");
  const Matrix noise = mode == SelectionMode::Stochastic ? draw_gumbel_noise(logits.rows(), rng)
                                                         : Matrix(logits.rows(), logits.cols());
  return keep_decisions(logits, noise);
}

class Clusterer {
 public:
  Clusterer(ParameterStore& store, const std::string& prefix, ClustererConfig cfg, std::size_t feat_dim,
            std::uint64_t seed)
      : cfg_(std::move(cfg)), feat_dim_(feat_dim) {
    cfg_.validate();
    const std::size_t d = cfg_.d_slot;
    Rng rng = init_rng(seed, prefix + ".slot_mu");
    slot_mu_ = &store.add(prefix + ".slot_mu", normal_matrix(1, d, rng, 1.0 / std::sqrt(static_cast<double>(d))));
    slot_log_sigma_ = &store.add(prefix + ".slot_log_sigma", Matrix(1, d, 0.0));
    norm_input_ = LayerNorm(store, prefix + ".norm_input", feat_dim);
    to_k_ = Linear(store, prefix + ".to_k", feat_dim, d, seed, false);
    to_v_ = Linear(store, prefix + ".to_v", feat_dim, d, seed, false);
    norm_slots_ = LayerNorm(store, prefix + ".norm_slots", d);
    to_q_ = Linear(store, prefix + ".to_q", d, d, seed, false);
    gru_ = GruCell(store, prefix + ".gru", d, d, seed);
    norm_mlp_ = LayerNorm(store, prefix + ".norm_mlp", d);
    refine_ = Mlp(store, prefix + ".mlp", {d, cfg_.refine_width(), d}, seed);
    selector_ = Mlp(store, prefix + ".selector", {d, cfg_.selector_width(), 2}, seed);
  }

  const ClustererConfig& config() const { return cfg_; }
  ClustererConfig& config() { return cfg_; }
  std::size_t feat_dim() const { return feat_dim_; }

  Matrix sample_noise(std::uint64_t seed) const {
    Rng rng(seed);
    return normal_matrix(cfg_.k_max, cfg_.d_slot, rng);
  }

  // μ + σ⊙ε with ε drawn independently for each of the K slots.
  Var init_slots(Tape& t, const Matrix& noise) const {
    if (noise.rows() != cfg_.k_max || noise.cols() != cfg_.d_slot) throw ShapeError("init_slots: noise must be K×D_slot");
    const Var sigma = ad::tile_rows(ad::exp(t.parameter(*slot_log_sigma_)), cfg_.k_max);
    return ad::add_row(ad::mul(sigma, t.constant(noise)), t.parameter(*slot_mu_));
  }

  // Initial slots for a batch; element b draws from its own sub-stream of `seed`.
  std::vector<Matrix> init_slots(std::size_t batch_size, std::uint64_t seed) const {
    std::vector<Matrix> out;
    for (std::size_t b = 0; b < batch_size; ++b) {
      Tape t(false);
      out.push_back(init_slots(t, sample_noise(derive_seed(seed, {b}))).value());
    }
    return out;
  }

  AttendVars attend(Tape& t, Var slots, const Var& features) const {
    if (features.rows() == 0) throw ContractError("attend: invalid feature map with no positions");
    if (features.cols() != feat_dim_) throw ShapeError("attend: feature width mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_slot));
    const Var inputs = norm_input_(t, features);
    const Var k = to_k_(t, inputs);
    const Var v = to_v_(t, inputs);
    Var attn;
    for (std::size_t it = 0; it < cfg_.iterations; ++it) {
      const Var prev = slots;
      const Var q = to_q_(t, norm_slots_(t, slots));
      attn = ad::softmax_cols(ad::scale(ad::matmul_nt(q, k), scale));
      const Var weights = ad::div_by_row_sum(ad::affine(attn, 1.0, attention_eps));
      const Var updates = ad::matmul(weights, v);
      slots = gru_(t, updates, prev);
      slots = ad::add(slots, refine_(t, norm_mlp_(t, slots)));
    }
    return {slots, attn};
  }

  SelectVars select(Tape& t, const Var& slots, SelectionMode mode, std::uint64_t gumbel_seed) const {
    const Var logits = selector_(t, slots);
    const Var keep_prob = ad::slice_cols(ad::softmax_rows(logits), 0, 1);
    const std::size_t K = slots.rows();
    if (!cfg_.adaptive) return {logits, keep_prob, t.constant(Matrix(K, 1, 1.0))};
    if (!(cfg_.gumbel_temperature > 0.0)) throw ConfigError("gumbel temperature must be > 0");
    Rng rng(gumbel_seed);
    const Matrix noise = mode == SelectionMode::Stochastic ? draw_gumbel_noise(K, rng) : Matrix(K, 2);
    std::vector<std::uint8_t> keep = keep_decisions(logits.value(), noise);
    force_keep_one(keep, keep_prob.value());
    Matrix hard(K, 2);
    for (std::size_t k = 0; k < K; ++k) hard(k, keep[k] ? 0 : 1) = 1.0;
    if (mode == SelectionMode::Hard) return {logits, keep_prob, t.constant(keep_column(hard))};
    // Straight-through: the forward value is the hard one-hot; gradients flow
    // through softmax((logits + g)/τ) with the same Gumbel draw g.
    const Var soft = ad::softmax_rows(ad::scale(ad::add_const(logits, noise), 1.0 / cfg_.gumbel_temperature));
    const Var y = ad::straight_through(soft, hard);
    return {logits, keep_prob, ad::slice_cols(y, 0, 1)};
  }

  SlotVars forward(Tape& t, const Var& features, std::uint64_t seed, SelectionMode mode) const {
    const SlotSeeds seeds = SlotSeeds::from(seed);
    const Var init = init_slots(t, sample_noise(seeds.init));
    const AttendVars a = attend(t, init, features);
    const SelectVars s = select(t, a.slots, mode, seeds.gumbel);
    return {a.slots, a.attention, s.keep_prob, s.keep_mask};
  }

  SlotState forward(const FeatureMap& fm, std::uint64_t seed, SelectionMode mode) const {
    Tape t(false);
    return forward(t, t.constant(fm.local), seed, mode).state();
  }

  static constexpr double attention_eps = 1e-8;

 private:
  // If every slot was dropped, keep the one with the largest keep probability.
  static void force_keep_one(std::vector<std::uint8_t>& keep, const Matrix& keep_prob) {
    for (auto m : keep)
      if (m) return;
    std::size_t best = 0;
    for (std::size_t k = 1; k < keep.size(); ++k)
      if (keep_prob[k] > keep_prob[best]) best = k;
    keep[best] = 1;
  }

  static Matrix keep_column(const Matrix& hard) {
    Matrix m(hard.rows(), 1);
    for (std::size_t k = 0; k < hard.rows(); ++k) m[k] = hard(k, 0);
    return m;
  }

  ClustererConfig cfg_;
  std::size_t feat_dim_;
  Parameter* slot_mu_ = nullptr;
  Parameter* slot_log_sigma_ = nullptr;
  LayerNorm norm_input_, norm_slots_, norm_mlp_;
  Linear to_k_, to_v_, to_q_;
  GruCell gru_;
  Mlp refine_;
  Mlp selector_;
};

}  // namespace adagcd
