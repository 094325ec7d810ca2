#pragma once

// Masked slot decoder: every slot is broadcast to all N positions, a learned
// positional table is added, and an MLP emits D_feat features plus one alpha
// logit per (slot, position). Dropped slots are excluded from the softmax over
// slots, so they contribute nothing to the reconstruction.

#include <string>

#include "adagcd/autodiff.hpp"
#include "adagcd/clusterer.hpp"
#include "adagcd/nn.hpp"

namespace adagcd {

struct DecoderConfig {
  std::size_t layers = 4;
  std::size_t hidden = 128;
  double pos_init_std = 0.02;

  static std::size_t out_dim(std::size_t feat_dim) { return feat_dim + 1; }

  void validate() const {
    if (layers < 1) throw ConfigError("decoder.layers must be ≥ 1");
    if (hidden < 1) throw ConfigError("decoder.hidden must be ≥ 1");
    if (pos_init_std < 0.0) throw ConfigError("decoder.pos_init_std must be ≥ 0");
  }
};

struct Reconstruction {
  Matrix recon;     // N×D_feat
  Matrix alpha;     // K×N
  Matrix per_slot;  // (K·N)×D_feat, row k·N + n
};

struct ReconstructionVars {
  Var recon;
  Var alpha;
  Var per_slot;

  Reconstruction values() const { return {recon.value(), alpha.value(), per_slot.value()}; }
};

class Decoder {
 public:
  Decoder(ParameterStore& store, const std::string& prefix, DecoderConfig cfg, std::size_t d_slot,
          std::size_t feat_dim, std::size_t positions, std::uint64_t seed)
      : cfg_(cfg), feat_dim_(feat_dim), positions_(positions) {
    cfg_.validate();
    Rng rng = init_rng(seed, prefix + ".pos_embed");
    pos_ = &store.add(prefix + ".pos_embed", normal_matrix(positions, d_slot, rng, cfg_.pos_init_std));
    std::vector<std::size_t> widths{d_slot};
    for (std::size_t i = 0; i + 1 < cfg_.layers; ++i) widths.push_back(cfg_.hidden);
    widths.push_back(DecoderConfig::out_dim(feat_dim));
    mlp_ = Mlp(store, prefix + ".mlp", widths, seed, Activation::Relu);
  }

  std::size_t positions() const { return positions_; }
  std::size_t feat_dim() const { return feat_dim_; }
  std::size_t out_dim() const { return mlp_.layers().back().out(); }
  const DecoderConfig& config() const { return cfg_; }

  void check_positions(std::size_t n) const {
    if (n != positions_)
      throw ConfigError("decoder: positional table covers " + std::to_string(positions_) +
                        " positions but the feature map has " + std::to_string(n));
  }

  ReconstructionVars decode(Tape& t, const Var& slots, const Var& keep_mask) const {
    const std::size_t K = slots.rows(), N = positions_, D = feat_dim_;
    const Var x = ad::add(ad::repeat_rows_each(slots, N), ad::tile_rows(t.parameter(*pos_), K));
    const Var out = mlp_(t, x);
    const Var per_slot = ad::slice_cols(out, 0, D);
    const Var logits = ad::reshape(ad::slice_cols(out, D, 1), K, N);
    const Var alpha = ad::masked_softmax_cols(logits, keep_mask);
    return {ad::mix_slots(alpha, per_slot), alpha, per_slot};
  }

  Reconstruction decode(const SlotState& state) const {
    Tape t(false);
    return decode(t, t.constant(state.slots), t.constant(state.mask_matrix())).values();
  }

 private:
  DecoderConfig cfg_;
  std::size_t feat_dim_;
  std::size_t positions_;
  Parameter* pos_ = nullptr;
  Mlp mlp_;
};

// Mean squared error over all N·D_feat elements.
inline Var reconstruction_loss(const Var& target, const Var& recon) {
  if (!target.value().same_shape(recon.value()))
    throw ShapeError("reconstruction_loss: " + target.value().shape_string() + " vs " + recon.value().shape_string());
  return ad::mse(target, recon);
}

inline double reconstruction_loss(const Matrix& target, const Matrix& recon) {
  if (!target.same_shape(recon))
    throw ShapeError("reconstruction_loss: " + target.shape_string() + " vs " + recon.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += (target[i] - recon[i]) * (target[i] - recon[i]);
  return s / static_cast<double>(target.size());
}

}  // namespace adagcd
