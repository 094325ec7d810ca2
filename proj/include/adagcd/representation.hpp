#pragma once

// Image-scale representation: pooled slot statistics fused with the global
// feature into g_all (3·D_feat), a projection head, and the contrastive and
// overall objectives.

#include <cmath>
#include <string>
#include <vector>

#include "adagcd/autodiff.hpp"
#include "adagcd/clusterer.hpp"
#include "adagcd/data/split.hpp"
#include "adagcd/nn.hpp"

namespace adagcd {

struct LossWeights {
  double lambda_u = 0.6;
  double lambda_s = 0.3;
  double lambda_rec = 0.1;
  double temperature_u = 0.07;
  double temperature_s = 0.07;

  void validate() const {
    if (lambda_u < 0 || lambda_s < 0 || lambda_rec < 0) throw ConfigError("loss weights must be ≥ 0");
    if (!(lambda_u > 0 || lambda_s > 0 || lambda_rec > 0)) throw ConfigError("at least one loss weight must be > 0");
    if (!(temperature_u > 0.0) || !(temperature_s > 0.0)) throw ConfigError("loss temperatures must be > 0");
  }
};

struct UnifiedVector {
  Matrix g_all;  // 1×3D: [g_dino | W_m·mean_pool + b_m | W_x·max_pool + b_x]

  std::size_t feat_dim() const { return g_all.cols() / 3; }
  Matrix component(std::size_t i) const {
    const std::size_t D = feat_dim();
    Matrix out(1, D);
    for (std::size_t j = 0; j < D; ++j) out[j] = g_all[i * D + j];
    return out;
  }
  Matrix g_dino() const { return component(0); }
  Matrix pooled_mean_proj() const { return component(1); }
  Matrix pooled_max_proj() const { return component(2); }
};

struct PooledVars {
  Var mean;  // 1×D_slot
  Var max;   // 1×D_slot
};

// Mean and coordinatewise max over the kept slots only.
inline PooledVars pool_slots(const Var& slots, const Var& keep_mask) {
  return {ad::masked_mean_rows(slots, keep_mask), ad::masked_max_rows(slots, keep_mask.value())};
}

inline std::pair<Matrix, Matrix> pool_slots(const SlotState& state) {
  if (state.kept_count() == 0) throw ContractError("pool_slots: no kept slots");
  Tape t(false);
  const PooledVars p = pool_slots(t.constant(state.slots), t.constant(state.mask_matrix()));
  return {p.mean.value(), p.max.value()};
}

class Fusion {
 public:
  Fusion(ParameterStore& store, const std::string& prefix, std::size_t d_slot, std::size_t feat_dim,
         std::uint64_t seed)
      : d_slot_(d_slot),
        feat_dim_(feat_dim),
        mean_proj_(store, prefix + ".mean_proj", d_slot, feat_dim, seed),
        max_proj_(store, prefix + ".max_proj", d_slot, feat_dim, seed) {}

  Var fuse(Tape& t, const Var& g_dino, const PooledVars& pooled) const {
    if (g_dino.rows() != 1 || g_dino.cols() != feat_dim_)
      throw ShapeError("fuse: global feature must be 1×" + std::to_string(feat_dim_));
    if (pooled.mean.cols() != d_slot_ || pooled.max.cols() != d_slot_)
      throw ShapeError("fuse: pooled statistics must be 1×" + std::to_string(d_slot_));
    return ad::concat_cols({g_dino, mean_proj_(t, pooled.mean), max_proj_(t, pooled.max)});
  }

  UnifiedVector fuse(const Matrix& g_dino, const Matrix& mean_pool, const Matrix& max_pool) const {
    Tape t(false);
    return {fuse(t, t.constant(g_dino), {t.constant(mean_pool), t.constant(max_pool)}).value()};
  }

  std::size_t output_dim() const { return 3 * feat_dim_; }

 private:
  std::size_t d_slot_;
  std::size_t feat_dim_;
  Linear mean_proj_;
  Linear max_proj_;
};

struct ProjectionConfig {
  std::size_t hidden = 2048;
  std::size_t out = 256;
  std::size_t layers = 3;

  void validate() const {
    if (layers < 1 || hidden < 1 || out < 1) throw ConfigError("head: layers, hidden and out must be ≥ 1");
  }
};

// MLP (GELU) followed by unit-norm normalization of each row.
class ProjectionHead {
 public:
  ProjectionHead(ParameterStore& store, const std::string& prefix, std::size_t in, ProjectionConfig cfg,
                 std::uint64_t seed) {
    cfg.validate();
    std::vector<std::size_t> widths{in};
    for (std::size_t i = 0; i + 1 < cfg.layers; ++i) widths.push_back(cfg.hidden);
    widths.push_back(cfg.out);
    mlp_ = Mlp(store, prefix + ".mlp", widths, seed, Activation::Gelu);
  }

  Var project(Tape& t, const Var& g_all) const { return ad::l2_normalize_rows(mlp_(t, g_all)); }

  Matrix project(const Matrix& g_all) const {
    Tape t(false);
    return project(t, t.constant(g_all)).value();
  }

 private:
  Mlp mlp_;
};

namespace detail {

inline Var masked_similarity_log_probs(const Var& z, double temperature) {
  const std::size_t M = z.rows();
  Matrix self_mask(M, M);
  for (std::size_t i = 0; i < M; ++i) self_mask(i, i) = -1e9;
  return ad::log_softmax_rows(ad::add_const(ad::scale(ad::matmul_nt(z, z), 1.0 / temperature), self_mask));
}

}  // namespace detail

// Symmetric InfoNCE over the doubled batch [z1; z2]: the positive of row i is
// its other view; every other row is a negative.
inline Var unsup_contrastive(const Var& z1, const Var& z2, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  if (!z1.value().same_shape(z2.value())) throw ShapeError("unsup_contrastive: view shapes differ");
  const std::size_t B = z1.rows();
  if (B < 2) throw ContractError("unsup_contrastive: batch < 2 leaves no negatives");
  const Var logp = detail::masked_similarity_log_probs(ad::concat_rows({z1, z2}), temperature);
  Matrix w(2 * B, 2 * B);
  for (std::size_t i = 0; i < 2 * B; ++i) w(i, (i + B) % (2 * B)) = -1.0 / static_cast<double>(2 * B);
  return ad::weighted_sum(logp, std::move(w));
}

// Supervised contrastive loss: positives of anchor i are all other rows with
// the same label. Anchors without positives are skipped.
inline Var sup_contrastive(const Var& z, const std::vector<ClassId>& labels, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  const std::size_t M = z.rows();
  if (labels.size() != M) throw ShapeError("sup_contrastive: one label per row required");
  std::vector<std::size_t> positives(M, 0);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j)
      if (j != i && labels[j] == labels[i]) ++positives[i];
    if (positives[i]) ++anchors;
  }
  if (anchors == 0) throw ContractError("sup_contrastive: degenerate labeled batch, no anchor has a positive");
  const Var logp = detail::masked_similarity_log_probs(z, temperature);
  Matrix w(M, M);
  for (std::size_t i = 0; i < M; ++i) {
    if (!positives[i]) continue;
    for (std::size_t j = 0; j < M; ++j)
      if (j != i && labels[j] == labels[i])
        w(i, j) = -1.0 / (static_cast<double>(positives[i]) * static_cast<double>(anchors));
  }
  return ad::weighted_sum(logp, std::move(w));
}

namespace detail {

inline void require_unit_rows(const Matrix& z, const char* who) {
  for (std::size_t i = 0; i < z.rows(); ++i)
    if (std::abs(linalg::norm(z.row(i)) - 1.0) > 1e-6) throw ContractError(std::string(who) + ": rows must be unit-norm");
}

}  // namespace detail

inline double unsup_contrastive(const Matrix& z1, const Matrix& z2, double temperature) {
  detail::require_unit_rows(z1, "unsup_contrastive");
  detail::require_unit_rows(z2, "unsup_contrastive");
  Tape t(false);
  return unsup_contrastive(t.constant(z1), t.constant(z2), temperature).scalar();
}

inline double sup_contrastive(const Matrix& z, const std::vector<ClassId>& labels, double temperature) {
  detail::require_unit_rows(z, "sup_contrastive");
  Tape t(false);
  return sup_contrastive(t.constant(z), labels, temperature).scalar();
}

inline double overall_loss(double l_rec, double l_sup, double l_unsup, const LossWeights& w) {
  return w.lambda_rec * l_rec + w.lambda_s * l_sup + w.lambda_u * l_unsup;
}

// Terms with zero weight are left out of the graph.
inline Var overall_loss(Tape& t, const Var& l_rec, const Var& l_sup, const Var& l_unsup, const LossWeights& w) {
  Var total = t.constant(Matrix(1, 1, 0.0));
  if (w.lambda_rec != 0.0) total = ad::add(total, ad::scale(l_rec, w.lambda_rec));
  if (w.lambda_s != 0.0) total = ad::add(total, ad::scale(l_sup, w.lambda_s));
  if (w.lambda_u != 0.0) total = ad::add(total, ad::scale(l_unsup, w.lambda_u));
  return total;
}

}  // namespace adagcd
