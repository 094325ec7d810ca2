#pragma once

// Feature encoders producing a spatial local feature grid plus a global vector
// per image: a ViT adapter (DINO-style, weights loaded from an archive) and a
// deterministic synthetic stand-in driven by SyntheticScene part maps.

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adagcd/archive.hpp"
#include "adagcd/autodiff.hpp"
#include "adagcd/data/augment.hpp"
#include "adagcd/data/image.hpp"
#include "adagcd/data/synthetic.hpp"
#include "adagcd/nn.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

enum class BackboneKind { PretrainedVit, Synthetic };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::PretrainedVit;
  std::size_t input_size = 224;
  std::size_t patch_size = 16;
  std::size_t feat_dim = 768;
  std::size_t trainable_depth = 1;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t channels = 3;
  std::string weights_path;

  // Synthetic backbone only.
  std::size_t vocab = 40;
  double separation = 1.0;  // norm of every part embedding
  double noise_std = 0.05;
  // Each cell also gets a fixed code linear in its (row, col), the way ViT
  // patch tokens carry their position. 0 disables it.
  double position_scale = 0.0;
  std::uint64_t embed_seed = 0;

  static BackboneConfig synthetic(std::size_t feat_dim, std::size_t vocab, double noise_std = 0.05) {
    BackboneConfig c;
    c.kind = BackboneKind::Synthetic;
    c.feat_dim = feat_dim;
    c.vocab = vocab;
    c.noise_std = noise_std;
    c.trainable_depth = 0;
    return c;
  }

  std::size_t grid_side() const { return input_size / patch_size; }
  std::size_t patch_count() const { return grid_side() * grid_side(); }

  void validate() const {
    if (feat_dim == 0) throw ConfigError("backbone.feat_dim must be > 0");
    if (kind == BackboneKind::Synthetic) {
      if (vocab == 0) throw ConfigError("backbone.vocab must be > 0");
      if (noise_std < 0.0) throw ConfigError("backbone.noise_std must be ≥ 0");
      if (position_scale < 0.0) throw ConfigError("backbone.position_scale must be ≥ 0");
      return;
    }
    if (patch_size == 0 || input_size == 0 || input_size % patch_size != 0)
      throw ConfigError("backbone.input_size must be divisible by backbone.patch_size");
    if (heads == 0 || feat_dim % heads != 0) throw ConfigError("backbone.feat_dim must be divisible by heads");
    if (trainable_depth > depth)
      throw ConfigError("backbone.trainable_depth (" + std::to_string(trainable_depth) + ") exceeds block count (" +
                        std::to_string(depth) + ")");
  }
};

struct FeatureMap {
  Matrix local;       // N×D, row n = grid cell (n / grid_w, n % grid_w)
  Matrix global_vec;  // 1×D
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  InstanceId image_id = 0;

  std::size_t patch_count() const { return local.rows(); }
  std::size_t dim() const { return local.cols(); }
  bool finite() const { return local.all_finite() && global_vec.all_finite(); }
};

// Tape-level encoder output.
struct FeatureVars {
  Var local;   // N×D
  Var global;  // 1×D
};

class SyntheticBackbone {
 public:
  explicit SyntheticBackbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.embed_seed, {0xE3BED}));
    embeddings_ = normal_matrix(cfg_.vocab, cfg_.feat_dim, rng);
    for (std::size_t p = 0; p < cfg_.vocab; ++p) {
      auto r = embeddings_.row(p);
      const double n = linalg::norm(r);
      for (double& v : r) v *= cfg_.separation / n;
    }
    Rng prng(derive_seed(cfg_.embed_seed, {0x9051}));
    position_axes_ = normal_matrix(2, cfg_.feat_dim, prng);
    for (std::size_t a = 0; a < 2; ++a) {
      auto r = position_axes_.row(a);
      const double n = linalg::norm(r);
      for (double& v : r) v /= n;
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  const Matrix& part_embeddings() const { return embeddings_; }

  // Cell features = part embedding + position code + N(0, noise_std²);
  // global = mean over cells. The position code is
  // position_scale · (u·a₀ + v·a₁) with u, v ∈ [−1, 1] the cell's column and
  // row rescaled, and a₀, a₁ fixed unit vectors.
  FeatureMap features(const SyntheticScene& scene, std::uint64_t noise_seed) const {
    scene.validate();
    const std::size_t N = scene.cells(), D = cfg_.feat_dim;
    FeatureMap fm;
    fm.grid_h = scene.grid_h;
    fm.grid_w = scene.grid_w;
    fm.image_id = scene.instance_id;
    fm.local = Matrix(N, D);
    fm.global_vec = Matrix(1, D);
    Rng rng(noise_seed);
    auto rescale = [](std::size_t i, std::size_t len) {
      return len > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(len - 1) - 1.0 : 0.0;
    };
    for (std::size_t n = 0; n < N; ++n) {
      const int part = scene.part_map[n];
      if (static_cast<std::size_t>(part) >= cfg_.vocab)
        throw ContractError("invalid scene: part id " + std::to_string(part) + " outside the backbone vocabulary");
      const double u = cfg_.position_scale * rescale(n % scene.grid_w, scene.grid_w);
      const double v = cfg_.position_scale * rescale(n / scene.grid_w, scene.grid_h);
      for (std::size_t j = 0; j < D; ++j) {
        fm.local(n, j) = embeddings_(static_cast<std::size_t>(part), j) + u * position_axes_(0, j) +
                         v * position_axes_(1, j) + cfg_.noise_std * standard_normal(rng);
        fm.global_vec[j] += fm.local(n, j);
      }
    }
    for (double& v : fm.global_vec.data()) v /= static_cast<double>(N);
    return fm;
  }

 private:
  BackboneConfig cfg_;
  Matrix embeddings_;
  Matrix position_axes_;  // 2×D
};

// Pre-norm vision transformer with a class token (DINO ViT layout). Parameter
// names follow the timm convention with Linear weights stored in×out.
class VisionTransformer {
 public:
  VisionTransformer(ParameterStore& store, const std::string& prefix, BackboneConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), prefix_(prefix) {
    cfg_.validate();
    if (cfg_.kind != BackboneKind::PretrainedVit) throw ConfigError("VisionTransformer needs kind=pretrained-vit");
    const std::size_t D = cfg_.feat_dim, P = cfg_.patch_size, C = cfg_.channels;
    Rng rng = init_rng(seed, prefix + ".tokens");
    cls_token_ = &store.add(prefix + ".cls_token", normal_matrix(1, D, rng, 0.02));
    pos_embed_ = &store.add(prefix + ".pos_embed", normal_matrix(cfg_.patch_count() + 1, D, rng, 0.02));
    patch_proj_ = Linear(store, prefix + ".patch_embed.proj", C * P * P, D, seed);
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
      const std::string bp = prefix + ".blocks." + std::to_string(b);
      Block blk;
      blk.norm1 = LayerNorm(store, bp + ".norm1", D, 1e-6);
      blk.qkv = Linear(store, bp + ".attn.qkv", D, 3 * D, seed);
      blk.proj = Linear(store, bp + ".attn.proj", D, D, seed);
      blk.norm2 = LayerNorm(store, bp + ".norm2", D, 1e-6);
      blk.fc1 = Linear(store, bp + ".mlp.fc1", D, cfg_.mlp_ratio * D, seed);
      blk.fc2 = Linear(store, bp + ".mlp.fc2", cfg_.mlp_ratio * D, D, seed);
      blocks_.push_back(blk);
    }
    norm_ = LayerNorm(store, prefix + ".norm", D, 1e-6);
    for (Parameter* p : store.all())
      if (p->name.rfind(prefix + ".", 0) == 0) params_.push_back(p);
    if (!cfg_.weights_path.empty()) load_weights(cfg_.weights_path);
  }

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& parameters() const { return params_; }

  // Loads every parameter from an archive whose tensor names omit the prefix.
  void load_weights(const std::string& path) {
    const TensorArchive ar = read_archive(path);
    for (Parameter* p : params_) {
      const std::string key = p->name.substr(prefix_.size() + 1);
      const Matrix* m = ar.find(key);
      if (!m) throw ConfigError("backbone weights " + path + ": missing tensor '" + key + "'");
      if (!m->same_shape(p->value))
        throw ConfigError("backbone weights " + path + ": '" + key + "' has shape " + m->shape_string() +
                          ", expected " + p->value.shape_string());
      p->value = *m;
    }
  }

  TensorArchive export_weights() const {
    TensorArchive ar;
    for (const Parameter* p : params_) ar.tensors.emplace_back(p->name.substr(prefix_.size() + 1), p->value);
    return ar;
  }

  // Marks the last `trainable_depth` blocks trainable and everything else
  // frozen; returns the trainable parameters.
  std::vector<Parameter*> trainable_parameters() {
    if (cfg_.trainable_depth > cfg_.depth)
      throw ConfigError("trainable_depth exceeds the transformer's block count");
    const std::size_t first = cfg_.depth - cfg_.trainable_depth;
    std::vector<Parameter*> out;
    for (Parameter* p : params_) {
      const std::size_t block = block_index(p->name);
      p->trainable = block != npos && block >= first;
      if (p->trainable) out.push_back(p);
    }
    return out;
  }

  FeatureVars forward(Tape& t, const Image& img) const {
    const std::size_t S = cfg_.input_size, P = cfg_.patch_size, G = cfg_.grid_side(), C = cfg_.channels;
    if (img.channels != C || img.height != S || img.width != S)
      throw ConfigError("backbone: image " + std::to_string(img.channels) + "×" + std::to_string(img.height) + "×" +
                        std::to_string(img.width) + " does not match configured input " + std::to_string(C) + "×" +
                        std::to_string(S) + "×" + std::to_string(S));
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdv[3] = {0.229, 0.224, 0.225};
    Matrix patches(G * G, C * P * P);
    for (std::size_t gy = 0; gy < G; ++gy)
      for (std::size_t gx = 0; gx < G; ++gx)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t py = 0; py < P; ++py)
            for (std::size_t px = 0; px < P; ++px) {
              const double v = img.at(c, gy * P + py, gx * P + px);
              patches(gy * G + gx, (c * P + py) * P + px) = C == 3 ? (v - mean[c]) / stdv[c] : v;
            }
    Var x = patch_proj_(t, t.constant(std::move(patches)));
    x = ad::add(ad::concat_rows({t.parameter(*cls_token_), x}), t.parameter(*pos_embed_));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      x = block_forward(t, blocks_[b], x);
      if (!x.value().all_finite())
        throw NumericError("backbone: non-finite activations in block " + std::to_string(b));
    }
    x = norm_(t, x);
    if (!x.value().all_finite()) throw NumericError("backbone: non-finite activations in final norm");
    return {ad::slice_rows(x, 1, G * G), ad::slice_rows(x, 0, 1)};
  }

  FeatureMap features(const Image& img, InstanceId id = 0) const {
    Tape t(false);
    const FeatureVars fv = forward(t, img);
    return FeatureMap{fv.local.value(), fv.global.value(), cfg_.grid_side(), cfg_.grid_side(), id};
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Block {
    LayerNorm norm1, norm2;
    Linear qkv, proj, fc1, fc2;
  };

  std::size_t block_index(const std::string& name) const {
    const std::string tag = prefix_ + ".blocks.";
    if (name.rfind(tag, 0) != 0) return npos;
    return std::stoul(name.substr(tag.size()));
  }

  Var block_forward(Tape& t, const Block& blk, const Var& x) const {
    const std::size_t D = cfg_.feat_dim, H = cfg_.heads, dh = D / H;
    const Var qkv = blk.qkv(t, blk.norm1(t, x));
    std::vector<Var> heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < H; ++h) {
      const Var q = ad::slice_cols(qkv, h * dh, dh);
      const Var k = ad::slice_cols(qkv, D + h * dh, dh);
      const Var v = ad::slice_cols(qkv, 2 * D + h * dh, dh);
      const Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), scale));
      heads.push_back(ad::matmul(attn, v));
    }
    const Var y = ad::add(x, blk.proj(t, ad::concat_cols(heads)));
    return ad::add(y, blk.fc2(t, ad::gelu(blk.fc1(t, blk.norm2(t, y)))));
  }

  BackboneConfig cfg_;
  std::string prefix_;
  Parameter* cls_token_ = nullptr;
  Parameter* pos_embed_ = nullptr;
  Linear patch_proj_;
  std::vector<Block> blocks_;
  LayerNorm norm_;
  std::vector<Parameter*> params_;
};

// Batch extraction. Errors on an empty batch or mismatched image shape.
inline std::vector<FeatureMap> extract_features(const std::vector<Image>& images, const VisionTransformer& vit) {
  if (images.empty()) throw ConfigError("extract_features: empty batch");
  std::vector<FeatureMap> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(vit.features(images[i], static_cast<InstanceId>(i)));
  return out;
}

inline std::vector<FeatureMap> extract_features(const std::vector<SceneView>& views, const SyntheticBackbone& bb) {
  if (views.empty()) throw ConfigError("extract_features: empty batch");
  std::vector<FeatureMap> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(bb.features(v.scene, v.noise_seed));
  return out;
}

}  // namespace adagcd
