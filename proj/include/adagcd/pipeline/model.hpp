#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adagcd/backbone.hpp"
#include "adagcd/clusterer.hpp"
#include "adagcd/data/image.hpp"
#include "adagcd/data/split.hpp"
#include "adagcd/data/synthetic.hpp"
#include "adagcd/decoder.hpp"
#include "adagcd/pipeline/config.hpp"
#include "adagcd/representation.hpp"

namespace adagcd {

// Instances of one run: the dataset (synthetic scenes or an image index) and
// the labeled/unlabeled split over it.
struct DataBundle {
  SplitSpec split;
  std::optional<SyntheticDataset> synthetic;
  std::optional<DatasetIndex> index;
  std::map<InstanceId, std::size_t> position;  // id → row in scenes / entries

  // Ids of the split, ascending.
  std::vector<InstanceId> ids() const {
    std::vector<InstanceId> out;
    out.reserve(split.classes.size());
    for (const auto& [id, c] : split.classes) out.push_back(id);
    return out;
  }

  std::size_t locate(InstanceId id) const {
    auto it = position.find(id);
    if (it == position.end()) throw ConfigError("instance " + std::to_string(id) + " is not in the dataset");
    return it->second;
  }

  std::vector<LabeledInstance> instances() const {
    if (synthetic) return synthetic->index();
    if (index) return index->labeled_instances();
    return {};
  }
};

inline DataBundle load_dataset(const PipelineConfig& cfg) {
  DataBundle b;
  if (cfg.data.source == "synthetic") {
    b.synthetic = synthetic_dataset(cfg.data.synthetic);
    for (std::size_t i = 0; i < b.synthetic->scenes.size(); ++i) b.position[b.synthetic->scenes[i].instance_id] = i;
  } else {
    b.index = read_index_csv(cfg.data.index_path);
    for (std::size_t i = 0; i < b.index->entries.size(); ++i)
      if (!b.position.emplace(b.index->entries[i].id, i).second)
        throw ConfigError("index: duplicate instance id " + std::to_string(b.index->entries[i].id));
  }
  return b;
}

// Dataset plus split: read from data.split when set, otherwise built from
// data.known / data.labeled_fraction with the run seed.
inline DataBundle load_data(const PipelineConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  DataBundle b = load_dataset(cfg);
  if (!cfg.data.split_path.empty()) {
    b.split = read_split(cfg.data.split_path);
    for (const auto& [id, c] : b.split.classes) b.locate(id);
  } else {
    b.split = build_split(b.instances(), KnownClassSpec::parse(cfg.data.known), cfg.data.labeled_fraction, cfg.seed,
                          warnings);
  }
  return b;
}

// One view of an instance ready for the backbone.
struct ViewInput {
  std::optional<SceneView> scene;
  std::optional<Image> image;
};

struct InstanceOutput {
  SlotVars slots;
  ReconstructionVars recon;
  Var l_rec;  // 1×1
  Var g_all;  // 1×3D
  Var z;      // 1×head.out, unit norm
};

// Backbone, clusterer, decoder, fusion and projection head over one store.
class Model {
 public:
  explicit Model(const PipelineConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t D = cfg_.backbone.feat_dim;
    std::size_t positions = 0;
    if (cfg_.backbone.kind == BackboneKind::Synthetic) {
      synthetic_.emplace(cfg_.backbone);
      positions = cfg_.data.synthetic.grid_h * cfg_.data.synthetic.grid_w;
    } else {
      vit_ = std::make_unique<VisionTransformer>(store_, "backbone", cfg_.backbone, derive_seed(cfg_.seed, {1}));
      vit_->trainable_parameters();
      for (Parameter* p : vit_->parameters()) p->lr_scale = cfg_.optim.backbone_lr_scale;
      positions = cfg_.backbone.patch_count();
    }
    clusterer_ = std::make_unique<Clusterer>(store_, "clusterer", cfg_.clusterer, D, derive_seed(cfg_.seed, {2}));
    decoder_ = std::make_unique<Decoder>(store_, "decoder", cfg_.decoder, cfg_.clusterer.d_slot, D, positions,
                                         derive_seed(cfg_.seed, {3}));
    fusion_ = std::make_unique<Fusion>(store_, "fusion", cfg_.clusterer.d_slot, D, derive_seed(cfg_.seed, {4}));
    head_ = std::make_unique<ProjectionHead>(store_, "head", fusion_->output_dim(), cfg_.head,
                                             derive_seed(cfg_.seed, {5}));
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const PipelineConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Clusterer& clusterer() const { return *clusterer_; }
  const Decoder& decoder() const { return *decoder_; }
  const Fusion& fusion() const { return *fusion_; }
  const ProjectionHead& head() const { return *head_; }
  const SyntheticBackbone* synthetic_backbone() const { return synthetic_ ? &*synthetic_ : nullptr; }
  const VisionTransformer* vit() const { return vit_.get(); }

  // Parameters stored in checkpoints: everything except frozen backbone
  // weights, which come back from backbone.weights_path.
  std::vector<const Parameter*> checkpoint_parameters() const {
    std::vector<const Parameter*> out;
    for (const Parameter* p : store_.all())
      if (p->trainable || p->name.rfind("backbone.", 0) != 0) out.push_back(p);
    return out;
  }

  FeatureVars encode(Tape& t, const ViewInput& view) const {
    if (view.scene) {
      if (!synthetic_) throw ConfigError("model has no synthetic backbone for a scene input");
      const FeatureMap fm = synthetic_->features(view.scene->scene, view.scene->noise_seed);
      return {t.constant(fm.local), t.constant(fm.global_vec)};
    }
    if (view.image) {
      if (!vit_) throw ConfigError("model has no image backbone for an image input");
      return vit_->forward(t, *view.image);
    }
    throw ContractError("encode: empty view");
  }

  InstanceOutput forward(Tape& t, const FeatureVars& fv, std::uint64_t seed, SelectionMode mode) const {
    decoder_->check_positions(fv.local.rows());
    InstanceOutput out;
    out.slots = clusterer_->forward(t, fv.local, seed, mode);
    out.recon = decoder_->decode(t, out.slots.slots, out.slots.keep_mask);
    // The reconstruction target is the encoder output without gradient.
    out.l_rec = reconstruction_loss(t.constant(fv.local.value()), out.recon.recon);
    const PooledVars pooled = pool_slots(out.slots.slots, out.slots.keep_mask);
    out.g_all = fusion_->fuse(t, fv.global, pooled);
    out.z = head_->project(t, out.g_all);
    return out;
  }

  // Canonical (un-augmented) view of an instance.
  ViewInput canonical_view(const DataBundle& data, InstanceId id) const {
    const std::size_t pos = data.locate(id);
    ViewInput v;
    if (data.synthetic) {
      v.scene = SceneView{data.synthetic->scenes[pos], canonical_noise_seed(cfg_.seed, id)};
    } else {
      const Image img = load_pnm(data.index->entries[pos].path);
      v.image = resize(img, cfg_.backbone.input_size, cfg_.backbone.input_size);
    }
    return v;
  }

  std::pair<ViewInput, ViewInput> training_views(const DataBundle& data, InstanceId id, std::uint64_t seed) const {
    const std::size_t pos = data.locate(id);
    std::pair<ViewInput, ViewInput> out;
    if (data.synthetic) {
      auto pair = make_views(data.synthetic->scenes[pos], cfg_.data.augment, seed, cfg_.seed);
      out.first.scene = std::move(pair.view1);
      out.second.scene = std::move(pair.view2);
    } else {
      AugmentConfig aug = cfg_.data.augment;
      aug.output_size = cfg_.backbone.input_size;
      auto pair = make_views(load_pnm(data.index->entries[pos].path), id, aug, seed);
      out.first.image = std::move(pair.view1);
      out.second.image = std::move(pair.view2);
    }
    return out;
  }

  // Seed for slot initialization and Gumbel noise during evaluation.
  std::uint64_t eval_seed(InstanceId id) const { return derive_seed(cfg_.seed, {0xE7A1, static_cast<std::uint64_t>(id)}); }

  // Deterministic evaluation pass: canonical view, hard selection.
  struct Inference {
    Matrix g_all;
    SlotState slots;
  };

  Inference infer(const ViewInput& view, std::uint64_t seed) const {
    Tape t(false);
    const FeatureVars fv = encode(t, view);
    const InstanceOutput out = forward(t, fv, seed, SelectionMode::Hard);
    return {out.g_all.value(), out.slots.state()};
  }

 private:
  PipelineConfig cfg_;
  ParameterStore store_;
  std::optional<SyntheticBackbone> synthetic_;
  std::unique_ptr<VisionTransformer> vit_;
  std::unique_ptr<Clusterer> clusterer_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<Fusion> fusion_;
  std::unique_ptr<ProjectionHead> head_;
};

}  // namespace adagcd
