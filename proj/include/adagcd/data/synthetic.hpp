#pragma once

// Synthetic scenes: an H×W grid partitioned into regions, one per part. Each
// class owns a signature set of part types; instances of a class differ in
// where and how large the regions are.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "adagcd/data/split.hpp"
#include "adagcd/error.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

struct ScenePart {
  int part_id = 0;
  std::vector<bool> mask;  // H·W, row-major
};

struct SyntheticScene {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<int> part_map;  // part type per cell, row-major
  ClassId class_id = 0;
  InstanceId instance_id = 0;

  std::size_t cells() const { return grid_h * grid_w; }
  int at(std::size_t r, std::size_t c) const { return part_map[r * grid_w + c]; }

  std::vector<int> part_types() const {
    std::set<int> s(part_map.begin(), part_map.end());
    return {s.begin(), s.end()};
  }
  std::size_t part_count() const { return part_types().size(); }

  std::vector<ScenePart> parts() const {
    std::vector<ScenePart> out;
    for (int p : part_types()) {
      ScenePart sp{p, std::vector<bool>(cells(), false)};
      for (std::size_t i = 0; i < cells(); ++i) sp.mask[i] = part_map[i] == p;
      out.push_back(std::move(sp));
    }
    return out;
  }

  void validate() const {
    if (grid_h == 0 || grid_w == 0) throw ContractError("scene: empty grid");
    if (part_map.size() != cells()) throw ContractError("scene: part map does not cover the grid");
    for (int p : part_map)
      if (p < 0) throw ContractError("scene: negative part id");
  }

  friend bool operator==(const SyntheticScene&, const SyntheticScene&) = default;
};

// Places one region per entry of `part_types` on the grid: distinct seed cells
// are drawn uniformly and every cell joins its nearest seed (Voronoi, ties to
// the lower index). Each part therefore owns at least one cell.
inline SyntheticScene make_scene(const std::vector<int>& part_types, std::size_t grid_h, std::size_t grid_w,
                                 Rng& rng) {
  const std::size_t cells = grid_h * grid_w;
  if (part_types.empty()) throw ConfigError("scene needs at least one part");
  if (part_types.size() > cells) throw ConfigError("invalid scene: more parts than grid cells");
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  SyntheticScene scene;
  scene.grid_h = grid_h;
  scene.grid_w = grid_w;
  scene.part_map.assign(cells, part_types.front());
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto r = static_cast<double>(cell / grid_w), c = static_cast<double>(cell % grid_w);
    double best = 1e300;
    for (std::size_t p = 0; p < part_types.size(); ++p) {
      const auto sr = static_cast<double>(order[p] / grid_w), sc = static_cast<double>(order[p] % grid_w);
      const double d = (r - sr) * (r - sr) + (c - sc) * (c - sc);
      if (d < best) {
        best = d;
        scene.part_map[cell] = part_types[p];
      }
    }
  }
  return scene;
}

struct SyntheticDatasetConfig {
  std::size_t n_classes = 10;
  std::size_t min_parts = 2;
  std::size_t max_parts = 4;
  std::size_t instances_per_class = 100;
  std::size_t grid_h = 6;
  std::size_t grid_w = 6;
  // Part-type vocabulary; 0 means n_classes · max_parts (disjoint signatures).
  std::size_t vocab = 0;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return vocab ? vocab : n_classes * max_parts; }

  void validate() const {
    if (n_classes == 0) throw ConfigError("synthetic dataset: n_classes must be ≥ 1");
    if (min_parts == 0 || min_parts > max_parts) throw ConfigError("synthetic dataset: invalid parts range");
    if (instances_per_class == 0) throw ConfigError("synthetic dataset: instances_per_class must be ≥ 1");
    if (max_parts > grid_h * grid_w) throw ConfigError("synthetic dataset: grid too small for requested parts");
    if (max_parts > vocab_size()) throw ConfigError("synthetic dataset: vocabulary smaller than a signature");
  }
};

struct SyntheticDataset {
  SyntheticDatasetConfig config;
  std::vector<std::vector<int>> signatures;  // part types per class
  std::vector<SyntheticScene> scenes;        // instance id == index

  std::vector<LabeledInstance> index() const {
    std::vector<LabeledInstance> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({s.instance_id, s.class_id});
    return out;
  }
};

inline SyntheticDataset synthetic_dataset(const SyntheticDatasetConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  Rng sig_rng(derive_seed(cfg.seed, {0x5167}));
  std::vector<int> vocab(cfg.vocab_size());
  std::iota(vocab.begin(), vocab.end(), 0);
  std::shuffle(vocab.begin(), vocab.end(), sig_rng);
  std::size_t cursor = 0;
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_parts, cfg.max_parts);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    const std::size_t k = count_dist(sig_rng);
    std::vector<int> sig;
    while (sig.size() < k) {
      if (cursor == vocab.size()) {
        std::shuffle(vocab.begin(), vocab.end(), sig_rng);
        cursor = 0;
      }
      const int p = vocab[cursor++];
      if (std::find(sig.begin(), sig.end(), p) == sig.end()) sig.push_back(p);
    }
    std::sort(sig.begin(), sig.end());
    ds.signatures.push_back(std::move(sig));
  }
  InstanceId next = 0;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t i = 0; i < cfg.instances_per_class; ++i) {
      Rng rng(derive_seed(cfg.seed, {1, c, i}));
      SyntheticScene s = make_scene(ds.signatures[c], cfg.grid_h, cfg.grid_w, rng);
      s.class_id = static_cast<ClassId>(c);
      s.instance_id = next++;
      ds.scenes.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace adagcd
