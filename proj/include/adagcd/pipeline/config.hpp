#pragma once

// Whole-pipeline configuration as one record, read from and written to flat
// `dotted.key=value` text. Every key is registered once in `fields()`, which
// drives parsing, overrides and the snapshot stored in checkpoints.

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/backbone.hpp"
#include "adagcd/clusterer.hpp"
#include "adagcd/data/augment.hpp"
#include "adagcd/data/synthetic.hpp"
#include "adagcd/decoder.hpp"
#include "adagcd/representation.hpp"

namespace adagcd {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "index"
  std::string index_path;            // CSV of instance_id,path,class_id
  std::string split_path;            // optional precomputed split
  std::string known = "0.5";         // known-class spec when building the split
  double labeled_fraction = 0.5;
  SyntheticDatasetConfig synthetic;
  AugmentConfig augment;
};

struct OptimConfig {
  std::string algorithm = "sgd";
  double lr = 0.1;
  double momentum = 0.9;
  std::string schedule = "cosine";  // "cosine" or "constant"
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double backbone_lr_scale = 0.1;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global norm; 0 disables
};

struct OutputConfig {
  std::string checkpoint;  // empty: no checkpoint file
  std::string log;         // empty: no metrics log
  std::size_t checkpoint_every = 1;
  bool log_steps = false;
  std::size_t eval_k = 0;  // 0: total class count
  bool eval_after_train = true;
};

struct PipelineConfig {
  BackboneConfig backbone = BackboneConfig::synthetic(32, 40);
  ClustererConfig clusterer;
  DecoderConfig decoder;
  ProjectionConfig head;
  LossWeights loss;
  DataConfig data;
  OptimConfig optim;
  OutputConfig output;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace config_detail

struct ConfigField {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline std::vector<ConfigField> fields(PipelineConfig& c) {
  using namespace config_detail;
  std::vector<ConfigField> f;
  auto size_field = [&f](const std::string& k, std::size_t& ref) {
    f.push_back({k, [k, &ref](const std::string& v) { ref = to_size(k, v); }, [&ref] { return std::to_string(ref); }});
  };
  auto u64_field = [&f](const std::string& k, std::uint64_t& ref) {
    f.push_back({k, [k, &ref](const std::string& v) { ref = to_size(k, v); }, [&ref] { return std::to_string(ref); }});
  };
  auto real_field = [&f](const std::string& k, double& ref) {
    f.push_back({k, [k, &ref](const std::string& v) { ref = to_double(k, v); }, [&ref] { return fmt(ref); }});
  };
  auto bool_field = [&f](const std::string& k, bool& ref) {
    f.push_back({k, [k, &ref](const std::string& v) { ref = to_bool(k, v); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };
  auto str_field = [&f](const std::string& k, std::string& ref) {
    f.push_back({k, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }});
  };

  f.push_back({"backbone.kind",
               [&c](const std::string& v) {
                 if (v == "synthetic")
                   c.backbone.kind = BackboneKind::Synthetic;
                 else if (v == "vit")
                   c.backbone.kind = BackboneKind::PretrainedVit;
                 else
                   throw ConfigError("backbone.kind: expected synthetic or vit, got '" + v + "'");
               },
               [&c] { return std::string(c.backbone.kind == BackboneKind::Synthetic ? "synthetic" : "vit"); }});
  size_field("backbone.feat_dim", c.backbone.feat_dim);
  size_field("backbone.input_size", c.backbone.input_size);
  size_field("backbone.patch_size", c.backbone.patch_size);
  size_field("backbone.depth", c.backbone.depth);
  size_field("backbone.heads", c.backbone.heads);
  size_field("backbone.mlp_ratio", c.backbone.mlp_ratio);
  size_field("backbone.trainable_depth", c.backbone.trainable_depth);
  str_field("backbone.weights_path", c.backbone.weights_path);
  size_field("backbone.vocab", c.backbone.vocab);
  real_field("backbone.separation", c.backbone.separation);
  real_field("backbone.position_scale", c.backbone.position_scale);
  real_field("backbone.noise_std", c.backbone.noise_std);
  u64_field("backbone.embed_seed", c.backbone.embed_seed);

  size_field("clusterer.k_max", c.clusterer.k_max);
  size_field("clusterer.d_slot", c.clusterer.d_slot);
  size_field("clusterer.iterations", c.clusterer.iterations);
  real_field("clusterer.gumbel_temperature", c.clusterer.gumbel_temperature);
  real_field("clusterer.sparsity_weight", c.clusterer.sparsity_weight);
  bool_field("clusterer.adaptive", c.clusterer.adaptive);
  size_field("clusterer.mlp_hidden", c.clusterer.mlp_hidden);
  size_field("clusterer.selector_hidden", c.clusterer.selector_hidden);

  size_field("decoder.layers", c.decoder.layers);
  size_field("decoder.hidden", c.decoder.hidden);
  real_field("decoder.pos_init_std", c.decoder.pos_init_std);

  size_field("head.hidden", c.head.hidden);
  size_field("head.out", c.head.out);
  size_field("head.layers", c.head.layers);

  real_field("loss.lambda_u", c.loss.lambda_u);
  real_field("loss.lambda_s", c.loss.lambda_s);
  real_field("loss.lambda_rec", c.loss.lambda_rec);
  real_field("loss.temperature_u", c.loss.temperature_u);
  real_field("loss.temperature_s", c.loss.temperature_s);

  str_field("data.source", c.data.source);
  str_field("data.index", c.data.index_path);
  str_field("data.split", c.data.split_path);
  str_field("data.known", c.data.known);
  real_field("data.labeled_fraction", c.data.labeled_fraction);
  size_field("data.synthetic.n_classes", c.data.synthetic.n_classes);
  size_field("data.synthetic.min_parts", c.data.synthetic.min_parts);
  size_field("data.synthetic.max_parts", c.data.synthetic.max_parts);
  size_field("data.synthetic.instances_per_class", c.data.synthetic.instances_per_class);
  size_field("data.synthetic.grid_h", c.data.synthetic.grid_h);
  size_field("data.synthetic.grid_w", c.data.synthetic.grid_w);
  size_field("data.synthetic.vocab", c.data.synthetic.vocab);
  u64_field("data.synthetic.seed", c.data.synthetic.seed);
  bool_field("data.augment.crop", c.data.augment.crop);
  real_field("data.augment.scale_min", c.data.augment.scale_min);
  real_field("data.augment.scale_max", c.data.augment.scale_max);
  real_field("data.augment.flip_prob", c.data.augment.flip_prob);
  real_field("data.augment.brightness", c.data.augment.brightness);
  real_field("data.augment.contrast", c.data.augment.contrast);
  real_field("data.augment.saturation", c.data.augment.saturation);
  size_field("data.augment.max_shift", c.data.augment.max_shift);
  bool_field("data.augment.resample_noise", c.data.augment.resample_noise);

  str_field("optim.algorithm", c.optim.algorithm);
  real_field("optim.lr", c.optim.lr);
  real_field("optim.momentum", c.optim.momentum);
  str_field("optim.schedule", c.optim.schedule);
  size_field("optim.epochs", c.optim.epochs);
  size_field("optim.batch_size", c.optim.batch_size);
  real_field("optim.backbone_lr_scale", c.optim.backbone_lr_scale);
  real_field("optim.weight_decay", c.optim.weight_decay);
  real_field("optim.grad_clip", c.optim.grad_clip);

  str_field("output.checkpoint", c.output.checkpoint);
  str_field("output.log", c.output.log);
  size_field("output.checkpoint_every", c.output.checkpoint_every);
  bool_field("output.log_steps", c.output.log_steps);
  size_field("output.eval_k", c.output.eval_k);
  bool_field("output.eval_after_train", c.output.eval_after_train);

  u64_field("seed", c.seed);
  return f;
}

inline void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = config_detail::trim(assignment.substr(0, eq));
  const std::string value = config_detail::trim(assignment.substr(eq + 1));
  for (auto& field : fields(c)) {
    if (field.key == key) {
      field.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Lines are `key=value`; blank lines and lines starting with '#' are skipped.
inline PipelineConfig parse_config(std::istream& in, PipelineConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_override(base, t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline PipelineConfig parse_config_text(const std::string& text, PipelineConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

inline PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  PipelineConfig c;
  try {
    c = parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(c, o);
  c.validate();
  return c;
}

inline std::string PipelineConfig::to_text() const {
  PipelineConfig copy = *this;
  std::string out;
  for (auto& field : fields(copy)) out += field.key + "=" + field.get() + "\n";
  return out;
}

inline void PipelineConfig::validate() const {
  backbone.validate();
  clusterer.validate();
  decoder.validate();
  head.validate();
  loss.validate();
  data.augment.validate();
  if (data.source == "synthetic") {
    data.synthetic.validate();
    if (backbone.kind != BackboneKind::Synthetic) throw ConfigError("data.source=synthetic needs backbone.kind=synthetic");
    if (backbone.vocab < data.synthetic.vocab_size())
      throw ConfigError("backbone.vocab (" + std::to_string(backbone.vocab) + ") is smaller than the dataset vocabulary (" +
                        std::to_string(data.synthetic.vocab_size()) + ")");
  } else if (data.source == "index") {
    if (data.index_path.empty()) throw ConfigError("data.source=index needs data.index");
    if (backbone.kind != BackboneKind::PretrainedVit) throw ConfigError("data.source=index needs backbone.kind=vit");
  } else {
    throw ConfigError("data.source: expected synthetic or index, got '" + data.source + "'");
  }
  if (data.split_path.empty() && !(data.labeled_fraction > 0.0 && data.labeled_fraction < 1.0))
    throw ConfigError("data.labeled_fraction must be in (0, 1)");
  if (optim.algorithm != "sgd" && optim.algorithm != "adam")
    throw ConfigError("optim.algorithm: expected sgd or adam");
  if (optim.schedule != "cosine" && optim.schedule != "constant")
    throw ConfigError("optim.schedule: expected cosine or constant");
  if (optim.epochs < 1) throw ConfigError("optim.epochs must be ≥ 1");
  if (optim.batch_size < 2) throw ConfigError("optim.batch_size must be ≥ 2 (contrastive losses need negatives)");
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (optim.momentum < 0.0 || optim.momentum >= 1.0) throw ConfigError("optim.momentum must be in [0, 1)");
  if (optim.weight_decay < 0.0 || optim.grad_clip < 0.0 || optim.backbone_lr_scale < 0.0)
    throw ConfigError("optim: weight_decay, grad_clip and backbone_lr_scale must be ≥ 0");
}

}  // namespace adagcd
