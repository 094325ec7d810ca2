#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/archive.hpp"
#include "adagcd/pipeline/model.hpp"

namespace adagcd {

inline constexpr const char* checkpoint_format = "adagcd-checkpoint-v1";

struct Checkpoint {
  PipelineConfig config;
  std::size_t epoch = 0;
  std::vector<std::string> history;  // metrics records, oldest first
  TensorArchive archive;
};

inline TensorArchive checkpoint_archive(const Model& model, std::size_t epoch, const std::vector<std::string>& history) {
  TensorArchive ar;
  ar.metadata["format"] = checkpoint_format;
  ar.metadata["config"] = model.config().to_text();
  ar.metadata["epoch"] = std::to_string(epoch);
  std::string h;
  for (const auto& line : history) h += line + "\n";
  ar.metadata["history"] = h;
  for (const Parameter* p : model.checkpoint_parameters()) ar.tensors.emplace_back(p->name, p->value);
  return ar;
}

inline void save_checkpoint(const Model& model, std::size_t epoch, const std::vector<std::string>& history,
                            const std::string& path) {
  write_archive(checkpoint_archive(model, epoch, history), path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ck;
  ck.archive = read_archive(path);
  auto meta = [&](const char* key) -> const std::string& {
    auto it = ck.archive.metadata.find(key);
    if (it == ck.archive.metadata.end()) throw IoError(path + ": checkpoint lacks '" + key + "' metadata");
    return it->second;
  };
  if (meta("format") != checkpoint_format) throw IoError(path + ": not an adagcd checkpoint");
  ck.config = parse_config_text(meta("config"));
  ck.epoch = std::stoull(meta("epoch"));
  std::istringstream hs(meta("history"));
  for (std::string line; std::getline(hs, line);)
    if (!line.empty()) ck.history.push_back(line);
  return ck;
}

// Builds the model from the checkpoint's config snapshot and restores every
// stored parameter; frozen backbone weights come from backbone.weights_path.
inline std::unique_ptr<Model> restore_model(const Checkpoint& ck) {
  auto model = std::make_unique<Model>(ck.config);
  for (const Parameter* p : model->checkpoint_parameters()) {
    const Matrix* m = ck.archive.find(p->name);
    if (!m) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (!m->same_shape(p->value))
      throw IoError("checkpoint parameter '" + p->name + "' has shape " + m->shape_string() + ", model expects " +
                    p->value.shape_string());
    model->store().at(p->name).value = *m;
  }
  return model;
}

}  // namespace adagcd
