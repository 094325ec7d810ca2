#pragma once

// Embedding extraction, clustering evaluation and the embedding export file.
//
// Export format (CSV):
//   # seed=<run seed> known=<comma-separated known class ids>
//   instance_id,class_id,partition,g0,...,g{3D-1}
//   <id>,<class>,<L|U>,<17-significant-digit values>...

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/eval.hpp"
#include "adagcd/pipeline/model.hpp"

namespace adagcd {

// g_all for each id, one row per id in the given order.
inline Matrix embed_instances(const Model& model, const DataBundle& data, const std::vector<InstanceId>& ids) {
  const std::size_t width = model.fusion().output_dim();
  Matrix out(ids.size(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Matrix g = model.infer(model.canonical_view(data, ids[i]), model.eval_seed(ids[i])).g_all;
    for (std::size_t j = 0; j < width; ++j) out(i, j) = g[j];
  }
  return out;
}

inline std::size_t default_k(const PipelineConfig& cfg, const SplitSpec& split) {
  return cfg.output.eval_k ? cfg.output.eval_k : split.all_classes().size();
}

inline std::uint64_t kmeans_seed(std::uint64_t seed) { return derive_seed(seed, {0x4B4D}); }

// Semi-supervised k-means over every row, Hungarian scoring on the unlabeled
// rows. The report's assignments cover all instances.
inline ClusterReport evaluate_embeddings(const Matrix& embeddings, const std::vector<InstanceId>& ids,
                                         const SplitSpec& split, std::size_t k, std::uint64_t seed) {
  if (embeddings.rows() != ids.size()) throw ShapeError("evaluate: one embedding row per instance required");
  std::vector<ClassId> labels(ids.size(), -1);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (split.is_labeled(ids[i])) labels[i] = split.class_of(ids[i]);
  const KMeansResult km = ss_kmeans(embeddings, labels, {k, kmeans_seed(seed), 100, 1e-4});
  std::map<InstanceId, int> pred, all;
  std::map<InstanceId, ClassId> truth;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    all[ids[i]] = km.assignments[i];
    if (labels[i] >= 0) continue;
    pred[ids[i]] = km.assignments[i];
    truth[ids[i]] = split.class_of(ids[i]);
  }
  ClusterReport report = hungarian_accuracy(pred, truth, split.known_classes);
  report.assignments = std::move(all);
  return report;
}

inline ClusterReport evaluate(const Model& model, const DataBundle& data, std::size_t k) {
  const std::vector<InstanceId> ids = data.ids();
  return evaluate_embeddings(embed_instances(model, data, ids), ids, data.split, k, model.config().seed);
}

inline void write_embeddings(const std::string& path, const Matrix& embeddings, const std::vector<InstanceId>& ids,
                             const SplitSpec& split, std::size_t width, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "# seed=" << seed << " known=";
  bool first = true;
  for (ClassId c : split.known_classes) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  out << "\ninstance_id,class_id,partition";
  for (std::size_t j = 0; j < width; ++j) out << ",g" << j;
  out << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << "," << split.class_of(ids[i]) << "," << (split.is_labeled(ids[i]) ? "L" : "U");
    for (std::size_t j = 0; j < width; ++j) out << "," << embeddings(i, j);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline void export_embeddings(const Model& model, const DataBundle& data, const std::string& path) {
  const std::vector<InstanceId> ids = data.ids();
  write_embeddings(path, embed_instances(model, data, ids), ids, data.split, model.fusion().output_dim(),
                   model.config().seed);
}

struct EmbeddingTable {
  std::vector<InstanceId> ids;
  Matrix embeddings;
  SplitSpec split;
  std::uint64_t seed = 0;  // seed of the run that produced the embeddings
};

inline EmbeddingTable read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  EmbeddingTable t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# seed=", 0) != 0 || line.find(" known=") == std::string::npos)
    throw IoError(path + ": missing '# seed=... known=...' line");
  {
    const auto known_at = line.find(" known=");
    try {
      t.seed = std::stoull(line.substr(7, known_at - 7));
    } catch (const std::exception&) {
      throw IoError(path + ": malformed seed");
    }
    std::istringstream ks(line.substr(known_at + 7));
    for (std::string item; std::getline(ks, item, ',');)
      if (!item.empty()) t.split.known_classes.insert(std::stoll(item));
  }
  if (!std::getline(in, line) || line.rfind("instance_id,class_id,partition", 0) != 0)
    throw IoError(path + ": missing header row");
  const std::size_t width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
  std::vector<double> values;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id_s, cls_s, part;
    std::getline(ls, id_s, ',');
    std::getline(ls, cls_s, ',');
    std::getline(ls, part, ',');
    InstanceId id = 0;
    ClassId cls = 0;
    try {
      id = std::stoll(id_s);
      cls = std::stoll(cls_s);
    } catch (const std::exception&) {
      throw IoError(path + ": malformed row at line " + std::to_string(line_no));
    }
    if (part != "L" && part != "U") throw IoError(path + ": bad partition at line " + std::to_string(line_no));
    std::size_t n = 0;
    for (std::string v; std::getline(ls, v, ',');) {
      try {
        values.push_back(std::stod(v));
      } catch (const std::exception&) {
        throw IoError(path + ": non-numeric embedding value at line " + std::to_string(line_no));
      }
      ++n;
    }
    if (n != width) throw IoError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(n) +
                                  " values, expected " + std::to_string(width));
    t.ids.push_back(id);
    t.split.classes[id] = cls;
    (part == "L" ? t.split.labeled_ids : t.split.unlabeled_ids).insert(id);
  }
  t.embeddings = Matrix(t.ids.size(), width, std::move(values));
  return t;
}

}  // namespace adagcd
