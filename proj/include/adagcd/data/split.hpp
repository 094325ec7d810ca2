#pragma once

// Labeled/unlabeled partitions for category discovery: a subset of "known"
// classes contributes a stratified labeled sample; everything else (the rest of
// the known-class instances plus every novel-class instance) is unlabeled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/error.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

using InstanceId = std::int64_t;
using ClassId = std::int64_t;

struct LabeledInstance {
  InstanceId id = 0;
  ClassId class_id = 0;
};

enum class Partition { Labeled, Unlabeled };

struct SplitSpec {
  std::set<ClassId> known_classes;
  std::set<InstanceId> labeled_ids;
  std::set<InstanceId> unlabeled_ids;
  std::uint64_t seed = 0;
  // Ground-truth class of every instance in the split.
  std::map<InstanceId, ClassId> classes;

  std::size_t size() const { return classes.size(); }
  bool is_labeled(InstanceId id) const { return labeled_ids.count(id) > 0; }
  Partition partition(InstanceId id) const { return is_labeled(id) ? Partition::Labeled : Partition::Unlabeled; }
  ClassId class_of(InstanceId id) const {
    auto it = classes.find(id);
    if (it == classes.end()) throw ContractError("SplitSpec: unknown instance " + std::to_string(id));
    return it->second;
  }

  std::set<ClassId> all_classes() const {
    std::set<ClassId> out;
    for (const auto& [id, c] : classes) out.insert(c);
    return out;
  }

  // Throws ContractError if any split invariant is violated.
  void validate() const {
    for (InstanceId id : labeled_ids) {
      if (unlabeled_ids.count(id)) throw ContractError("split: instance " + std::to_string(id) + " is both L and U");
      auto it = classes.find(id);
      if (it == classes.end()) throw ContractError("split: labeled instance without class");
      if (!known_classes.count(it->second))
        throw ContractError("split: labeled instance " + std::to_string(id) + " has a novel class");
    }
    if (labeled_ids.size() + unlabeled_ids.size() != classes.size())
      throw ContractError("split: L ∪ U does not cover every instance");
    for (InstanceId id : unlabeled_ids)
      if (!classes.count(id)) throw ContractError("split: unlabeled instance without class");
  }
};

// Known-class selector: either a fraction of the sorted class ids (first-k) or
// an explicit list. Text form: a value containing '.' is a fraction
// ("0.8"); otherwise a comma-separated class list ("0,1,2").
struct KnownClassSpec {
  std::optional<double> fraction;
  std::vector<ClassId> classes;

  static KnownClassSpec from_fraction(double f) { return KnownClassSpec{f, {}}; }
  static KnownClassSpec from_list(std::vector<ClassId> c) { return KnownClassSpec{std::nullopt, std::move(c)}; }

  static KnownClassSpec parse(const std::string& text) {
    if (text.empty()) throw ConfigError("known-class spec is empty");
    if (text.find('.') != std::string::npos) {
      std::size_t pos = 0;
      double f = 0.0;
      try {
        f = std::stod(text, &pos);
      } catch (const std::exception&) {
        throw ConfigError("known-class fraction is not a number: '" + text + "'");
      }
      if (pos != text.size()) throw ConfigError("known-class fraction is not a number: '" + text + "'");
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("known-class fraction must be in (0, 1]");
      return from_fraction(f);
    }
    std::vector<ClassId> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stoll(item, &pos));
        if (pos != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("known-class list entry is not an integer: '" + item + "'");
      }
    }
    return from_list(std::move(out));
  }

  std::string to_string() const {
    if (fraction) {
      std::ostringstream os;
      os << *fraction;
      std::string s = os.str();
      if (s.find('.') == std::string::npos) s += ".0";
      return s;
    }
    std::string s;
    for (std::size_t i = 0; i < classes.size(); ++i) s += (i ? "," : "") + std::to_string(classes[i]);
    return s;
  }

  std::set<ClassId> resolve(const std::set<ClassId>& all) const {
    if (fraction) {
      const auto k = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(*fraction * static_cast<double>(all.size()))));
      std::set<ClassId> out;
      for (ClassId c : all) {
        if (out.size() == k) break;
        out.insert(c);
      }
      return out;
    }
    std::set<ClassId> out(classes.begin(), classes.end());
    for (ClassId c : out)
      if (!all.count(c)) throw ConfigError("known class " + std::to_string(c) + " does not occur in the dataset");
    if (out.empty()) throw ConfigError("known-class list is empty");
    return out;
  }
};

// Per known class, ⌊labeled_fraction · count⌋ instances (seeded uniform
// sample) are labeled; all other instances are unlabeled.
inline SplitSpec build_split(const std::vector<LabeledInstance>& dataset, const KnownClassSpec& known,
                             double labeled_fraction, std::uint64_t seed,
                             std::vector<std::string>* warnings = nullptr) {
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
    throw ConfigError("labeled fraction must lie in (0, 1)");
  SplitSpec split;
  split.seed = seed;
  std::map<ClassId, std::vector<InstanceId>> by_class;
  for (const auto& row : dataset) {
    if (!split.classes.emplace(row.id, row.class_id).second)
      throw ConfigError("duplicate instance id " + std::to_string(row.id));
    by_class[row.class_id].push_back(row.id);
  }
  std::set<ClassId> all;
  for (const auto& [c, ids] : by_class) all.insert(c);
  split.known_classes = known.resolve(all);
  if (split.known_classes.size() == all.size() && warnings)
    warnings->push_back("every class is known: no novel classes, category discovery is degenerate");

  for (auto& [c, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    if (!split.known_classes.count(c)) {
      split.unlabeled_ids.insert(ids.begin(), ids.end());
      continue;
    }
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_labeled = static_cast<std::size_t>(std::floor(labeled_fraction * static_cast<double>(ids.size())));
    split.labeled_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    split.unlabeled_ids.insert(ids.begin() + static_cast<std::ptrdiff_t>(n_labeled), ids.end());
  }
  return split;
}

// Line-delimited split file. Byte-stable for identical inputs: rows are sorted by instance id.
inline std::string serialize_split(const SplitSpec& split) {
  std::ostringstream os;
  os << "# adagcd split v1\n";
  os << "seed=" << split.seed << "\n";
  os << "known=";
  bool first = true;
  for (ClassId c : split.known_classes) {
    os << (first ? "" : ",") << c;
    first = false;
  }
  os << "\n";
  os << "instance_id,class_id,partition\n";
  for (const auto& [id, c] : split.classes) os << id << "," << c << "," << (split.is_labeled(id) ? 'L' : 'U') << "\n";
  return os.str();
}

inline SplitSpec parse_split(std::istream& in) {
  SplitSpec split;
  std::string line;
  bool have_seed = false, have_known = false, in_rows = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (!in_rows) {
      if (line.rfind("seed=", 0) == 0) {
        split.seed = std::stoull(line.substr(5));
        have_seed = true;
      } else if (line.rfind("known=", 0) == 0) {
        const std::string list = line.substr(6);
        if (!list.empty())
          for (ClassId c : KnownClassSpec::parse(list).classes) split.known_classes.insert(c);
        have_known = true;
      } else if (line == "instance_id,class_id,partition") {
        in_rows = true;
      } else {
        throw IoError("split file: unexpected header line" + where);
      }
      continue;
    }
    std::stringstream ss(line);
    std::string id_s, cls_s, part_s;
    if (!std::getline(ss, id_s, ',') || !std::getline(ss, cls_s, ',') || !std::getline(ss, part_s))
      throw IoError("split file: malformed row" + where);
    InstanceId id = 0;
    ClassId c = 0;
    try {
      id = std::stoll(id_s);
      c = std::stoll(cls_s);
    } catch (const std::exception&) {
      throw IoError("split file: non-integer id or class" + where);
    }
    if (!split.classes.emplace(id, c).second) throw IoError("split file: duplicate instance" + where);
    if (part_s == "L")
      split.labeled_ids.insert(id);
    else if (part_s == "U")
      split.unlabeled_ids.insert(id);
    else
      throw IoError("split file: partition must be L or U" + where);
  }
  if (!have_seed || !have_known || !in_rows) throw IoError("split file: missing header");
  try {
    split.validate();
  } catch (const ContractError& e) {
    throw IoError(std::string("split file: ") + e.what());
  }
  return split;
}

inline void write_split(const SplitSpec& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write split file " + path);
  out << serialize_split(split);
  if (!out) throw IoError("write failed for split file " + path);
}

inline SplitSpec read_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open split file " + path);
  return parse_split(in);
}

}  // namespace adagcd
