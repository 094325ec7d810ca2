#pragma once

// Append-only metrics log: one line per record, space-separated key=value
// tokens, the first token always `kind=<epoch|step|report>`.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adagcd/error.hpp"
#include "adagcd/eval.hpp"

namespace adagcd {

class Record {
 public:
  explicit Record(const std::string& kind) { add("kind", kind); }

  Record& add(const std::string& key, const std::string& value) {
    fields_.emplace_back(key, value);
    return *this;
  }
  Record& add(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    return add(key, os.str());
  }
  Record& add(const std::string& key, std::size_t value) { return add(key, std::to_string(value)); }

  std::string line() const {
    std::string out;
    for (const auto& [k, v] : fields_) {
      if (!out.empty()) out += ' ';
      out += k + "=" + v;
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

inline std::map<std::string, std::string> parse_record(const std::string& line) {
  std::map<std::string, std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw IoError("metrics record token without '=': " + tok);
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

inline void append_line(const std::string& path, const std::string& line) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to metrics log " + path);
  out << line << "\n";
}

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_rec = 0.0;
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double overall = 0.0;   // λ_rec·l_rec + λ_s·l_sup + λ_u·l_unsup
  double sparsity = 0.0;  // sparsity_weight · mean keep probability
  double objective = 0.0; // overall + sparsity, the minimized quantity
  double kept = 0.0;      // mean kept slots per view
  double lr = 0.0;
  bool has_labeled = false;

  Record record(const char* kind = "step") const {
    Record r(kind);
    r.add("epoch", epoch).add("step", step);
    r.add("l_rec", l_rec).add("l_sup", l_sup).add("l_unsup", l_unsup);
    r.add("overall", overall).add("sparsity", sparsity).add("objective", objective);
    r.add("kept", kept).add("lr", lr);
    return r;
  }
};

inline StepMetrics average(const std::vector<StepMetrics>& steps, std::size_t epoch) {
  StepMetrics m;
  m.epoch = epoch;
  m.step = steps.size();
  if (steps.empty()) return m;
  for (const auto& s : steps) {
    m.l_rec += s.l_rec;
    m.l_sup += s.l_sup;
    m.l_unsup += s.l_unsup;
    m.overall += s.overall;
    m.sparsity += s.sparsity;
    m.objective += s.objective;
    m.kept += s.kept;
  }
  const double n = static_cast<double>(steps.size());
  m.l_rec /= n;
  m.l_sup /= n;
  m.l_unsup /= n;
  m.overall /= n;
  m.sparsity /= n;
  m.objective /= n;
  m.kept /= n;
  m.lr = steps.back().lr;
  return m;
}

inline Record report_record(const ClusterReport& r, std::size_t k) {
  Record rec("report");
  rec.add("k", k).add("acc_all", r.acc_all).add("acc_old", r.acc_old).add("acc_new", r.acc_new);
  rec.add("n_old", r.n_old).add("n_new", r.n_new).add("clusters", r.count_clusters());
  return rec;
}

}  // namespace adagcd
