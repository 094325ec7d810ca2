#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/pipeline/train.hpp"

namespace adagcd {

// One grid point: a list of key=value overrides applied on top of the base config.
using GridPoint = std::vector<std::string>;

// One point per non-empty, non-comment line; overrides separated by spaces.
inline std::vector<GridPoint> parse_grid(std::istream& in) {
  std::vector<GridPoint> grid;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    GridPoint p;
    for (std::string tok; ls >> tok;) p.push_back(tok);
    grid.push_back(std::move(p));
  }
  return grid;
}

inline std::vector<GridPoint> read_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read grid " + path);
  return parse_grid(in);
}

struct SweepRow {
  GridPoint overrides;
  ClusterReport report;
  std::size_t k = 0;
};

inline std::string label(const GridPoint& p) {
  std::string s;
  for (const auto& o : p) s += (s.empty() ? "" : " ") + o;
  return s.empty() ? "(base)" : s;
}

// Every point is validated before any training starts, so a bad override
// fails fast. Per-point checkpoints and logs get a ".<index>" suffix.
inline std::vector<SweepRow> sweep(const PipelineConfig& base, const std::vector<GridPoint>& grid,
                                   const std::function<void(const SweepRow&)>& on_row = {}) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  std::vector<PipelineConfig> configs;
  for (const auto& point : grid) {
    PipelineConfig c = base;
    for (const auto& o : point) apply_override(c, o);
    c.output.eval_after_train = true;
    c.validate();
    configs.push_back(std::move(c));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    PipelineConfig& c = configs[i];
    if (grid.size() > 1) {
      if (!c.output.checkpoint.empty()) c.output.checkpoint += "." + std::to_string(i);
      if (!c.output.log.empty()) c.output.log += "." + std::to_string(i);
    }
    TrainResult r = train(c);
    rows.push_back({grid[i], *r.report, r.eval_k});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

// Tab-separated: config, All, Old, New (accuracies in percent, one decimal).
inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "config\tAll\tOld\tNew\n" << std::fixed << std::setprecision(1);
  for (const auto& r : rows)
    os << label(r.overrides) << "\t" << 100.0 * r.report.acc_all << "\t" << 100.0 * r.report.acc_old << "\t"
       << 100.0 * r.report.acc_new << "\n";
  return os.str();
}

}  // namespace adagcd
