#include "shadeadapt/ablation.hpp"

#include "shadeadapt/errors.hpp"
#include "shadeadapt/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace shadeadapt {

namespace fs = std::filesystem;

std::vector<AblationCell> parse_matrix(const std::string& text) {
  std::vector<AblationCell> cells;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("matrix line " + std::to_string(lineno) + ": expected 'label: key=value ...'");
    }
    AblationCell cell;
    std::istringstream label_in(line.substr(0, colon));
    label_in >> cell.label;
    if (cell.label.empty()) {
      throw ConfigError("matrix line " + std::to_string(lineno) + ": empty label");
    }
    std::istringstream rest(line.substr(colon + 1));
    std::string tok;
    while (rest >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("matrix line " + std::to_string(lineno) + ": '" + tok +
                          "' is not key=value");
      }
      cell.overrides.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw ConfigError("ablation matrix has no cells");
  return cells;
}

std::vector<AblationCell> builtin_matrix(const std::string& name) {
  if (name == "components") {
    return parse_matrix(
        "baseline: adapter_mha=false adapter_ffn=false freeze_backbone=false prompt=none\n"
        "point: adapter_mha=false adapter_ffn=false freeze_backbone=false prompt=point\n"
        "point+mha: adapter_mha=true adapter_ffn=false freeze_backbone=false prompt=point\n"
        "point+mha+ffn: adapter_mha=true adapter_ffn=true freeze_backbone=false prompt=point\n"
        "point+mha+ffn+freeze: adapter_mha=true adapter_ffn=true freeze_backbone=true "
        "prompt=point\n");
  }
  if (name == "grid") {
    return parse_matrix(
        "g12: strategy=grid grid_size=12 k=1\n"
        "g16: strategy=grid grid_size=16 k=1\n"
        "g24: strategy=grid grid_size=24 k=1\n"
        "g32: strategy=grid grid_size=32 k=1\n");
  }
  if (name == "topk") {
    const int pairs[][2] = {{1, 1}, {2, 2}, {3, 3}, {4, 4},  {5, 0},   {5, 5},   {6, 6},
                            {7, 7}, {8, 8}, {9, 9}, {10, 10}, {10, 0}, {15, 15}, {20, 20}};
    std::string text;
    for (const auto& p : pairs) {
      char line[96];
      std::snprintf(line, sizeof line, "top%d-%d: strategy=topk n_pos=%d n_neg=%d\n", p[0], p[1],
                    p[0], p[1]);
      text += line;
    }
    return parse_matrix(text);
  }
  throw ConfigError("unknown built-in matrix '" + name + "' (components, grid, topk)");
}

std::vector<AblationCell> resolve_matrix(const std::string& name_or_path) {
  if (name_or_path == "components" || name_or_path == "grid" || name_or_path == "topk") {
    return builtin_matrix(name_or_path);
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw ConfigError("matrix '" + name_or_path +
                      "' is neither a built-in (components, grid, topk) nor a readable file");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_matrix(ss.str());
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells,
                                      const fs::path& out_dir, std::ostream* log) {
  // Validate every cell before training any of them.
  std::vector<RunConfig> configs;
  for (size_t i = 0; i < cells.size(); ++i) {
    auto overrides = cells[i].overrides;
    char dir[32];
    std::snprintf(dir, sizeof dir, "%02zu-", i + 1);
    overrides.emplace_back("run_dir", (out_dir / "cells" / (dir + cells[i].label)).string());
    try {
      configs.push_back(with_overrides(base, overrides));
    } catch (const ConfigError& e) {
      throw ConfigError("ablation cell '" + cells[i].label + "': " + e.what());
    }
  }
  std::vector<AblationRow> rows;
  for (size_t i = 0; i < cells.size(); ++i) {
    const RunConfig& cfg = configs[i];
    if (log) *log << "[" << i + 1 << "/" << cells.size() << "] " << cells[i].label << "\n";
    TrainResult tr = train(cfg);
    std::optional<Dataset> eval_data = load_eval_split(cfg);
    AblationRow row;
    row.label = cells[i].label;
    for (const auto& [k, v] : cells[i].overrides) {
      if (!row.overrides.empty()) row.overrides += ' ';
      row.overrides += k + "=" + v;
    }
    row.eval_set = eval_data ? cfg.eval_split : cfg.profile.split;
    Dataset data = eval_data ? std::move(*eval_data) : load_dataset(cfg.profile);
    EvalResult er = evaluate(tr.pipeline, data);
    row.ber = er.summary.ber;
    row.ber_s = er.summary.ber_s;
    row.ber_ns = er.summary.ber_ns;
    row.steps = static_cast<int64_t>(tr.steps.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace shadeadapt
