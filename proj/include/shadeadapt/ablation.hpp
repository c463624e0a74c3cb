#pragma once

#include "shadeadapt/config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace shadeadapt {

struct AblationCell {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// One cell per non-comment line: `label: key=value key=value ...`.
std::vector<AblationCell> parse_matrix(const std::string& text);

/// "components" (5 rows), "grid" (g = 12, 16, 24, 32) or "topk" (14 rows).
std::vector<AblationCell> builtin_matrix(const std::string& name);

/// A built-in name or a path to a matrix file.
std::vector<AblationCell> resolve_matrix(const std::string& name_or_path);

struct AblationRow {
  std::string label;
  std::string overrides;  // "key=value ..." as given
  std::string eval_set;   // split the BER was measured on
  double ber = 0.0;
  std::optional<double> ber_s;
  std::optional<double> ber_ns;
  int64_t steps = 0;
};

/// Trains and evaluates every cell from `base` with the cell's overrides;
/// cell run directories go under out_dir/cells. Every cell uses the base
/// seed.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells,
                                      const std::filesystem::path& out_dir,
                                      std::ostream* log = nullptr);

}  // namespace shadeadapt
