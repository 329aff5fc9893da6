#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "davr/metrics.hpp"

namespace davr {

// Renders rank-vs-match-rate curves for one or more reports into
// `<out_dir>/cmc.png` with a CSV twin `<out_dir>/cmc.csv`
// (columns: report, rank, match_rate). Labels default to report indices.
void plot_cmc(const std::vector<metrics::EvalReport>& reports,
              const std::filesystem::path& out_dir,
              const std::vector<std::string>& labels = {});

}  // namespace davr
