#pragma once

#include <string>
#include <vector>

namespace davr::cli {

// Runs one pipeline subcommand:
//   synth | train-dan | translate | train-reid | eval | export-embeddings | plot-cmc
// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int dispatch(const std::vector<std::string>& args);

}  // namespace davr::cli
