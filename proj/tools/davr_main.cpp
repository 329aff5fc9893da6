#include <string>
#include <vector>

#include "davr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return davr::cli::dispatch(args);
}
