#include <vector>

#include "tvr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tvr::cli_dispatch(args);
}
