#include <vector>

#include "avword/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return avword::run_cli(args);
}
