#include <string>
#include <vector>

#include "attnpain/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return attnpain::harness::run_cli(args);
}
