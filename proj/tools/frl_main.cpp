#include <vector>
#include <string>

#include "frl/cli.hpp"

int main(int argc, char** argv) {
  return frl::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
