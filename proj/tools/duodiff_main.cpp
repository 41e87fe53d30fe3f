#include <string>
#include <vector>

#include "duodiff/cli.hpp"

int main(int argc, char** argv) {
  return duodiff::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
