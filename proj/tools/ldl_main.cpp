#include <string>
#include <vector>

#include "ldl/cli.hpp"

int main(int argc, char** argv) {
  return ldl::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
