// One line per acceptance criterion; exit status 1 if any fails.
#include <iostream>

#include "mqsim/acceptance.hpp"

int main() {
  bool all = true;
  mqsim::acceptance::run_all([&](const mqsim::acceptance::Outcome& o) {
    std::cout << mqsim::acceptance::format(o) << std::endl;
    all = all && o.pass;
  });
  return all ? 0 : 1;
}
