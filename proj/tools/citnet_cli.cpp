#include <iostream>

#include "citnet/model.hpp"

int main() {
  std::cout << "citnet " << citnet::version() << "\n";
  return 0;
}
