#pragma once

#include <vector>

namespace parauni {

struct Prompt {
  int id = 0;
  std::vector<int> tokens;
};

}  // namespace parauni
