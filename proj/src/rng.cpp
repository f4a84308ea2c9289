#include "parauni/rng.hpp"

#include <sstream>

#include "parauni/errors.hpp"

namespace parauni {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  std::normal_distribution<float> normal;
  std::uniform_real_distribution<float> uniform;
  is >> engine >> normal >> uniform;
  if (!is) throw FormatError("malformed RNG state", 0);
  engine_ = engine;
  normal_ = normal;
  uniform_ = uniform;
}

}  // namespace parauni
