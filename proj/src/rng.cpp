#include "selip/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "selip/error.hpp"

namespace selip {

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "uniform_index over an empty range");
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - (max % range);
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return static_cast<std::size_t>(draw % range);
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform01();  // (0, 1]
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw Error(ErrorCode::IoFailure, "corrupt random engine state");
}

}  // namespace selip
