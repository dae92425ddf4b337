#pragma once

#include <doctest.h>

#include <cstdint>

#include "bisenet/bench.hpp"

namespace testalloc {

// Test binaries always link the counting allocator.
inline std::uint64_t count() {
  const auto c = bisenet::allocation_count();
  REQUIRE(c.has_value());
  return *c;
}

}  // namespace testalloc
