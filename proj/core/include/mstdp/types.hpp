#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mstdp {

using CellId = std::int32_t;
using AdminId = std::int32_t;
using UserId = std::int64_t;

// Violated input contract (bad file, inconsistent shapes, out-of-range ids).
// CLI maps this to exit code 2.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure (divergence, non-finite loss). CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace mstdp
