#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tta {

// Shape mismatch between tensors or invalid axis/layout.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input outside the mathematical domain of an operation (log of <= 0,
// empty log-sum-exp set, zero target-distribution entry, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API contract violation (non-scalar loss, double backward, malformed
// one-hot, batch larger than dataset, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite gradients or parameters; the owning run must abort.
struct PoisonedStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed serialized data (checkpoint, IDX, constants file). Carries the
// byte offset at which parsing failed.
struct FormatError : std::runtime_error {
  uint64_t offset;
  FormatError(const std::string& what, uint64_t at)
      : std::runtime_error(what + " (at byte offset " + std::to_string(at) + ")"),
        offset(at) {}
};

}  // namespace tta
