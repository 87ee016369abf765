// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dld {

// Shape/dimension mismatch between tensor operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Violated precondition on an operation or type invariant.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Target cannot be aligned to the frame sequence (T too short).
struct CtcInfeasibleError : ContractError {
    using ContractError::ContractError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; message names the step.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dld
