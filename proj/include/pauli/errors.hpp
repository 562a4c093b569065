// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace pauli {

/// Numerical failure inside an algorithm (non-convergence, degenerate data).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A serialized file carries an unsupported schema version or is malformed.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A required input file does not exist or cannot be opened.
struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Post-selection eliminated every shot at some stage. Carries the stage
/// index (0-based) and a short diagnostic of the acceptance distribution.
struct EmptyPostselectionError : std::runtime_error {
    int stage;
    explicit EmptyPostselectionError(int stage_, const std::string& what_)
        : std::runtime_error(what_), stage(stage_) {}
};

}  // namespace pauli
