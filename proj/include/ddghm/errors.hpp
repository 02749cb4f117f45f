// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ddghm {

/// Bad configuration or CLI usage. Mapped to exit code 2.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable or exhausted input data. Mapped to exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or parameters during training. Mapped to exit code 4.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ddghm
