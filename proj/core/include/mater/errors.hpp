#pragma once

#include <stdexcept>
#include <string>

namespace mater {

// Bad inputs: malformed files, out-of-range values, shape mismatches.
// The CLI maps these to exit code 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Environment failures: unreadable paths, truncated payloads, NaN blowups.
// The CLI maps these to exit code 2.
struct RuntimeFailure : std::runtime_error {
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mater
