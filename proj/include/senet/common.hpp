// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace senet {

/// Input/spec/config problems the caller can fix. CLI maps these to exit 1.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unrecoverable runtime problems (I/O failures, diverged training). Exit 2.
struct RuntimeError : std::runtime_error {
    explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace senet
