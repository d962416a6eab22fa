#pragma once

#include <stdexcept>
#include <string>

namespace dge {

// File/stream level failures: missing files, unreadable bytes, bad image data.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Violations of declared contracts: config invariants, weight-file structure,
// parameter bookkeeping.
struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dge
