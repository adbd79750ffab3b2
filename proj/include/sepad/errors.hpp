#pragma once

#include <stdexcept>
#include <string>

namespace sepad {

// One error type for the whole library. The kind drives CLI exit codes and
// lets tests distinguish failure classes without string matching.
struct Error : std::runtime_error {
  enum class Kind {
    shape,      // dimension mismatch between arrays
    format,     // malformed file contents (bad magic, bad field)
    version,    // unsupported format version
    truncated,  // file ended early
    io,         // filesystem failure
    config,     // invalid configuration value or usage
    numeric,    // non-finite value where finiteness is required
    data,       // dataset inconsistency (missing split, orphan mask, ...)
  };

  Kind kind;

  Error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void throw_shape(const std::string& msg) {
  throw Error(Error::Kind::shape, msg);
}

}  // namespace sepad
