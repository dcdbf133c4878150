#pragma once

#include <stdexcept>
#include <string>

namespace prutf {

// Input that cannot be processed (bad dimensions, malformed files, unknown names).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Noise-scale estimate collapsed to zero; caller should supply sigma explicitly.
class DegenerateScale : public std::runtime_error {
 public:
  explicit DegenerateScale(const std::string& what) : std::runtime_error(what) {}
};

// Path event count exceeded the safety cap (5n events per run).
class CapExceeded : public std::runtime_error {
 public:
  explicit CapExceeded(const std::string& what) : std::runtime_error(what) {}
};

// Internal invariant broke (e.g. a gram block lost positive definiteness).
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace prutf
