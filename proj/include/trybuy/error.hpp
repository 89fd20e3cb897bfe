#pragma once

#include <stdexcept>
#include <string>

namespace trybuy {

// Bad input: missing files, schema violations, unusable data. The CLI maps
// this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal invariant broken (e.g. pipeline stages called out of order).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace trybuy
