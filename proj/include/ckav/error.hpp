#pragma once

#include <stdexcept>
#include <string>

namespace ckav {

// Data or validation failure: bad format, shape mismatch, precondition violated.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failure: cannot open, read, or write.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ckav
