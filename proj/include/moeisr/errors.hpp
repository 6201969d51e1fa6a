#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moeisr {

/// Operand extents do not fit the operation.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition on arguments or call order was violated.
class UsageError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input file. `offset()` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
   public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

/// Filesystem failure; message carries the offending path.
class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace moeisr
