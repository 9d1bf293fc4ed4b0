#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tsp {

// Precondition or shape contract broken by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced during a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary input; carries the byte offset where decoding failed.
class ParseError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, DimensionMismatch, BadValue };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace tsp
