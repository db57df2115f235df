#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace quest {

// Raised when an operation's input contract is violated (bad shapes,
// invalid parameters, missing records).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for I/O and format problems (bad magic, version mismatch, truncation).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  va_end(args2);
  return out;
}

[[noreturn]] inline void fail_contract(const std::string& msg) { throw ContractError(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_contract(msg);
}

}  // namespace quest
