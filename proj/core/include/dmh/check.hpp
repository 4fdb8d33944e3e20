#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dmh {

// Contract violations: misuse of an API (bad shapes, out-of-range indices, ...).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Dimension/shape mismatches between tensors.
struct ShapeError : ContractError {
  explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

// A sequence exceeded a configured capacity (e.g. transformer context window).
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: unknown keys, type mismatches, inconsistent settings.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files (datasets, checkpoints).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void append_msg(std::ostringstream&) {}
template <typename T, typename... Rest>
void append_msg(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_msg(os, rest...);
}
template <typename Err, typename... Args>
[[noreturn]] void fail(const char* cond, const char* file, int line, const Args&... args) {
  std::ostringstream os;
  os << "check failed: " << cond << " (" << file << ":" << line << ")";
  if constexpr (sizeof...(args) > 0) {
    os << ": ";
    append_msg(os, args...);
  }
  throw Err(os.str());
}
}  // namespace detail

}  // namespace dmh

#define DMH_CHECK(cond, ...)                                                         \
  do {                                                                               \
    if (!(cond))                                                                     \
      ::dmh::detail::fail<::dmh::ContractError>(#cond, __FILE__, __LINE__,           \
                                                ##__VA_ARGS__);                      \
  } while (false)

#define DMH_CHECK_T(Err, cond, ...)                                                  \
  do {                                                                               \
    if (!(cond))                                                                     \
      ::dmh::detail::fail<Err>(#cond, __FILE__, __LINE__, ##__VA_ARGS__);            \
  } while (false)
