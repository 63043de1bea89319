#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace gknet {

// Violated precondition on an operation's inputs (shapes, ranges, odd sizes).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad or inconsistent configuration: config files, flags, missing inputs,
// checkpoint/config mismatches.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during optimisation.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gknet

#define GK_REQUIRE(cond, msg)                                          \
  do {                                                                 \
    if (!(cond)) {                                                     \
      std::ostringstream gk_require_os_;                               \
      gk_require_os_ << msg;                                           \
      throw ::gknet::ContractViolation(gk_require_os_.str());          \
    }                                                                  \
  } while (0)

#define GK_CONFIG_CHECK(cond, msg)                                     \
  do {                                                                 \
    if (!(cond)) {                                                     \
      std::ostringstream gk_config_os_;                                \
      gk_config_os_ << msg;                                            \
      throw ::gknet::ConfigError(gk_config_os_.str());                 \
    }                                                                  \
  } while (0)
