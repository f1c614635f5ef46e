// Copyright 2026 The fedqs-sim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedqs {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a precondition (dimension mismatch, out-of-range argument).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Malformed user input: config files, flags, CSV content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File system and stream failures.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

#define FEDQS_REQUIRE(cond, ...)                                              \
  do {                                                                        \
    if (!(cond)) {                                                            \
      throw ::fedqs::ContractViolation(::fedqs::detail::concat(__VA_ARGS__)); \
    }                                                                         \
  } while (0)

}  // namespace fedqs
