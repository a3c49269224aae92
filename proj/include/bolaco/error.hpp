// Copyright 2026 The Bolaco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BOLACO_ERROR_HPP
#define BOLACO_ERROR_HPP

#include <stdexcept>
#include <string>

namespace bolaco {

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  insufficient_samples,
  invalid_config,
  missing_input,
  io,
  numerical,
};

/// Single exception type for the library. The kind decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 2 missing/unreadable input, 3 invalid configuration, 4 numerical failure.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::missing_input:
    case ErrorKind::io:
      return 2;
    case ErrorKind::numerical:
      return 4;
    default:
      return 3;
  }
}

namespace detail {

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

}  // namespace detail
}  // namespace bolaco

#endif  // BOLACO_ERROR_HPP
