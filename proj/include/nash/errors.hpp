// Copyright (c) 2026 The nash Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>

namespace nash {

// Precondition on an argument failed (bad shape, out-of-range bits, ...).
// Plain std::invalid_argument is used for that; the types below cover the
// failure classes the CLI maps onto distinct exit codes.

/// Operation called on an object in a state that cannot satisfy it.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Configuration document failed schema validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training or search produced a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (dataset, checkpoint, IR, ...).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowering met a layer it has no IR mapping for.
class UnsupportedOp : public std::runtime_error {
 public:
  explicit UnsupportedOp(const std::string& node)
      : std::runtime_error("unsupported op at node '" + node + "'"), node_(node) {}
  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

}  // namespace nash
