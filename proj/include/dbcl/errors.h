// Copyright 2026 The DBCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DBCL_ERRORS_H_
#define DBCL_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dbcl {

// Shape or size mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A sketch specification that cannot be realized (e.g. s >= d).
class InvalidSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation not defined for the given sketch kind.
class UnsupportedKindError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Round mismatch, descriptor mismatch, or other protocol violation.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric with a zero denominator, or AUC over a single class.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed dataset file or inconsistent dataset.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run or training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Gradient-matching optimization produced a non-finite objective.
class DivergedAttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dbcl

#endif  // DBCL_ERRORS_H_
