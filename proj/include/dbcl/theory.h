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

#ifndef DBCL_THEORY_H_
#define DBCL_THEORY_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbcl/sketch.h"

namespace dbcl::theory {

// Calls fn once for every CountSketch with d rows and s buckets (s^d bucket
// assignments times 2^d sign patterns), all equally likely under generate().
void for_each_countsketch(std::size_t d, std::size_t s,
                          const std::function<void(const sketch::SketchMatrix&)>& fn);

struct Check {
  std::string name;
  bool pass = false;
  double observed = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
};

// Enumeration checks on (d, s) in {(2,1), (3,1), (3,2)}, the V = I closed
// form, Monte Carlo agreement for d in {64, 128} and s in {d/2, d/4, d/8},
// and the slope of the error in d/s.
std::vector<Check> run_suite(std::uint64_t seed, std::size_t trials = 10000);

}  // namespace dbcl::theory

#endif  // DBCL_THEORY_H_
