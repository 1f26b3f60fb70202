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

#ifndef DBCL_PARALLEL_H_
#define DBCL_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace dbcl {

// DBCL_THREADS if set to a positive integer, else the hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers write
// results by index, so the outcome does not depend on scheduling. The first
// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dbcl

#endif  // DBCL_PARALLEL_H_
