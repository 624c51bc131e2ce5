// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace ckm {

// CKMERGE_THREADS if set, else hardware concurrency (min 1).
int default_thread_count();

// Runs fn(i) for i in [0, n) on up to n_threads workers (n_threads <= 0 picks
// the default). Work items must be independent; determinism is the caller's
// job and is normally achieved by writing into index-addressed slots. The
// first exception thrown by any worker is rethrown on the calling thread.
void parallel_for(size_t n, int n_threads, const std::function<void(size_t)> & fn);

} // namespace ckm
