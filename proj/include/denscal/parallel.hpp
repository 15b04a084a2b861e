// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace denscal {

/// Selects the OpenMP kernel or the serial reference loop. Both produce
/// identical results; the serial path exists for testing and benchmarking.
enum class Execution { Serial, Parallel };

/// Thread count for parallel kernels: OpenMP's default, capped by the
/// DENSCAL_THREADS environment variable when set.
int thread_count();

}  // namespace denscal
