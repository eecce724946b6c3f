#pragma once

namespace nicopt {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// The model allocates and frees multi-megabyte temporaries on every step,
/// which otherwise turns into page-fault churn. No-op outside glibc.
void tune_allocator();

}  // namespace nicopt
