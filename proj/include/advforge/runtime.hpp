#pragma once

namespace advforge {

/// Keeps large tensor buffers on the heap between operations instead of
/// returning them to the kernel after every free. Call once at startup.
void tune_allocator();

}  // namespace advforge
