#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fsra {

// Keeps large tensor buffers on the heap instead of mapping and unmapping
// them on every step. No effect outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace fsra
