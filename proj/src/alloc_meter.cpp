// Heap accounting by interposing the C allocation entry points. Every
// allocation is forwarded to glibc's internal allocator and its usable size
// is added to a live-byte counter; the high-water mark is tracked alongside.

#include <malloc.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>

#include "docmamba/bench.hpp"

extern "C" {
void* __libc_malloc(std::size_t size);
void __libc_free(void* ptr);
void* __libc_calloc(std::size_t n, std::size_t size);
void* __libc_realloc(void* ptr, std::size_t size);
void* __libc_memalign(std::size_t alignment, std::size_t size);
}

namespace {

std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};

void on_alloc(void* p) {
  if (!p) return;
  const auto n = std::int64_t(malloc_usable_size(p));
  const std::int64_t now = g_live.fetch_add(n, std::memory_order_relaxed) + n;
  std::int64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void on_free(void* p) {
  if (p) g_live.fetch_sub(std::int64_t(malloc_usable_size(p)), std::memory_order_relaxed);
}

}  // namespace

extern "C" {

void* malloc(std::size_t size) {
  void* p = __libc_malloc(size);
  on_alloc(p);
  return p;
}

void free(void* ptr) {
  on_free(ptr);
  __libc_free(ptr);
}

void* calloc(std::size_t n, std::size_t size) {
  void* p = __libc_calloc(n, size);
  on_alloc(p);
  return p;
}

void* realloc(void* ptr, std::size_t size) {
  const auto old = ptr ? std::int64_t(malloc_usable_size(ptr)) : 0;
  void* p = __libc_realloc(ptr, size);
  if (p) {
    g_live.fetch_sub(old, std::memory_order_relaxed);
    on_alloc(p);
  } else if (size == 0) {
    g_live.fetch_sub(old, std::memory_order_relaxed);
  }
  return p;
}

void* memalign(std::size_t alignment, std::size_t size) {
  void* p = __libc_memalign(alignment, size);
  on_alloc(p);
  return p;
}

void* aligned_alloc(std::size_t alignment, std::size_t size) { return memalign(alignment, size); }

int posix_memalign(void** out, std::size_t alignment, std::size_t size) {
  if (alignment < sizeof(void*) || (alignment & (alignment - 1)) != 0) return EINVAL;
  void* p = memalign(alignment, size);
  if (!p && size != 0) return ENOMEM;
  *out = p;
  return 0;
}

}  // extern "C"

namespace docmamba::alloc_meter {

bool active() {
  const std::int64_t before = g_live.load();
  void* volatile probe = std::malloc(1 << 16);
  const bool counted = g_live.load() - before >= (1 << 16);
  std::free(probe);
  return counted;
}

std::int64_t live_bytes() { return g_live.load(); }
std::int64_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_live.load()); }

}  // namespace docmamba::alloc_meter
