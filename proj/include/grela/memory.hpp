#pragma once

// Allocation accounting for tensor storage and kernel scratch. Benchmarks
// read the peak to report working-set growth deterministically, independent
// of what the OS reports for RSS.

#include <cstddef>
#include <new>
#include <vector>

namespace grela::memory {

std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;
// Sets the peak watermark to the current live byte count.
void reset_peak() noexcept;

void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    note_alloc(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, TrackedAllocator<T>>;

// Peak bytes allocated on top of the live set at construction.
class PeakScope {
 public:
  PeakScope() noexcept : baseline_(current_bytes()) { reset_peak(); }
  std::size_t delta() const noexcept {
    const std::size_t p = peak_bytes();
    return p > baseline_ ? p - baseline_ : 0;
  }

 private:
  std::size_t baseline_;
};

}  // namespace grela::memory
