#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace magfield::nn {

/// Cache-line aligned storage. Vectorized kernels peel according to the
/// address, so a fixed alignment keeps results independent of where the
/// allocator happens to place a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// (batch, channels, height, width), row-major with width fastest.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  int dim(int i) const noexcept { return i == 0 ? n : i == 1 ? c : i == 2 ? h : w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T, AlignedAllocator<T>> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t offset(int n, int c, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(int n, int c, int h, int w) { return data[offset(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data[offset(n, c, h, w)]; }
};

}  // namespace magfield::nn
