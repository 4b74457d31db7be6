#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvde {

using Shape = std::vector<int>;

inline void check(bool cond, const char* msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    check(d > 0, "tensor extent must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

namespace detail {

// std::vector that default-initializes (leaves trivially-constructible
// elements untouched) so op outputs that are fully overwritten skip the
// zero-fill pass.
template <typename T, typename A = std::allocator<T>>
struct default_init_allocator : public A {
  template <typename U>
  struct rebind {
    using other =
        default_init_allocator<U, typename std::allocator_traits<A>::template rebind_alloc<U>>;
  };
  using A::A;
  template <typename U>
  void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    std::allocator_traits<A>::construct(static_cast<A&>(*this), ptr,
                                        std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major tensor. The last dimension is the channel/feature axis
// throughout the library; rasters are [H,W,C].
template <typename T>
struct Tensor {
  using value_type = T;
  using Storage = std::vector<T, detail::default_init_allocator<T>>;

  Shape shape;
  Storage data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  }

  // Allocation without the zero-fill pass; every element must be written.
  static Tensor uninit(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(static_cast<size_t>(shape_numel(t.shape)));
    return t;
  }

  static Tensor zeros(Shape s) {
    if constexpr (std::is_trivially_copyable_v<T>) {
      Tensor t = uninit(std::move(s));
      std::memset(t.data.data(), 0, t.data.size() * sizeof(T));
      return t;
    } else {
      return Tensor(std::move(s), T(0));
    }
  }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor from(Shape s, std::vector<T> values) {
    Tensor t = uninit(std::move(s));
    check(static_cast<int64_t>(values.size()) == t.numel(),
          "tensor data does not match shape " + shape_str(t.shape));
    std::copy(values.begin(), values.end(), t.data.begin());
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // raster accessors (rank-3)
  int height() const { return shape[0]; }
  int width() const { return shape[1]; }
  int channels() const { return shape[2]; }

  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T min_value() const {
    T m = data.empty() ? T(0) : data[0];
    for (const T& v : data) m = std::min(m, v);
    return m;
  }
  T max_value() const {
    T m = data.empty() ? T(0) : data[0];
    for (const T& v : data) m = std::max(m, v);
    return m;
  }
};

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& src) {
  Tensor<To> out;
  out.shape = src.shape;
  out.data.resize(src.data.size());
  for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
  return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch");
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace nvde
