#pragma once

#include <algorithm>
#include <cmath>
#include <new>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace lensless {

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NonFiniteError : Error {
  using Error::Error;
};
struct InvalidArgument : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

struct Dims {
  std::size_t rows = 1;
  std::size_t cols = 1;

  constexpr std::size_t size() const noexcept { return rows * cols; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.rows) + "x" + std::to_string(d.cols);
}

inline Dims doubled(Dims d) { return {2 * d.rows, 2 * d.cols}; }

inline void require_nonempty(Dims d) {
  if (d.rows == 0 || d.cols == 0)
    throw DimensionError("grid dims must be positive, got " + to_string(d));
}

/// 64-byte aligned storage so FFT routines can run on grid memory directly.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major 2D array. Element access is (row, col).
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims dims, T fill = T{}) : dims_(dims), values_(dims.size(), fill) {
    require_nonempty(dims);
  }
  Grid(Dims dims, const std::vector<T>& values) : dims_(dims), values_(values.begin(), values.end()) {
    require_nonempty(dims);
    if (values_.size() != dims.size())
      throw DimensionError("value count " + std::to_string(values_.size()) +
                           " does not match dims " + to_string(dims));
  }

  Dims dims() const noexcept { return dims_; }
  std::size_t rows() const noexcept { return dims_.rows; }
  std::size_t cols() const noexcept { return dims_.cols; }
  std::size_t size() const noexcept { return values_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * dims_.cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return values_[r * dims_.cols + c];
  }
  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool operator==(const Grid&) const = default;

 private:
  Dims dims_{0, 0};
  std::vector<T, AlignedAllocator<T>> values_;
};

using RealGrid = Grid<double>;
using ComplexGrid = Grid<std::complex<double>>;

inline void require_same_dims(Dims a, Dims b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
bool all_finite(const Grid<T>& g) {
  for (const auto& v : g) {
    if constexpr (std::is_same_v<T, double>) {
      if (!std::isfinite(v)) return false;
    } else {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    }
  }
  return true;
}

template <typename T>
void require_finite(const Grid<T>& g, const std::string& where) {
  if (!all_finite(g)) throw NonFiniteError("non-finite value produced by " + where);
}

// Elementwise helpers. Deliberately few; hot loops in the solver are written out.

template <typename T, typename F>
Grid<T> map(const Grid<T>& a, F&& f) {
  Grid<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename T, typename F>
Grid<T> zip(const Grid<T>& a, const Grid<T>& b, F&& f) {
  require_same_dims(a.dims(), b.dims(), "zip");
  Grid<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename T>
Grid<T> operator+(const Grid<T>& a, const Grid<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; });
}
template <typename T>
Grid<T> operator-(const Grid<T>& a, const Grid<T>& b) {
  return zip(a, b, [](T x, T y) { return x - y; });
}
template <typename T>
Grid<T> operator*(T s, const Grid<T>& a) {
  return map(a, [s](T x) { return s * x; });
}

/// Sum of a_ij * b_ij.
inline double inner_product(const RealGrid& a, const RealGrid& b) {
  require_same_dims(a.dims(), b.dims(), "inner_product");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double squared_norm(const RealGrid& a) { return inner_product(a, a); }
inline double norm(const RealGrid& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs_diff(const RealGrid& a, const RealGrid& b) {
  require_same_dims(a.dims(), b.dims(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Offset of a centered block of size `inner` inside `outer`, floor convention.
inline std::pair<std::size_t, std::size_t> center_offset(Dims outer, Dims inner) {
  return {(outer.rows - inner.rows) / 2, (outer.cols - inner.cols) / 2};
}

/// Zero-pads `g` into a `target`-sized grid, source block starting at the
/// floor-centered offset. Adjoint of crop_center.
inline RealGrid pad_center(const RealGrid& g, Dims target) {
  if (target.rows < g.rows() || target.cols < g.cols())
    throw DimensionError("pad_center: target " + to_string(target) + " smaller than source " +
                         to_string(g.dims()));
  RealGrid out(target, 0.0);
  const auto [r0, c0] = center_offset(target, g.dims());
  for (std::size_t r = 0; r < g.rows(); ++r)
    std::copy_n(&g(r, 0), g.cols(), &out(r0 + r, c0));
  return out;
}

/// Extracts the floor-centered `target` block of `g`.
inline RealGrid crop_center(const RealGrid& g, Dims target) {
  if (target.rows > g.rows() || target.cols > g.cols() || target.rows == 0 || target.cols == 0)
    throw DimensionError("crop_center: target " + to_string(target) + " not within source " +
                         to_string(g.dims()));
  RealGrid out(target);
  const auto [r0, c0] = center_offset(g.dims(), target);
  for (std::size_t r = 0; r < target.rows; ++r)
    std::copy_n(&g(r0 + r, c0), target.cols, &out(r, 0));
  return out;
}

/// Cyclic shift so that out(r, c) = g((r + dr) mod R, (c + dc) mod C).
inline RealGrid circshift_read(const RealGrid& g, std::size_t dr, std::size_t dc) {
  RealGrid out(g.dims());
  const std::size_t R = g.rows(), C = g.cols();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) = g((r + dr) % R, (c + dc) % C);
  return out;
}

/// Moves the center pixel (floor(R/2), floor(C/2)) to index (0, 0).
inline RealGrid ifftshift(const RealGrid& g) {
  return circshift_read(g, g.rows() / 2, g.cols() / 2);
}

}  // namespace lensless
