#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pmq {

// Dense row-major matrix. For signal data rows are timestamps and columns
// are leads/channels; for batched vectors rows are samples.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Matrix() = default;
  Matrix(int r, int c, T fill = T(0)) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  void resize(int r, int c) {
    rows = r;
    cols = c;
    v.assign(static_cast<size_t>(r) * c, T(0));
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

using MatF = Matrix<float>;
using MatD = Matrix<double>;

template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  Matrix<To> out(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<To>(m.v[i]);
  return out;
}

}  // namespace pmq
