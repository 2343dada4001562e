#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace dtr {

// Dense row-major matrix; just enough linear algebra for this library.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) {
    return a[static_cast<std::size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    return a[static_cast<std::size_t>(r) * cols + c];
  }
  const double* row(int r) const {
    return a.data() + static_cast<std::size_t>(r) * cols;
  }
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
};

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double nrm2_sq(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double nrm2(const std::vector<double>& a) { return std::sqrt(nrm2_sq(a)); }

}  // namespace dtr
