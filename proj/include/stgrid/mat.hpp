#pragma once

#include <cstddef>
#include <vector>

#include "stgrid/errors.hpp"

namespace stgrid {

// Minimal row-major matrix. The attention math never leaves desk scale
// (dozens of rows), so plain loops beat pulling in a linear algebra
// dependency and keep the arithmetic easy to audit against the oracles.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ShapeMismatch("matmul inner dimensions disagree");
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      double* orow = out.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  return out;
}

}  // namespace stgrid
