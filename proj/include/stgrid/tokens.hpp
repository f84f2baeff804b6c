#pragma once

#include <cstddef>
#include <vector>

#include "stgrid/errors.hpp"

namespace stgrid {

// Per-frame latent token lattice; the currency passed between the encoder,
// the attention stack and the propagation machinery.
struct TokenMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // (row, col, channel)

  TokenMap() = default;
  TokenMap(std::size_t r, std::size_t c, std::size_t d, double fill = 0.0)
      : rows(r), cols(c), dim(d), data(r * c * d, fill) {}

  double& at(std::size_t r, std::size_t c, std::size_t k) {
    return data[(r * cols + c) * dim + k];
  }
  double at(std::size_t r, std::size_t c, std::size_t k) const {
    return data[(r * cols + c) * dim + k];
  }
  double* token(std::size_t r, std::size_t c) { return data.data() + (r * cols + c) * dim; }
  const double* token(std::size_t r, std::size_t c) const {
    return data.data() + (r * cols + c) * dim;
  }

  std::size_t count() const { return rows * cols; }
  bool same_shape(const TokenMap& o) const {
    return rows == o.rows && cols == o.cols && dim == o.dim;
  }
};

// Prompt embedding stand-in. One prompt per edit; shared verbatim by every
// frame of the grid, so there is no per-frame text state.
struct TextTokens {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // (index, channel)

  TextTokens() = default;
  TextTokens(std::size_t n, std::size_t d, double fill = 0.0)
      : length(n), dim(d), data(n * d, fill) {}

  double* token(std::size_t i) { return data.data() + i * dim; }
  const double* token(std::size_t i) const { return data.data() + i * dim; }
};

}  // namespace stgrid
