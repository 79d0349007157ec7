#include "gflow/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gflow {

Grid::Grid(int dim, int points_per_axis) : n_(dim), N_(points_per_axis) {
  if (n_ < 2 || n_ > 4)
    throw std::invalid_argument("Grid: dim must be in [2,4], got " + std::to_string(n_));
  if (N_ < 8 || N_ % 2 != 0)
    throw std::invalid_argument("Grid: points per axis must be even and >= 8, got " +
                                std::to_string(N_));

  nodes_ = 1;
  for (int a = 0; a < n_; ++a) nodes_ *= N_;
  std::int64_t s = 1;
  for (int a = n_ - 1; a >= 0; --a) {
    stride_[a] = s;
    s *= N_;
  }

  // Spectral differentiation weights for an even-N periodic grid
  // (cotangent kernel).  Only m = 1..N/2-1 is stored; the mirror weight is
  // the exact negation and the Nyquist weight vanishes.
  const double h = spacing();
  dker_.assign(N_ / 2, 0.0);
  for (int m = 1; m < N_ / 2; ++m) {
    double sgn = (m % 2 == 0) ? 1.0 : -1.0;
    dker_[m] = 0.5 * sgn / std::tan(0.5 * m * h);
  }

  // Dirichlet kernel of the per-axis mode box |m| <= band.
  const int band = dealias_band();
  bker_.assign(N_ / 2 + 1, 0.0);
  for (int j = 0; j <= N_ / 2; ++j) {
    double s = 1.0;
    for (int m = 1; m <= band; ++m) s += 2.0 * std::cos(m * j * h);
    bker_[j] = s / N_;
  }
}

void Grid::decode(std::int64_t node, int* idx) const {
  for (int a = n_ - 1; a >= 0; --a) {
    idx[a] = static_cast<int>(node % N_);
    node /= N_;
  }
}

std::int64_t Grid::encode(const int* idx) const {
  std::int64_t node = 0;
  for (int a = 0; a < n_; ++a) node = node * N_ + idx[a];
  return node;
}

}  // namespace gflow
