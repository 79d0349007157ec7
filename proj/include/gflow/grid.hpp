#pragma once
// Uniform periodic grids on the flat torus [0, 2*pi)^n, plus the fixed
// convolution kernels used for spectral calculus on them.
//
// Differentiation and mode filtering are implemented as circular
// convolutions with analytically known kernels; in exact arithmetic these
// equal the usual DFT-multiplier operations.  The convolutions visit
// neighbours in a fixed symmetric order, so both operations commute
// bit-exactly with whole-grid-cell translations -- a property the tensor
// calculus built on top relies on.

#include <cstdint>
#include <vector>

namespace gflow {

inline constexpr double kTwoPi = 6.28318530717958647692528676655900577;

class Grid {
public:
  // dim in [2,4], points_per_axis even and >= 8.
  Grid(int dim, int points_per_axis);

  int dim() const { return n_; }
  int points() const { return N_; }
  double spacing() const { return kTwoPi / N_; }
  std::int64_t node_count() const { return nodes_; }

  // Largest mode magnitude kept per axis by the 2/3-rule filter.
  int dealias_band() const { return N_ / 3; }

  double coord(int idx) const { return idx * spacing(); }

  // node index <-> multi-index (row major, axis 0 slowest)
  void decode(std::int64_t node, int* idx) const;
  std::int64_t encode(const int* idx) const;
  std::int64_t axis_stride(int axis) const { return stride_[axis]; }

  // d/dx weights: out[i] = sum_m w[m] * (u[i-m] - u[i+m]), m = 1..N/2-1.
  const std::vector<double>& derivative_kernel() const { return dker_; }
  // band filter weights: out[i] = k[0] u[i]
  //   + sum_{j=1..N/2-1} k[j] (u[i-j] + u[i+j]) + k[N/2] u[i+N/2].
  const std::vector<double>& dealias_kernel() const { return bker_; }

  bool operator==(const Grid& o) const { return n_ == o.n_ && N_ == o.N_; }
  bool operator!=(const Grid& o) const { return !(*this == o); }

private:
  int n_ = 0, N_ = 0;
  std::int64_t nodes_ = 0;
  std::int64_t stride_[4] = {0, 0, 0, 0};
  std::vector<double> dker_, bker_;
};

// Signed mode frequency of DFT bin k on an N-point axis: 0..N/2, then
// negative.  bin N/2 maps to +N/2 (the Nyquist mode).
inline int bin_frequency(int k, int N) { return (k <= N / 2) ? k : k - N; }

}  // namespace gflow
