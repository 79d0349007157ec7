#pragma once
// Dense tensor fields on a periodic grid and the spectral calculus on them:
// exact-kernel differentiation, 2/3-rule mode filtering, L2 pairing,
// trigonometric interpolation, snapshot serialization and seeded random
// band-limited data.
//
// Index conventions used throughout the library:
//   * a field of type (p,q) has p lower slots followed by q upper slots;
//   * components are stored component-major, value = data[comp][node],
//     with the component tuple flattened row-major (lower slots first);
//   * differentiation helpers append the new derivative slot as the LAST
//     LOWER index (position p).

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "gflow/grid.hpp"

namespace gflow {

class TensorField {
public:
  TensorField() = default;
  TensorField(const Grid& grid, int p, int q);

  const Grid& grid() const { return grid_; }
  int lower() const { return p_; }
  int upper() const { return q_; }
  int rank() const { return p_ + q_; }
  int comps() const { return comps_; }
  std::int64_t nodes() const { return grid_.node_count(); }

  double* comp_data(int comp) { return values_.data() + std::int64_t(comp) * nodes(); }
  const double* comp_data(int comp) const {
    return values_.data() + std::int64_t(comp) * nodes();
  }
  double& at(int comp, std::int64_t node) { return comp_data(comp)[node]; }
  double at(int comp, std::int64_t node) const { return comp_data(comp)[node]; }

  // component tuple <-> flat component index (row major, lower slots first)
  void comp_decode(int comp, int* t) const;
  int comp_encode(const int* t) const;

  std::vector<double>& raw() { return values_; }
  const std::vector<double>& raw() const { return values_; }

private:
  Grid grid_{2, 8};
  int p_ = 0, q_ = 0, comps_ = 1;
  std::vector<double> values_;
};

using MetricField = TensorField;        // type (2,0), symmetric positive definite
using VectorFieldOnGrid = TensorField;  // type (0,1)

// ---- algebra -------------------------------------------------------------

TensorField add(const TensorField& a, const TensorField& b);
TensorField sub(const TensorField& a, const TensorField& b);
TensorField scale(const TensorField& a, double s);
void axpy(TensorField& acc, double s, const TensorField& x);  // acc += s*x

// ---- spectral calculus ---------------------------------------------------

// Componentwise partial derivative along one axis (exact cotangent kernel;
// the Nyquist mode is annihilated, as usual for odd-order derivatives).
TensorField spectral_derivative(const TensorField& f, int axis);

// All partials at once, appended as the last lower slot:
// (result)_{lowers, m}^{uppers} = d_m f_{lowers}^{uppers}.
TensorField partials_lower(const TensorField& f);

// 2/3-rule mode filter (zeroes every mode with any |m_axis| > N/3).
TensorField dealias(const TensorField& f);

// L2 inner product with metric pairing: lower slots contract with h^{-1},
// upper slots with h, nodewise volume weight sqrt(det h) * spacing^n.
double l2_inner(const TensorField& f, const TensorField& g, const MetricField& h);

double sup_norm(const TensorField& f);  // max |component value|

// ---- interpolation -------------------------------------------------------

// Trigonometric interpolation of all components at one point.  At a point
// that coincides with a grid node the stored values are returned bit-exactly.
std::vector<double> interpolate(const TensorField& f, const double* point);

// Reusable interpolant; band < 0 keeps every mode, otherwise only modes with
// |m_axis| <= band enter the synthesis.
class TrigInterpolant {
public:
  TrigInterpolant(const TensorField& f, int band = -1);
  void eval(const double* point, double* out) const;  // out[comps()]
  int comps() const { return comps_; }

private:
  int n_ = 0, N_ = 0, band_ = 0, comps_ = 0;
  std::vector<std::array<int, 4>> modes_;         // active bin frequencies
  std::vector<std::complex<double>> coef_;        // [bin * comps + comp]
};

// ---- metric helpers --------------------------------------------------------

MetricField flat_metric(const Grid& grid);

// Nodewise matrix inverse, result of type (0,2).  Throws (with the offending
// node's multi-index) on a singular node.  apply_mask runs the 2/3 filter on
// the result, which is rational in g and therefore broadband.
TensorField inverse_metric(const MetricField& g, bool apply_mask = true);

bool is_spd(const MetricField& g, std::int64_t* bad_node = nullptr);
void require_spd(const MetricField& g, const char* what);
bool is_identity_metric(const MetricField& h);

// ---- serialization ---------------------------------------------------------

// Binary snapshot: magic "GFLO", u32 version, u32 n,N,p,q, float64 values
// node-major (grid multi-index row-major, then component tuple).
void write_snapshot(const std::string& path, const TensorField& f);
TensorField read_snapshot(const std::string& path);

// ---- misc -------------------------------------------------------------------

// Cyclic translation by whole cells: result(x + cells*h) = f(x).
TensorField shift_field(const TensorField& f, const int* cells);

// Seeded random real field with modes confined to |m_axis| <= band, scaled to
// the requested sup amplitude.  symmetric_pair enforces f_{ij} = f_{ji} for
// type (2,0) fields.
TensorField random_band_limited(const Grid& grid, int p, int q, int band,
                                std::uint64_t seed, double amplitude,
                                bool symmetric_pair = false);

// delta + sum_i amp_i * eta_i * cos(xi_i . x), assembled from exact primitives.
MetricField perturbed_flat_metric(const Grid& grid,
                                  const std::vector<std::array<int, 4>>& xis,
                                  const std::vector<std::vector<double>>& etas,
                                  const std::vector<double>& amps);

}  // namespace gflow
