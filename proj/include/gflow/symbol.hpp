#pragma once

// Principal-symbol analysis of the gauged flow operator at a flat background.
//
// Everything here works on a single Fourier mode: a covector xi and a
// symmetric two-tensor direction eta, contracted with an arbitrary constant
// metric (identity unless supplied).  The quadratic form of the operator
// decomposes into five building blocks (the linearized Ricci, scalar-times-
// metric, and Hessian-of-scalar channels of the flow tensor, plus the Lie
// derivatives along the two gauge vector fields); `combined_symbol` is their
// weighted sum written in closed form, and `flat_symbol_matrix` is the full
// (not just quadratic-form) multiplier matrix acting on mode coefficients.
//
// Sign convention: flat_symbol_matrix returns Sigma(xi) such that the
// linearized gauged flow on the mode is  d/dt eta_hat = -Sigma(xi) eta_hat,
// and combined_symbol(xi, eta) = <Sigma(xi) eta, eta>.  Positive-definite
// Sigma therefore means decay of every mode.

#include <cstdint>
#include <vector>

#include "gflow/curvature.hpp"

namespace gflow {

enum class SymbolBlock { ricci, scalar_g, hess_scalar, lie_V, lie_Z };

// One evaluation point for the symbol formulas.  `metric` is an n x n SPD
// matrix in row-major order; leave it empty for the identity.  `eta` must be
// symmetric (row-major n x n).
struct SymbolInput {
  FlowParams params;
  std::vector<double> xi;
  std::vector<double> eta;
  std::vector<double> metric;
};

enum class EllipticityVerdict { strongly_elliptic, critical, not_elliptic };

const char* verdict_name(EllipticityVerdict v);

// Result of the analytic ellipticity decision.  lambda is the sharp constant
// in  <Sigma eta, eta> >= lambda |xi|^{2k+2} |eta|^2: positive exactly when
// strongly elliptic, zero at the critical coefficient, negative otherwise
// (then it is the value attained by the degenerate direction).  The witness
// pair is populated only when the verdict is not strongly_elliptic and
// satisfies eta = |xi|^2 g - xi (x) xi.
struct SymbolReport {
  EllipticityVerdict verdict = EllipticityVerdict::strongly_elliptic;
  double lambda = 0.0;
  std::vector<double> witness_xi;
  std::vector<double> witness_eta;
};

// <sigma(block) eta, eta> for one building block, all contractions taken
// with input.metric.  hess_scalar and lie_Z require k >= 1 (their k = 0
// instances would involve an inverse Laplacian).
double building_block_symbol(SymbolBlock block, const SymbolInput& input);

// Quadratic form of the gauged operator:
//   c |xi|^{2k-2} [ 1/2 |xi|^4 |eta|^2
//                   + (2 alpha + 2 beta - 1) |xi|^2 <xi xi, tr(eta eta)>
//                   + (b - beta) <xi xi, eta>^2
//                   + (1/2 - a - b - alpha) |xi|^2 tr eta <xi xi, eta>
//                   + a (|xi|^2 tr eta)^2 ],
// with a read as the shift-adjusted coefficient.  k = 0 requires b = beta
// so the singular channel carries weight zero.
double combined_symbol(const SymbolInput& input);

// Analytic ellipticity decision for the canonical gauge weights.  The
// threshold is a_eff = -1/(2(n-1)); "critical" means within 1e-9 relative
// of it.  The verdict never depends on sampling.
SymbolReport check_strong_ellipticity(const FlowParams& params);

// Independent numerical oracle: minimum of
//   combined_symbol / (c |xi|^{2k+2} |eta|^2)
// over unit xi and unit symmetric eta, from `samples` pseudorandom draws
// (fixed internal seed), a set of analytic candidate directions, and an
// eigenvalue-based local refinement.  samples must be at least 10^4.
double brute_force_min(const FlowParams& params, std::int64_t samples);

// Orthonormal basis of symmetric n x n matrices under the Frobenius inner
// product: first the n diagonal elements e_i(x)e_i, then the sqrt(2)-scaled
// off-diagonal pairs in row-major (i<j) order.
int sym_basis_dim(int n);
void sym_to_coords(int n, const double* eta, double* coords);
void coords_to_sym(int n, const double* coords, double* eta);

// Sigma(xi) as a dense sym_basis_dim x sym_basis_dim row-major matrix on the
// basis above, assembled from the closed-form mode multipliers of every
// channel (identity background metric).  Works in any dimension n >= 2 and
// is exact up to rounding.
std::vector<double> flat_symbol_matrix(const FlowParams& params,
                                       const std::vector<double>& xi);

// Same matrix obtained the slow way: centered finite differences (amplitude
// 1e-6) of the full nonlinear gauged operator applied to delta + eps eta
// cos(xi.x) on a grid sized for the mode, with a cosine projection of the
// result.  xi has integer entries, not all zero.  This is the cross-check
// that ties the discrete operators to the closed forms; it needs n in [2,4].
std::vector<double> linearize_at_flat(const FlowParams& params,
                                      const std::vector<int>& xi);

}  // namespace gflow
