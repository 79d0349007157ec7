#pragma once
// Curvature stack on periodic grids: Christoffel symbols, Ricci and scalar
// curvature, iterated rough Laplacians, the flow right-hand side of the
// family studied here, and Lie derivatives of the metric.
//
// Band management: every pointwise product chain whose total degree in the
// inputs exceeds quadratic is followed by the 2/3-rule filter.  Purely
// quadratic expressions (e.g. the Lie derivative terms) are left unfiltered,
// which keeps transport identities exact on constant data.

#include "gflow/tensor_field.hpp"

namespace gflow {

// Parameters of the flow family
//   d/dt g = (-1)^{k+1} c ( Lap^k Ric + a_eff Lap^k S g - b Lap^{k-1} Hess S ),
// plus the gauge weights (alpha, beta) used by the DeTurck vector field.
// An obstruction-mode shift enters as a -> a + shift/c.
struct FlowParams {
  int n = 3;   // spatial dimension
  int k = 1;   // Laplacian power; operator order is 2k+2
  double a = 0.0, b = 0.0, c = 1.0;
  double alpha = 0.0, beta = 0.0;  // gauge weights
  double obstruction_shift = 0.0;

  double a_eff() const { return a + obstruction_shift / c; }

  // Throws std::invalid_argument when the invariants fail:
  // n >= 2, k >= 0, c > 0, shift >= 0, and b == 0 whenever k == 0.
  // (Grids cap the dimension at 4; the symbol algebra has no such cap.)
  void validate() const;

  // Construct with the canonical gauge weights alpha = 1/2 + a_eff - b,
  // beta = b - a_eff (the choice that reduces the gauged symbol).
  static FlowParams canonical(int n, int k, double a, double b, double c,
                              double obstruction_shift = 0.0);

  // Top-order coefficients of the ambient-obstruction flow in even
  // dimension n >= 4 (n = 4 gives the Bach flow: k=1, a=-1/6, b=1/3, c=1/2).
  static FlowParams obstruction_preset(int n);
};

struct CurvaturePack {
  TensorField christoffel;  // type (2,1), symmetric in the lower pair
  TensorField ricci;        // type (2,0), symmetric
  TensorField scalar;       // type (0,0)
};

// Gamma^c_{ab} = 1/2 g^{cd} (d_a g_{db} + d_b g_{ad} - d_d g_{ab}),
// stored with component tuple (a, b, c).  Lower-pair symmetry holds
// bit-exactly.  Throws when g is singular at any node.
TensorField christoffel(const MetricField& g);

// Ric_{ij} = d_c Gamma^c_{ij} - d_i Gamma^c_{cj}
//          + Gamma^c_{cd} Gamma^d_{ij} - Gamma^c_{id} Gamma^d_{cj},
// S = g^{ij} Ric_{ij}.  The returned Ricci field is symmetrized.
CurvaturePack ricci_scalar(const MetricField& g);

// Covariant derivative with the connection of gamma; the new derivative slot
// is appended as the last lower index.  The two-connection variant corrects
// lower slots with gamma_lower and upper slots with gamma_upper; passing
// nullptr means that connection is flat (zero symbols).
TensorField covariant_derivative(const TensorField& F, const TensorField& gamma);
TensorField covariant_derivative_two(const TensorField& F,
                                     const TensorField* gamma_lower,
                                     const TensorField* gamma_upper);

// Iterated rough Laplacian (tr_g of the second covariant derivative), k >= 0;
// k = 0 returns F unchanged.  Pass a precomputed Christoffel field to avoid
// recomputation, or nullptr to derive it from g.
TensorField rough_laplacian_power(const TensorField& F, const MetricField& g, int k,
                                  const TensorField* gamma = nullptr);

// Flow right-hand side
//   (-1)^{k+1} c ( Lap^k Ric + a_eff Lap^k S g - b Lap^{k-1} Hess S ).
// Terms with a vanishing coefficient are skipped outright, so e.g.
// (k=0, a=0, b=0, c=2) reproduces -2 Ric bit-identically.
TensorField ansatz_tensor(const MetricField& g, const FlowParams& params);

// (Lie_W g)_{ij} = W^m d_m g_{ij} + g_{mj} d_i W^m + g_{im} d_j W^m,
// symmetric bit-exactly.
TensorField lie_derivative(const VectorFieldOnGrid& W, const MetricField& g);

}  // namespace gflow
