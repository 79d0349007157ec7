#pragma once
// Gauge layer: the difference tensor of two metrics, mixed covariant
// derivatives (lower slots corrected by the g-connection, upper slots by the
// h-connection), the vector fields V and Z built from the difference tensor,
// and the combined gauge vector field
//   W = (-1)^k c [ alpha (Lap_{g,h})^k V + beta (Lap_{g,h})^{k-1} Z ].

#include "gflow/curvature.hpp"
#include "gflow/tensor_field.hpp"

namespace gflow {

// A^c_{ab} = Gamma(g)^c_{ab} - Gamma(h)^c_{ab}; tuple (a,b,c); bit-exactly
// symmetric in the lower pair.  Unlike either Christoffel field alone this is
// a tensor, so it transforms cleanly under the grid's translation group.
TensorField difference_tensor(const MetricField& g, const MetricField& h);

// One covariant slot appended (last lower position), lower slots corrected by
// Gamma(g) and upper slots by Gamma(h).
TensorField mixed_covariant_derivative(const TensorField& F, const MetricField& g,
                                       const MetricField& h);

// Map Laplacian on grid fields: g-trace of two mixed covariant derivatives.
TensorField map_laplacian(const TensorField& F, const MetricField& g,
                          const MetricField& h);

// V^c = g^{ab} A^c_{ab},
// Z^c = g^{ma} g^{nb} (mixed^2 A)^c_{ab;n;m}   (outer derivative pairs with
//                                               the first lower slot),
// W = (-1)^k c [ alpha Lap^k V + beta Lap^{k-1} Z ].
// Terms with a vanishing weight are skipped; k = 0 requires beta = 0.
// gamma_g may pass a precomputed Christoffel field of g.
VectorFieldOnGrid deturck_field(const MetricField& g, const MetricField& h,
                                const FlowParams& params,
                                const TensorField* gamma_g = nullptr);

}  // namespace gflow
