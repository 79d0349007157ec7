#pragma once
// Pointwise tensor calculus on truncated Taylor jets: scalar jets, jets of
// maps between coordinate patches, and jets of tensors whose slots may live
// over the source patch, the target patch, or a map in between.  The module
// verifies the mixed/map covariant-derivative and pullback identities exactly
// at a point, with every consumed derivative accounted for by an order
// budget.
//
// Conventions.  Jets are based at the origin of their patch and maps fix the
// origin.  Coefficients are polynomial (Taylor) coefficients in graded
// layout: f(x) = sum_e c_e x^e over multi-indices with |e| <= order.
// Differentiation lowers the order budget by one and throws once the budget
// is exhausted; products and compositions carry the weakest budget of their
// inputs.  Within that budget all operations are exact truncations, so
// identities that hold for polynomial data hold here up to roundoff.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gflow {

// ---------------------------------------------------------------------------
// Scalar jets

struct JetScalar {
  int vars = 0;    // number of variables, 2..4
  int order = -1;  // trusted total degree
  std::vector<double> coeff;  // graded layout: degree 0, then degree 1, ...
};

// Number of monomials of total degree <= order in `vars` variables.
int jet_coefficient_count(int vars, int order);

JetScalar jet_constant(int vars, int order, double value);
JetScalar jet_coordinate(int vars, int order, int axis);

// Coefficient access by exponent vector (size = vars, |e| <= order).
double jet_coefficient(const JetScalar& f, const std::vector<int>& exponents);
void jet_set_coefficient(JetScalar& f, const std::vector<int>& exponents,
                         double value);

// Value at the basepoint (the degree-zero coefficient).
double jet_value(const JetScalar& f);

// Polynomial evaluation of the stored truncation at a point.
double jet_eval(const JetScalar& f, const std::vector<double>& x);

JetScalar jet_add(const JetScalar& a, const JetScalar& b);
JetScalar jet_sub(const JetScalar& a, const JetScalar& b);
JetScalar jet_scale(const JetScalar& a, double s);
JetScalar jet_mul(const JetScalar& a, const JetScalar& b);

// Copy with a lowered budget (never raises one).
JetScalar jet_truncate(const JetScalar& a, int order);

// d/dx_axis; order drops by one, throws when the budget is exhausted.
JetScalar jet_partial(const JetScalar& a, int axis);

// 1/f for f(0) != 0, and exp(f); both keep the order budget.
JetScalar jet_reciprocal(const JetScalar& f);
JetScalar jet_exp(const JetScalar& f);

// Random jet with coefficients uniform in [-amplitude, amplitude] * 2^-d at
// degree d.  With `dyadic` set, coefficients are snapped to the lattice of
// multiples of 2^-12 scaled by the same power of two, so that downstream
// products and sums stay exactly representable and exactness claims can be
// asserted bitwise.
JetScalar jet_random(int vars, int order, std::mt19937_64& rng,
                     double amplitude, bool dyadic = false);

// ---------------------------------------------------------------------------
// Jets of maps

// Polynomial map germ phi: source patch -> target patch with phi(0) = 0 and
// an invertible linear part.  comp[alpha] is the scalar jet of phi^alpha in
// the source variables.
struct JetMap {
  int n_src = 0;
  int n_dst = 0;
  int order = -1;
  std::vector<JetScalar> comp;
};

// Validating constructor; throws unless the components share (vars, order),
// vanish at the origin, and the Jacobian at the origin is invertible.
JetMap jet_map(int n_src, int n_dst, std::vector<JetScalar> comp);

JetMap jet_identity_map(int n, int order);

// Identity plus a random perturbation: the linear part is I + O(amplitude)
// entrywise and higher-degree coefficients decay like 2^-d.
JetMap jet_random_map(int n, int order, std::mt19937_64& rng, double amplitude,
                      bool dyadic = false);

// Composition g(f(x)) of map jets; requires f.n_dst == g.n_src.
JetMap jet_map_compose(const JetMap& g, const JetMap& f);

// Compositional inverse psi with psi(phi(x)) = x to the shared order;
// requires n_src == n_dst.
JetMap jet_map_inverse(const JetMap& phi);

// ---------------------------------------------------------------------------
// Jets of tensors

// Slot flavour: which patch the index ranges over and which connection
// corrects it under the map covariant derivative.  Source slots range over
// n_src and use the source metric's symbols; target slots range over n_dst
// and use the target symbols composed with the map, weighted by d(phi).
enum class JetSlot { lower_src, upper_src, lower_dst, upper_dst };

// Tensor whose components are scalar jets in `vars` variables (n_src when the
// tensor lives over the source patch or over a map, n_dst when it lives on
// the target patch).  Components are stored row-major over the slot tuple.
struct JetTensor {
  int n_src = 0;
  int n_dst = 0;
  int vars = 0;
  int order = -1;
  std::vector<JetSlot> slots;
  std::vector<JetScalar> comp;
};

JetTensor jet_tensor_zero(int n_src, int n_dst, int vars,
                          std::vector<JetSlot> slots, int order);

// Index range of one slot and the total component count.
int jet_slot_range(const JetTensor& t, int slot);
int jet_component_count(const JetTensor& t);

// Row-major component accessors; idx must list one index per slot.
JetScalar& jet_comp(JetTensor& t, const std::vector<int>& idx);
const JetScalar& jet_comp(const JetTensor& t, const std::vector<int>& idx);

JetTensor jet_tensor_add(const JetTensor& a, const JetTensor& b);
JetTensor jet_tensor_sub(const JetTensor& a, const JetTensor& b);
JetTensor jet_tensor_scale(const JetTensor& a, double s);

// Same data under different slot flavours; every slot must keep its index
// range and variance (lower stays lower, upper stays upper).
JetTensor jet_retag(const JetTensor& t, std::vector<JetSlot> slots);

// Largest |coefficient| over all components, and the largest coefficient
// mismatch between two tensors of equal shape, compared up to the weaker of
// the two order budgets.
double jet_tensor_sup(const JetTensor& t);
double jet_tensor_max_difference(const JetTensor& a, const JetTensor& b);

// ---------------------------------------------------------------------------
// Metrics

// Constant identity metric jet; both slots carry `kind` (a lower flavour).
JetTensor jet_flat_metric(int n, int order, JetSlot kind = JetSlot::lower_src);

// delta + symmetric perturbation, positive definite at the origin by
// diagonal dominance; symmetry of the component jets holds bitwise.
JetTensor jet_random_metric(int n, int order, std::mt19937_64& rng,
                            double amplitude, JetSlot kind = JetSlot::lower_src,
                            bool dyadic = false);

bool jet_metric_spd_at_origin(const JetTensor& g);

// Inverse metric jet (two upper slots of the same family); computed from the
// inverse at the origin by a terminating geometric series.
JetTensor jet_metric_inverse(const JetTensor& g);

// Christoffel symbols Gamma^c_{ab} of a metric jet, component tuple
// (a, b, c) with the upper slot last; symmetric in (a, b) bitwise.  Consumes
// one derivative.
JetTensor jet_christoffel(const JetTensor& g);

// Gamma^g - Gamma^h for two metrics on one patch, tagged (lower_src,
// lower_src, upper_dst) for use with the mixed covariant derivative.
JetTensor jet_difference_tensor(const JetTensor& g, const JetTensor& h);

// ---------------------------------------------------------------------------
// Transport along a map

// F with every component composed with phi; slot flavours are kept.  Requires
// F.vars == phi.n_dst (a tensor living on the target patch).
JetTensor jet_compose(const JetTensor& F, const JetMap& phi);

// Pullback: components are composed with phi, then every lower slot is
// contracted with d(phi) and becomes lower_src; upper_dst slots ride along by
// composition; upper_src slots are rejected.
JetTensor jet_pullback(const JetTensor& F, const JetMap& phi);

// d(phi) as a tensor over the map, slots (lower_src, upper_dst), component
// tuple (i, alpha) = d phi^alpha / dx^i.  Consumes one derivative of phi.
JetTensor jet_differential(const JetMap& phi);

// Map covariant derivative of a tensor over phi.  The new derivative slot is
// appended last, flavoured lower_src.  Source slots are corrected with the
// symbols of g_src, target slots with d(phi) times the symbols of h_dst
// composed with phi; lower slots enter with a minus sign, upper slots with a
// plus.  With phi = id and g_src = h_dst this is the usual covariant
// derivative.
JetTensor jet_map_covariant_derivative(const JetTensor& F, const JetMap& phi,
                                       const JetTensor& g_src,
                                       const JetTensor& h_dst);

// Single-connection covariant derivative: every slot, whatever its family
// tag, is corrected with the symbols of g.
JetTensor jet_covariant_derivative(const JetTensor& F, const JetTensor& g);

// Kronecker contraction of one upper and one lower slot of the same family.
JetTensor jet_contract(const JetTensor& F, int slot_a, int slot_b);

// Metric contraction of two like-variance slots of the same family with a
// two-slot jet tensor of the opposite variance (inverse metric for a lower
// pair, metric for an upper pair).  G must live in the same variables as F.
JetTensor jet_metric_trace(const JetTensor& F, int slot_a, int slot_b,
                           const JetTensor& G);

// tr_{g_src} of the second map covariant derivative, for tensors over the
// map and for the map itself (in which case the derivative of phi is the
// first step and the result is a vector over the map).
JetTensor jet_map_laplacian(const JetTensor& F, const JetMap& phi,
                            const JetTensor& g_src, const JetTensor& h_dst);
JetTensor jet_map_laplacian(const JetMap& phi, const JetTensor& g_src,
                            const JetTensor& h_dst);

// ---------------------------------------------------------------------------
// Identity suite

struct JetIdentityLine {
  std::string name;
  int required_order = 0;  // weakest budget that lets the pipeline run
  bool ran = false;
  int trials = 0;
  double max_residual = 0.0;
  std::string note;
};

struct JetIdentityReport {
  std::uint64_t seed = 0;
  int order = 0;
  int trials = 0;
  std::vector<JetIdentityLine> lines;
};

// Runs the transport-identity families on random jet data: compatibility of
// the map derivative with both metrics, the split of the single-metric
// derivative into the mixed one plus difference-tensor corrections, pullback
// naturality of traces, derivatives and Laplacians, the differential/vector
// pullback relations together with their first iterated instance, the
// insensitivity of the second-order vector defect to top-degree map
// coefficients, commutator bookkeeping, and an exact-zero run on flat
// constant metrics with a linear map.  Identities whose derivative budget
// exceeds `order` are reported with ran = false and an explanatory note.
// Trials alternate between data of full polynomial degree and data truncated
// at quadratic degree; patch dimensions alternate between 2 and 3.
JetIdentityReport jet_verify_identities(std::uint64_t seed, int order,
                                        int trials);

}  // namespace gflow
