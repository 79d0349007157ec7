#pragma once
// Time integration of the gauged flow, the companion diffeomorphism ODE,
// metric pullback, reconstruction of the ungauged flow, and the two-run
// energy monitor.
//
// The stepper splits the right side around the flat background: per Fourier
// mode the constant-coefficient linearization Sigma(xi) is applied exactly
// through its matrix exponential (integrating factor), and the remainder
// (full right side minus the linear part) advances with an explicit
// two-stage second-order Runge-Kutta rule.  The ungauged flow is never
// stepped directly -- it is reconstructed from a gauged run by co-integrating
// the diffeomorphism ODE against the stored gauge fields and pulling back.

#include <array>
#include <cstdint>
#include <complex>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gflow/curvature.hpp"
#include "gflow/tensor_field.hpp"

namespace gflow {

// ---- diffeomorphisms -------------------------------------------------------

// phi(x) = x + cell_offset * spacing + displacement(x), displacement periodic
// of type (0,1).  Valid maps keep the Jacobian nonsingular at every node.
// Whole grid-cell translations are carried as the exact integer part rather
// than folded into the displacement values: node coordinates then never pass
// through a rounded sum, which is what lets a translated map reproduce the
// base run's arithmetic (and hence its residuals) bit for bit.
struct DiffeoField {
  TensorField displacement;
  std::array<int, 4> cell_offset{0, 0, 0, 0};

  explicit DiffeoField(const Grid& grid);                    // identity map
  DiffeoField(const Grid& grid, const int* cells);           // translation map
  explicit DiffeoField(TensorField disp);                    // takes a (0,1) field

  const Grid& grid() const { return displacement.grid(); }
  void point(const int* idx, double* out) const;  // phi at one node, offset wrapped
};

// J_m^a = d_m phi^a = delta_m^a + d_m displacement^a, type (1,1),
// derivatives spectral.
TensorField diffeo_jacobian(const DiffeoField& phi);

// Minimum over nodes of det(d phi); negative or tiny means degenerate.
double min_jacobian_det(const DiffeoField& phi);

// One classical 4th-order Runge-Kutta step of  d/dt phi = -W o phi,
// evaluating W at off-grid points by trigonometric interpolation.  The
// two-field overload treats W as linear in time across the step (W0 at the
// start, W1 at the end), which is what the reconstruction loop feeds it.
DiffeoField step_diffeo(const DiffeoField& phi, const VectorFieldOnGrid& W, double dt);
DiffeoField step_diffeo(const DiffeoField& phi, const VectorFieldOnGrid& W0,
                        const VectorFieldOnGrid& W1, double dt);

// gbar_{ij}(x) = d_i phi^a d_j phi^b g_{ab}(phi(x)); derivatives spectral,
// composition by interpolation.  Rejects maps with a degenerate Jacobian.
MetricField pullback_metric(const MetricField& g, const DiffeoField& phi);

// ---- the gauged flow --------------------------------------------------------

struct FlowState {
  double t = 0.0;
  MetricField g;
  std::optional<DiffeoField> phi;  // carried along untouched by the stepper
};

struct StepperOptions {
  double dt_safety = 0.5;          // C in dt = C / max_xi rho(Sigma_sym)
  bool allow_non_elliptic = false; // proceed past the ellipticity gate
};

// Holds the per-mode multiplier table for one (grid, params) pair and a
// cache of matrix-exponential propagators keyed by dt.
class AdjustedStepper {
public:
  AdjustedStepper(const MetricField& h, const FlowParams& params,
                  const StepperOptions& opts = {});
  ~AdjustedStepper();
  AdjustedStepper(const AdjustedStepper&) = delete;
  AdjustedStepper& operator=(const AdjustedStepper&) = delete;

  const Grid& grid() const;
  const FlowParams& params() const;

  // Largest spectral radius of the symmetric part of Sigma(xi) over the
  // dealiased band, and the step heuristic dt_safety / that.
  double stiffness() const;
  double suggested_dt() const;

  VectorFieldOnGrid gauge_field(const MetricField& g) const;  // W(g, h)
  TensorField gauged_rhs(const MetricField& g) const;         // T + Lie_W g

  // One integrating-factor step.  Throws on NaN or loss of positive
  // definiteness (message carries the time).  phi is copied through.
  FlowState step(const FlowState& state, double dt) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Convenience wrapper building a one-shot stepper.
FlowState step_adjusted_flow(const FlowState& state, const MetricField& h,
                             const FlowParams& params, double dt,
                             const StepperOptions& opts = {});

// ---- runs -------------------------------------------------------------------

struct RunOptions {
  double dt = 0.0;          // <= 0 picks the stepper heuristic
  int steps = 100;          // number of time steps
  int snapshot_every = 1;   // store every m-th state (first and last always)
  StepperOptions stepper;
};

// A gauged run: snapshots of g(t) together with the gauge field W(t) at the
// same times (the reconstruction input).  halted_step >= 0 marks a run cut
// short by a positivity or finiteness failure at that step.
struct AdjustedRun {
  FlowParams params;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<MetricField> g;
  std::vector<VectorFieldOnGrid> w;
  int halted_step = -1;
  std::string halt_reason;
};

AdjustedRun run_adjusted_flow(const MetricField& g0, const MetricField& h,
                              const FlowParams& params, const RunOptions& opts);

// ---- reconstruction of the ungauged flow ------------------------------------

struct PureFlowReconstruction {
  std::vector<double> times;
  std::vector<MetricField> gbar;   // phi(t)* g(t)
  std::vector<DiffeoField> phi;
  std::vector<double> residual;    // || d/dt gbar - T(gbar) ||_{L2} per time
};

// Co-integrates  d/dt phi = -W o phi  against the stored gauge fields
// (4th-order in the substep, gauge field linear in t between snapshots),
// pulls g back, and measures how well gbar solves the ungauged flow.  The
// time derivative uses centered differences over the snapshot times, with
// one-sided second-order stencils at the two ends.  phi0 seeds the initial
// map (identity when null).
PureFlowReconstruction reconstruct_pure_flow(const AdjustedRun& run,
                                             const MetricField& h,
                                             const FlowParams& params,
                                             const DiffeoField* phi0 = nullptr);

// ---- the energy monitor -------------------------------------------------------

struct EnergySeries {
  std::vector<double> t;
  std::vector<double> e;     // ||w||^2 + ||grad^m w||^2, w = g1 - g2
  std::vector<double> khat;  // log(e/e(0)) / (t - t(0)); NaN where undefined
};

// Both sequences must share the grid and the time axis; derivatives are
// h-covariant and the pairing is the h-weighted L2 product.
EnergySeries energy_monitor(const std::vector<double>& times,
                            const std::vector<MetricField>& run1,
                            const std::vector<MetricField>& run2,
                            const MetricField& h, int m);

// ---- probes -----------------------------------------------------------------

// Complex amplitude of one Fourier mode of g - delta, reported in the
// orthonormal symmetric-matrix coordinates (dimension n(n+1)/2).
std::vector<std::complex<double>> metric_mode(const MetricField& g,
                                              const std::vector<int>& xi);

// Per-component mean removed (the zero mode), summed order-independently.
TensorField remove_mean(const TensorField& f);

// Flat L2 norm sqrt( sum_x sum_c f_c(x)^2 * cellvol ) with an accumulation
// that is invariant under node relabeling, so translated fields produce the
// bit-identical norm.
double flat_l2_norm(const TensorField& f);

// ---- run serialization --------------------------------------------------------

// Writes one snapshot pair (metric + gauge field) per stored time in the
// binary field format plus a structured-text manifest listing grid, params,
// times and file names.  Creates the directory; returns the manifest path.
std::string write_run(const std::string& dir, const AdjustedRun& run);

}  // namespace gflow
