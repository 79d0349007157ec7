#pragma once
// Experiment orchestration: plain-text run configuration, CSV/record emission,
// and the five experiment drivers behind the command-line tool (symbol
// classification, adjusted-flow runs, uniqueness ladders, Garding margins,
// identity verification).  The CLI binary is a thin flag parser over these.
//
// Config format: one `key = value` per line, '#' starts a comment, keys may
// appear once except `mode`, unknown keys are rejected.  Schema:
//
//   n = 3                 dimension (2..4)
//   N = 16                grid points per axis (even, >= 8)
//   k = 1                 Laplacian power
//   a = -0.2  b = 0.3  c = 1.0
//   obstruction_shift = 0.0
//   alpha = ...  beta = ...   optional gauge override (both or neither;
//                             default: canonical weights)
//   mode = 1 0 0 : 1e-4 : 0 0 0 0 1 0 0 0 1
//                         xi (n ints) : amplitude : eta (n*n, row major,
//                         symmetric); repeatable
//   random_amplitude = 0  seeded random initial field instead of modes
//   random_band = 2       mode cap per axis for the random field
//   seed = 1
//   dt = 0                time step; 0 picks the stepper heuristic
//   dt_safety = 0.5       heuristic factor C in dt = C / stiffness
//   horizon = 0.25        integration time (flow/uniqueness)
//   snapshot_stride = 1   store every m-th step
//   perturb_amplitude = 0 uniqueness: extra amplitude on the first mode for
//                         the perturbed-pair energy run (0 -> 0.3 * amplitude)
//   variant = dt-halving  uniqueness variant: dt-halving | identical
//   outdir = gflow-out    output directory (GFLOW_OUTDIR overrides)
//   allow_non_elliptic = false
//   samples = 100         Garding draw count (the driver enforces >= 100)

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gflow/flow.hpp"

namespace gflow {

struct ModeSeed {
  std::array<int, 4> xi{0, 0, 0, 0};
  double amplitude = 0.0;
  std::vector<double> eta;  // n x n row major, symmetric
};

struct RunConfig {
  int n = 3;
  int N = 16;
  FlowParams params = FlowParams::canonical(3, 1, 0.0, 0.0, 1.0);
  std::vector<ModeSeed> modes;
  double random_amplitude = 0.0;
  int random_band = 2;
  std::uint64_t seed = 1;
  double dt = 0.0;
  double dt_safety = 0.5;
  double horizon = 0.0;
  int snapshot_stride = 1;
  double perturb_amplitude = 0.0;
  std::string variant = "dt-halving";
  std::string outdir = "gflow-out";
  bool allow_non_elliptic = false;
  int samples = 100;

  // Throws std::invalid_argument on any schema violation: bad grid, invalid
  // flow parameters, modes outside the resolvable band |xi_axis| <= N/3,
  // non-symmetric or mis-sized eta, non-positive amplitudes, both mode and
  // random initial data at once.
  void validate() const;

  Grid make_grid() const { return Grid(n, N); }
  MetricField initial_metric() const;  // flat when no perturbation is configured

  // Stable re-serialization (fixed key order, full precision) and the FNV-1a
  // hash of it; identical configs hash identically across runs.
  std::string canonical_text() const;
  std::uint64_t hash() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Output directory for a run: $GFLOW_OUTDIR when set and non-empty, else the
// configured value.
std::string resolve_outdir(const RunConfig& cfg);

// Tabular experiment result: named columns (first is always t or an index),
// rows strictly increasing in the first column, plus free-form verdict
// fields.  `csv()` is RFC-4180-style with '.' decimals and a header row;
// write() emits <dir>/record.csv and <dir>/record.txt.
struct ExperimentRecord {
  std::string name;
  std::uint64_t config_hash = 0;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::pair<std::string, std::string>> verdicts;

  void add_row(const std::vector<double>& row);
  void set_verdict(const std::string& key, const std::string& value);
  const std::string* verdict(const std::string& key) const;
  std::string csv() const;
  void write(const std::string& dir) const;
};

// ---- experiment drivers -----------------------------------------------------
// Each returns the process exit code and prints a human-readable summary.

// Prints verdict, sharp constant and witness pair.  0 = strongly elliptic,
// 2 = critical, 3 = not elliptic (1 on invalid parameters, from the caller).
int run_symbol_experiment(const FlowParams& params, std::ostream& out);

// Adjusted flow run: snapshots + manifest (write_run) and a CSV of norms,
// the energy e(t) against the flat background, the pure-flow residual (when
// at least three snapshots exist), and tracked modal amplitudes.  Returns 0;
// an instability halt is recorded as verdict "halted", not an error.
int run_flow_experiment(const RunConfig& cfg, std::ostream& out,
                        ExperimentRecord* out_record = nullptr);

// Uniqueness experiment: reconstructs the pure flow from runs at dt, dt/2,
// dt/4 (independently integrated diffeomorphisms), compares sup norms
// against the Richardson error estimate, and checks the perturbed-pair
// energy bound e(t) <= e(0) exp(Khat t) with Khat stable under dt halving.
// Returns 0 when the verdict is consistent-with-uniqueness, else 4.
int run_uniqueness_experiment(const RunConfig& cfg, std::ostream& out,
                              ExperimentRecord* out_record = nullptr);

// Garding margin experiment at the flat background: for >= 100 random
// band-limited symmetric fields u, margin(u) = <-Lu, u> - Lambda
// ||grad^{k+1} u||^2 with L the finite-difference linearization of the
// gauged operator and Lambda the sharp symbol constant.  Returns 0 when the
// worst margin is >= -1e-8, 4 when violated, 3 on non-elliptic parameters.
int run_garding_experiment(const RunConfig& cfg, std::ostream& out,
                           ExperimentRecord* out_record = nullptr);

// Jet identity suite plus the reduced-symbol identity; prints the residual
// table.  Returns 0 iff every identity that ran has residual <= 1e-9.
// Identities whose derivative budget exceeds `order` are reported as skipped
// with an "insufficient order" notice.
int run_verify_experiment(std::uint64_t seed, int order, int trials,
                          std::ostream& out);

}  // namespace gflow
