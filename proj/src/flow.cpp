#include "gflow/flow.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "gflow/deturck.hpp"
#include "gflow/symbol.hpp"

namespace gflow {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("flow: " + msg);
}
[[noreturn]] void halt(const std::string& msg) {
  throw std::runtime_error("flow: " + msg);
}

bool all_finite(const TensorField& f) {
  for (double v : f.raw())
    if (!std::isfinite(v)) return false;
  return true;
}

// Order-independent compensated sum: the terms are first brought into a total
// order on their bit patterns, so any permutation of the same multiset is
// accumulated in the identical sequence.  This is what makes norms of
// translated fields come out bit-identical.
double canonical_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end(), [](double x, double y) {
    std::uint64_t a, b;
    std::memcpy(&a, &x, sizeof a);
    std::memcpy(&b, &y, sizeof b);
    const std::uint64_t sign = std::uint64_t(1) << 63;
    a = (a & sign) ? ~a : (a | sign);
    b = (b & sign) ? ~b : (b | sign);
    return a < b;
  });
  double s = 0.0, comp = 0.0;
  for (double x : terms) {
    const double t = s + x;
    comp += (std::abs(s) >= std::abs(x)) ? ((s - t) + x) : ((x - t) + s);
    s = t;
  }
  return s + comp;
}

double det_small(const double* m, int n) {
  switch (n) {
    case 1:
      return m[0];
    case 2:
      return m[0] * m[3] - m[1] * m[2];
    case 3:
      return m[0] * (m[4] * m[8] - m[5] * m[7]) -
             m[1] * (m[3] * m[8] - m[5] * m[6]) +
             m[2] * (m[3] * m[7] - m[4] * m[6]);
    default: {  // n == 4, expansion along the first row
      double d = 0.0;
      for (int c = 0; c < 4; ++c) {
        double sub[9];
        int t = 0;
        for (int r = 1; r < 4; ++r)
          for (int cc = 0; cc < 4; ++cc)
            if (cc != c) sub[t++] = m[r * 4 + cc];
        const double cof = det_small(sub, 3);
        d += ((c % 2) ? -1.0 : 1.0) * m[c] * cof;
      }
      return d;
    }
  }
}

// Interpolation with a node fast path that tolerates coordinate roundoff:
// points within 1e-9 cells of a node return the stored values directly, so a
// whole-cell translation reproduces stored data bit-exactly even though
// i*h + c*h need not equal (i+c)*h in floating point.  Off-node points fall
// through to full trigonometric synthesis.
class FieldSampler {
public:
  explicit FieldSampler(const TensorField& f)
      : f_(&f),
        interp_(f),
        n_(f.grid().dim()),
        N_(f.grid().points()),
        nodes_per_rad_(double(f.grid().points()) / kTwoPi) {}

  void eval(const double* point, double* out) const {
    int idx[4];
    bool on_node = true;
    for (int a = 0; a < n_ && on_node; ++a) {
      const double r = point[a] * nodes_per_rad_;
      const double j = std::nearbyint(r);
      if (std::abs(r - j) <= 1e-9) {
        long jj = long(j) % N_;
        if (jj < 0) jj += N_;
        idx[a] = int(jj);
      } else {
        on_node = false;
      }
    }
    if (on_node) {
      const std::int64_t node = f_->grid().encode(idx);
      for (int c = 0; c < f_->comps(); ++c) out[c] = f_->at(c, node);
      return;
    }
    interp_.eval(point, out);
  }

private:
  const TensorField* f_;
  TrigInterpolant interp_;
  int n_, N_;
  double nodes_per_rad_;
};

using Cplx = std::complex<double>;

void fft_in_place(const Grid& grid, std::vector<Cplx>& buf, int sign) {
  int dims[4];
  for (int a = 0; a < grid.dim(); ++a) dims[a] = grid.points();
  fftw_complex* p = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan = fftw_plan_dft(grid.dim(), dims, p, p, sign, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

void check_metric_shape(const MetricField& g, const char* what) {
  if (g.lower() != 2 || g.upper() != 0)
    fail(std::string(what) + ": expected a (2,0) field");
}

void check_vector_shape(const VectorFieldOnGrid& w, const char* what) {
  if (w.lower() != 0 || w.upper() != 1)
    fail(std::string(what) + ": expected a (0,1) field");
}

void check_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (a.dim() != b.dim() || a.points() != b.points())
    fail(std::string(what) + ": operands live on different grids");
}

std::string time_tag(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", t);
  return buf;
}

}  // namespace

// ---- diffeomorphisms --------------------------------------------------------

DiffeoField::DiffeoField(const Grid& grid) : displacement(grid, 0, 1) {}

DiffeoField::DiffeoField(const Grid& grid, const int* cells)
    : displacement(grid, 0, 1) {
  for (int a = 0; a < grid.dim(); ++a) cell_offset[a] = cells[a];
}

DiffeoField::DiffeoField(TensorField disp) : displacement(std::move(disp)) {
  check_vector_shape(displacement, "DiffeoField");
  if (!all_finite(displacement)) fail("DiffeoField: non-finite displacement");
}

void DiffeoField::point(const int* idx, double* out) const {
  const Grid& g = displacement.grid();
  const std::int64_t node = g.encode(idx);
  for (int a = 0; a < g.dim(); ++a) {
    int j = (idx[a] + cell_offset[a]) % g.points();
    if (j < 0) j += g.points();
    out[a] = g.coord(j) + displacement.at(a, node);
  }
}

TensorField diffeo_jacobian(const DiffeoField& phi) {
  const Grid& grid = phi.grid();
  const int n = grid.dim();
  TensorField J = partials_lower(phi.displacement);  // (1,1), tuple (m, a)
  for (int m = 0; m < n; ++m) {
    double* diag = J.comp_data(m * n + m);
    for (std::int64_t x = 0; x < grid.node_count(); ++x) diag[x] += 1.0;
  }
  return J;
}

double min_jacobian_det(const DiffeoField& phi) {
  const Grid& grid = phi.grid();
  const int n = grid.dim();
  TensorField J = diffeo_jacobian(phi);
  double best = std::numeric_limits<double>::infinity();
  double mat[16];
  for (std::int64_t x = 0; x < grid.node_count(); ++x) {
    for (int m = 0; m < n; ++m)
      for (int a = 0; a < n; ++a) mat[m * n + a] = J.at(m * n + a, x);
    best = std::min(best, det_small(mat, n));
  }
  return best;
}

DiffeoField step_diffeo(const DiffeoField& phi, const VectorFieldOnGrid& W,
                        double dt) {
  return step_diffeo(phi, W, W, dt);
}

DiffeoField step_diffeo(const DiffeoField& phi, const VectorFieldOnGrid& W0,
                        const VectorFieldOnGrid& W1, double dt) {
  const Grid& grid = phi.grid();
  const int n = grid.dim();
  check_vector_shape(W0, "step_diffeo");
  check_vector_shape(W1, "step_diffeo");
  check_same_grid(grid, W0.grid(), "step_diffeo");
  check_same_grid(grid, W1.grid(), "step_diffeo");
  if (!(dt > 0.0) || !std::isfinite(dt)) fail("step_diffeo: dt must be positive");
  if (!all_finite(W0) || !all_finite(W1)) fail("step_diffeo: non-finite gauge field");

  // A vanishing field moves nothing; skipping the synthesis keeps the map
  // bit-identical instead of merely within roundoff.
  if (sup_norm(W0) == 0.0 && sup_norm(W1) == 0.0) return phi;

  VectorFieldOnGrid Wmid = scale(add(W0, W1), 0.5);
  FieldSampler s0(W0), sm(Wmid), s1(W1);

  DiffeoField out = phi;
  int idx[4];
  double y0[4], y[4], k1[4], k2[4], k3[4], k4[4];
  for (std::int64_t node = 0; node < grid.node_count(); ++node) {
    grid.decode(node, idx);
    phi.point(idx, y0);

    s0.eval(y0, k1);
    for (int a = 0; a < n; ++a) y[a] = y0[a] - 0.5 * dt * k1[a];
    sm.eval(y, k2);
    for (int a = 0; a < n; ++a) y[a] = y0[a] - 0.5 * dt * k2[a];
    sm.eval(y, k3);
    for (int a = 0; a < n; ++a) y[a] = y0[a] - dt * k3[a];
    s1.eval(y, k4);

    for (int a = 0; a < n; ++a) {
      const double incr = k1[a] + 2.0 * (k2[a] + k3[a]) + k4[a];
      out.displacement.at(a, node) -= (dt / 6.0) * incr;
    }
  }

  if (!all_finite(out.displacement)) halt("step_diffeo: non-finite map");
  const double d = min_jacobian_det(out);
  if (!(d > 1e-12))
    halt("step_diffeo: Jacobian degenerate (min det " + std::to_string(d) + ")");
  return out;
}

MetricField pullback_metric(const MetricField& g, const DiffeoField& phi) {
  const Grid& grid = phi.grid();
  const int n = grid.dim();
  check_metric_shape(g, "pullback_metric");
  check_same_grid(grid, g.grid(), "pullback_metric");
  if (!all_finite(g)) fail("pullback_metric: non-finite metric");

  TensorField J = diffeo_jacobian(phi);
  {
    double mat[16];
    for (std::int64_t x = 0; x < grid.node_count(); ++x) {
      for (int m = 0; m < n; ++m)
        for (int a = 0; a < n; ++a) mat[m * n + a] = J.at(m * n + a, x);
      if (!(det_small(mat, n) > 1e-10))
        fail("pullback_metric: degenerate Jacobian");
    }
  }

  FieldSampler sampler(g);
  MetricField out(grid, 2, 0);
  int idx[4];
  double pt[4], gv[16];
  for (std::int64_t node = 0; node < grid.node_count(); ++node) {
    grid.decode(node, idx);
    phi.point(idx, pt);
    sampler.eval(pt, gv);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double acc = 0.0;
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            acc += J.at(i * n + a, node) * J.at(j * n + b, node) * gv[a * n + b];
        out.at(i * n + j, node) = acc;
        if (j != i) out.at(j * n + i, node) = acc;
      }
  }
  return out;
}

// ---- the gauged flow ----------------------------------------------------------

struct AdjustedStepper::Impl {
  MetricField h;
  FlowParams params;
  StepperOptions opts;
  Grid grid{2, 8};
  int n = 0, S = 0, tri = 0, band = 0;
  std::int64_t nodes = 0;
  bool flat_h = false;
  double rho_max = 0.0;
  std::vector<double> sigma;  // per bin: S x S row-major; zeros at the DC bin
  std::vector<std::array<int, 2>> tri_slots;
  mutable std::map<double, std::vector<double>> propagators;

  // ---- mode-space plumbing: symmetric fields <-> per-bin coordinates ----

  // DFT of every independent component, then the orthonormal change of basis
  // per bin.  Output layout: coords[bin * S + s].
  std::vector<Cplx> to_coords(const TensorField& f, bool subtract_flat) const {
    std::vector<std::vector<Cplx>> bufs(tri);
    for (int c = 0; c < tri; ++c) {
      const int i = tri_slots[c][0], j = tri_slots[c][1];
      const double* src = f.comp_data(i * n + j);
      bufs[c].resize(nodes);
      const double off = (subtract_flat && i == j) ? 1.0 : 0.0;
      for (std::int64_t x = 0; x < nodes; ++x) bufs[c][x] = Cplx(src[x] - off, 0.0);
      fft_in_place(grid, bufs[c], FFTW_FORWARD);
    }
    std::vector<Cplx> out(nodes * std::int64_t(S));
    std::vector<double> mre(n * n), mim(n * n), cre(S), cim(S);
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      for (int c = 0; c < tri; ++c) {
        const int i = tri_slots[c][0], j = tri_slots[c][1];
        const Cplx z = bufs[c][bin];
        mre[i * n + j] = mre[j * n + i] = z.real();
        mim[i * n + j] = mim[j * n + i] = z.imag();
      }
      sym_to_coords(n, mre.data(), cre.data());
      sym_to_coords(n, mim.data(), cim.data());
      for (int s = 0; s < S; ++s) out[bin * S + s] = Cplx(cre[s], cim[s]);
    }
    return out;
  }

  MetricField from_coords_metric(const std::vector<Cplx>& coords) const {
    std::vector<std::vector<Cplx>> bufs(tri, std::vector<Cplx>(nodes));
    std::vector<double> mre(n * n), mim(n * n), cre(S), cim(S);
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      for (int s = 0; s < S; ++s) {
        cre[s] = coords[bin * S + s].real();
        cim[s] = coords[bin * S + s].imag();
      }
      coords_to_sym(n, cre.data(), mre.data());
      coords_to_sym(n, cim.data(), mim.data());
      for (int c = 0; c < tri; ++c) {
        const int i = tri_slots[c][0], j = tri_slots[c][1];
        bufs[c][bin] = Cplx(mre[i * n + j], mim[i * n + j]);
      }
    }
    MetricField out(grid, 2, 0);
    const double inv = 1.0 / double(nodes);
    for (int c = 0; c < tri; ++c) {
      fft_in_place(grid, bufs[c], FFTW_BACKWARD);
      const int i = tri_slots[c][0], j = tri_slots[c][1];
      double* dst = out.comp_data(i * n + j);
      const double off = (i == j) ? 1.0 : 0.0;
      for (std::int64_t x = 0; x < nodes; ++x)
        dst[x] = off + bufs[c][x].real() * inv;
      if (i != j)
        std::memcpy(out.comp_data(j * n + i), dst, sizeof(double) * nodes);
    }
    return out;
  }

  void zero_outside_band(std::vector<Cplx>& coords) const {
    int idx[4];
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      grid.decode(bin, idx);
      bool keep = true;
      for (int a = 0; a < n; ++a)
        if (std::abs(bin_frequency(idx[a], grid.points())) > band) keep = false;
      if (!keep)
        for (int s = 0; s < S; ++s) coords[bin * S + s] = Cplx(0.0, 0.0);
    }
  }

  // acc += scale * Sigma(bin) * w, bin by bin.
  void add_sigma_times(const std::vector<Cplx>& w, double scale,
                       std::vector<Cplx>& acc) const {
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      const double* M = sigma.data() + bin * S * S;
      const Cplx* wv = w.data() + bin * S;
      Cplx* av = acc.data() + bin * S;
      for (int r = 0; r < S; ++r) {
        Cplx dot(0.0, 0.0);
        for (int c = 0; c < S; ++c) dot += M[r * S + c] * wv[c];
        av[r] += scale * dot;
      }
    }
  }

  std::vector<Cplx> apply_table(const std::vector<double>& table,
                                const std::vector<Cplx>& v) const {
    std::vector<Cplx> out(v.size());
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      const double* M = table.data() + bin * S * S;
      const Cplx* src = v.data() + bin * S;
      Cplx* dst = out.data() + bin * S;
      for (int r = 0; r < S; ++r) {
        Cplx dot(0.0, 0.0);
        for (int c = 0; c < S; ++c) dot += M[r * S + c] * src[c];
        dst[r] = dot;
      }
    }
    return out;
  }

  const std::vector<double>& propagator(double dt) const {
    auto it = propagators.find(dt);
    if (it != propagators.end()) return it->second;
    if (propagators.size() > 8) propagators.clear();
    std::vector<double> table(sigma.size(), 0.0);
    using RowMat =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    int idx[4];
    for (std::int64_t bin = 0; bin < nodes; ++bin) {
      grid.decode(bin, idx);
      bool dc = true;
      for (int a = 0; a < n; ++a)
        if (bin_frequency(idx[a], grid.points()) != 0) dc = false;
      double* dst = table.data() + bin * S * S;
      if (dc) {
        for (int r = 0; r < S; ++r) dst[r * S + r] = 1.0;
        continue;
      }
      Eigen::Map<const RowMat> M(sigma.data() + bin * S * S, S, S);
      RowMat A = -dt * M;
      RowMat E = A.exp();
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) dst[r * S + c] = E(r, c);
    }
    return propagators.emplace(dt, std::move(table)).first->second;
  }
};

AdjustedStepper::AdjustedStepper(const MetricField& h, const FlowParams& params,
                                 const StepperOptions& opts)
    : impl_(new Impl) {
  params.validate();
  check_metric_shape(h, "AdjustedStepper");
  require_spd(h, "AdjustedStepper");
  impl_->h = h;
  impl_->params = params;
  impl_->opts = opts;
  impl_->grid = h.grid();
  impl_->n = impl_->grid.dim();
  impl_->nodes = impl_->grid.node_count();
  impl_->S = sym_basis_dim(impl_->n);
  impl_->band = impl_->grid.dealias_band();
  impl_->flat_h = is_identity_metric(h);
  if (impl_->band < 1)
    fail("AdjustedStepper: grid too coarse for the dealiased stepping band");
  for (int i = 0; i < impl_->n; ++i)
    for (int j = i; j < impl_->n; ++j)
      impl_->tri_slots.push_back({i, j});
  impl_->tri = int(impl_->tri_slots.size());

  SymbolReport rep = check_strong_ellipticity(params);
  if (rep.verdict != EllipticityVerdict::strongly_elliptic) {
    if (!opts.allow_non_elliptic)
      fail(std::string("AdjustedStepper: parameters are ") + verdict_name(rep.verdict) +
           "; set allow_non_elliptic to integrate anyway");
    std::fprintf(stderr,
                 "flow: warning: stepping with %s parameters (lambda = %.3g)\n",
                 verdict_name(rep.verdict), rep.lambda);
  }

  // Per-bin multiplier table, plus the stiffness estimate over the dealiased
  // band (the modes the nonlinear terms actually populate).
  const int S = impl_->S;
  impl_->sigma.assign(impl_->nodes * std::int64_t(S) * S, 0.0);
  std::vector<double> xi(impl_->n);
  int idx[4];
  double rho = 0.0;
  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (std::int64_t bin = 0; bin < impl_->nodes; ++bin) {
    impl_->grid.decode(bin, idx);
    bool dc = true, in_band = true;
    for (int a = 0; a < impl_->n; ++a) {
      const int m = bin_frequency(idx[a], impl_->grid.points());
      xi[a] = double(m);
      if (m != 0) dc = false;
      if (std::abs(m) > impl_->band) in_band = false;
    }
    if (dc) continue;  // Sigma(0) = 0: the symbol vanishes at the zero mode
    std::vector<double> M = flat_symbol_matrix(params, xi);
    std::copy(M.begin(), M.end(), impl_->sigma.begin() + bin * S * S);
    if (in_band) {
      Eigen::Map<const RowMat> sig(M.data(), S, S);
      Eigen::MatrixXd sym = 0.5 * (sig + sig.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
      rho = std::max(rho, es.eigenvalues().cwiseAbs().maxCoeff());
    }
  }
  if (!(rho > 0.0)) fail("AdjustedStepper: degenerate stiffness estimate");
  impl_->rho_max = rho;
}

AdjustedStepper::~AdjustedStepper() = default;

const Grid& AdjustedStepper::grid() const { return impl_->grid; }
const FlowParams& AdjustedStepper::params() const { return impl_->params; }
double AdjustedStepper::stiffness() const { return impl_->rho_max; }
double AdjustedStepper::suggested_dt() const {
  return impl_->opts.dt_safety / impl_->rho_max;
}

VectorFieldOnGrid AdjustedStepper::gauge_field(const MetricField& g) const {
  check_metric_shape(g, "gauge_field");
  check_same_grid(impl_->grid, g.grid(), "gauge_field");
  return deturck_field(g, impl_->h, impl_->params);
}

TensorField AdjustedStepper::gauged_rhs(const MetricField& g) const {
  check_metric_shape(g, "gauged_rhs");
  check_same_grid(impl_->grid, g.grid(), "gauged_rhs");
  TensorField rhs = ansatz_tensor(g, impl_->params);
  VectorFieldOnGrid W = deturck_field(g, impl_->h, impl_->params);
  axpy(rhs, 1.0, lie_derivative(W, g));
  return rhs;
}

FlowState AdjustedStepper::step(const FlowState& state, double dt) const {
  if (!(dt > 0.0) || !std::isfinite(dt)) fail("step: dt must be positive");
  const MetricField& g = state.g;
  check_metric_shape(g, "step");
  check_same_grid(impl_->grid, g.grid(), "step");
  if (!all_finite(g)) halt("step: non-finite state at t = " + time_tag(state.t));
  require_spd(g, "step");

  const Impl& im = *impl_;
  const auto& E = im.propagator(dt);

  // Integrating-factor Heun: w' = -Sigma w + N(w),
  //   w1   = E (w + dt N(w)),
  //   w+   = E (w + dt/2 N(w)) + dt/2 N(w1),  E = exp(-dt Sigma) per bin.
  std::vector<Cplx> w_hat = im.to_coords(g, true);
  std::vector<Cplx> n1_hat = im.to_coords(gauged_rhs(g), false);
  im.add_sigma_times(w_hat, 1.0, n1_hat);  // N = full right side + Sigma w

  std::vector<Cplx> stage(w_hat);
  for (std::size_t i = 0; i < stage.size(); ++i) stage[i] += dt * n1_hat[i];
  std::vector<Cplx> w1_hat = im.apply_table(E, stage);
  im.zero_outside_band(w1_hat);
  MetricField g1 = im.from_coords_metric(w1_hat);
  if (!all_finite(g1))
    halt("step: non-finite field at t = " + time_tag(state.t) + " (inner stage)");
  if (!is_spd(g1))
    halt("step: positive definiteness lost at t = " + time_tag(state.t) +
         " (inner stage)");

  std::vector<Cplx> n2_hat = im.to_coords(gauged_rhs(g1), false);
  im.add_sigma_times(w1_hat, 1.0, n2_hat);

  for (std::size_t i = 0; i < stage.size(); ++i)
    stage[i] = w_hat[i] + (0.5 * dt) * n1_hat[i];
  std::vector<Cplx> out_hat = im.apply_table(E, stage);
  for (std::size_t i = 0; i < out_hat.size(); ++i)
    out_hat[i] += (0.5 * dt) * n2_hat[i];
  im.zero_outside_band(out_hat);

  FlowState next;
  next.t = state.t + dt;
  next.g = im.from_coords_metric(out_hat);
  next.phi = state.phi;
  if (!all_finite(next.g))
    halt("step: non-finite field at t = " + time_tag(next.t));
  if (!is_spd(next.g))
    halt("step: positive definiteness lost at t = " + time_tag(next.t));
  return next;
}

FlowState step_adjusted_flow(const FlowState& state, const MetricField& h,
                             const FlowParams& params, double dt,
                             const StepperOptions& opts) {
  AdjustedStepper stepper(h, params, opts);
  return stepper.step(state, dt);
}

AdjustedRun run_adjusted_flow(const MetricField& g0, const MetricField& h,
                              const FlowParams& params, const RunOptions& opts) {
  if (opts.steps < 1) fail("run_adjusted_flow: steps must be >= 1");
  if (opts.snapshot_every < 1) fail("run_adjusted_flow: snapshot_every must be >= 1");
  AdjustedStepper stepper(h, params, opts.stepper);
  check_metric_shape(g0, "run_adjusted_flow");
  check_same_grid(stepper.grid(), g0.grid(), "run_adjusted_flow");

  AdjustedRun run;
  run.params = params;
  run.dt = (opts.dt > 0.0) ? opts.dt : stepper.suggested_dt();

  FlowState s;
  s.t = 0.0;
  s.g = g0;
  auto store = [&](const FlowState& st) {
    run.times.push_back(st.t);
    run.g.push_back(st.g);
    run.w.push_back(stepper.gauge_field(st.g));
  };
  store(s);
  for (int i = 1; i <= opts.steps; ++i) {
    try {
      s = stepper.step(s, run.dt);
    } catch (const std::runtime_error& e) {
      run.halted_step = i;
      run.halt_reason = e.what();
      break;
    }
    if (i % opts.snapshot_every == 0 || i == opts.steps) store(s);
  }
  return run;
}

// ---- reconstruction -----------------------------------------------------------

PureFlowReconstruction reconstruct_pure_flow(const AdjustedRun& run,
                                             const MetricField& h,
                                             const FlowParams& params,
                                             const DiffeoField* phi0) {
  const std::size_t M = run.times.size();
  if (M < 3) fail("reconstruct_pure_flow: need at least three snapshots");
  if (run.g.size() != M || run.w.size() != M)
    fail("reconstruct_pure_flow: snapshot arrays disagree in length");
  params.validate();
  check_metric_shape(h, "reconstruct_pure_flow");
  const Grid& grid = run.g[0].grid();
  check_same_grid(grid, h.grid(), "reconstruct_pure_flow");

  const double D = run.times[1] - run.times[0];
  if (!(D > 0.0)) fail("reconstruct_pure_flow: times must increase");
  for (std::size_t i = 0; i + 1 < M; ++i)
    if (std::abs((run.times[i + 1] - run.times[i]) - D) > 1e-9 * std::max(1.0, D))
      fail("reconstruct_pure_flow: snapshots are not uniformly spaced");

  DiffeoField phi = phi0 ? *phi0 : DiffeoField(grid);
  check_same_grid(grid, phi.grid(), "reconstruct_pure_flow");

  PureFlowReconstruction rec;
  rec.times = run.times;
  rec.gbar.reserve(M);
  rec.phi.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    rec.gbar.push_back(pullback_metric(run.g[m], phi));
    rec.phi.push_back(phi);
    if (m + 1 < M) phi = step_diffeo(phi, run.w[m], run.w[m + 1], D);
  }

  rec.residual.resize(M);
  const double inv2D = 1.0 / (2.0 * D);
  for (std::size_t m = 0; m < M; ++m) {
    TensorField dtg(grid, 2, 0);
    if (m == 0) {
      dtg = scale(rec.gbar[0], -3.0 * inv2D);
      axpy(dtg, 4.0 * inv2D, rec.gbar[1]);
      axpy(dtg, -1.0 * inv2D, rec.gbar[2]);
    } else if (m + 1 == M) {
      dtg = scale(rec.gbar[M - 1], 3.0 * inv2D);
      axpy(dtg, -4.0 * inv2D, rec.gbar[M - 2]);
      axpy(dtg, 1.0 * inv2D, rec.gbar[M - 3]);
    } else {
      dtg = scale(rec.gbar[m + 1], inv2D);
      axpy(dtg, -inv2D, rec.gbar[m - 1]);
    }
    TensorField defect = sub(dtg, ansatz_tensor(rec.gbar[m], params));
    rec.residual[m] = flat_l2_norm(defect);
  }
  return rec;
}

// ---- the energy monitor ---------------------------------------------------------

EnergySeries energy_monitor(const std::vector<double>& times,
                            const std::vector<MetricField>& run1,
                            const std::vector<MetricField>& run2,
                            const MetricField& h, int m) {
  const std::size_t M = times.size();
  if (M == 0) fail("energy_monitor: empty time axis");
  if (run1.size() != M || run2.size() != M)
    fail("energy_monitor: runs and times disagree in length");
  if (m < 0) fail("energy_monitor: derivative order must be >= 0");
  if (m > 4) fail("energy_monitor: derivative order capped at 4 by tensor rank");
  check_metric_shape(h, "energy_monitor");
  require_spd(h, "energy_monitor");
  const Grid& grid = h.grid();

  TensorField gamma_h;
  if (m > 0) gamma_h = christoffel(h);

  EnergySeries series;
  series.t = times;
  series.e.resize(M);
  series.khat.assign(M, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < M; ++i) {
    check_same_grid(grid, run1[i].grid(), "energy_monitor");
    check_same_grid(grid, run2[i].grid(), "energy_monitor");
    TensorField w = sub(run1[i], run2[i]);
    double e = l2_inner(w, w, h);
    if (m > 0) {
      TensorField Dw = w;
      for (int j = 0; j < m; ++j) Dw = covariant_derivative(Dw, gamma_h);
      e += l2_inner(Dw, Dw, h);
    }
    series.e[i] = e;
  }
  const double e0 = series.e[0], t0 = series.t[0];
  if (e0 > 0.0) {
    for (std::size_t i = 1; i < M; ++i)
      if (series.t[i] > t0 && series.e[i] > 0.0)
        series.khat[i] = std::log(series.e[i] / e0) / (series.t[i] - t0);
  }
  return series;
}

// ---- probes ---------------------------------------------------------------------

std::vector<std::complex<double>> metric_mode(const MetricField& g,
                                              const std::vector<int>& xi) {
  check_metric_shape(g, "metric_mode");
  const Grid& grid = g.grid();
  const int n = grid.dim();
  if (int(xi.size()) != n) fail("metric_mode: xi must have one entry per axis");

  const int S = sym_basis_dim(n);
  std::vector<double> mre(n * n, 0.0), mim(n * n, 0.0);
  int idx[4];
  const double inv = 1.0 / double(grid.node_count());
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double* src = g.comp_data(i * n + j);
      const double off = (i == j) ? 1.0 : 0.0;
      double re = 0.0, im = 0.0;
      for (std::int64_t x = 0; x < grid.node_count(); ++x) {
        grid.decode(x, idx);
        double phase = 0.0;
        for (int a = 0; a < n; ++a) phase += xi[a] * grid.coord(idx[a]);
        const double v = src[x] - off;
        re += v * std::cos(phase);
        im -= v * std::sin(phase);
      }
      mre[i * n + j] = mre[j * n + i] = re * inv;
      mim[i * n + j] = mim[j * n + i] = im * inv;
    }
  std::vector<double> cre(S), cim(S);
  sym_to_coords(n, mre.data(), cre.data());
  sym_to_coords(n, mim.data(), cim.data());
  std::vector<std::complex<double>> out(S);
  for (int s = 0; s < S; ++s) out[s] = Cplx(cre[s], cim[s]);
  return out;
}

TensorField remove_mean(const TensorField& f) {
  TensorField out = f;
  std::vector<double> terms(f.nodes());
  for (int c = 0; c < f.comps(); ++c) {
    const double* src = f.comp_data(c);
    std::copy(src, src + f.nodes(), terms.begin());
    const double mean = canonical_sum(terms) / double(f.nodes());
    double* dst = out.comp_data(c);
    for (std::int64_t x = 0; x < f.nodes(); ++x) dst[x] -= mean;
  }
  return out;
}

double flat_l2_norm(const TensorField& f) {
  std::vector<double> terms;
  terms.reserve(std::size_t(f.comps()) * f.nodes());
  for (int c = 0; c < f.comps(); ++c) {
    const double* src = f.comp_data(c);
    for (std::int64_t x = 0; x < f.nodes(); ++x) terms.push_back(src[x] * src[x]);
  }
  const double cellvol = std::pow(f.grid().spacing(), f.grid().dim());
  return std::sqrt(canonical_sum(terms) * cellvol);
}

// ---- run serialization ------------------------------------------------------------

std::string write_run(const std::string& dir, const AdjustedRun& run) {
  if (run.times.empty()) fail("write_run: empty run");
  if (run.g.size() != run.times.size() || run.w.size() != run.times.size())
    fail("write_run: snapshot arrays disagree in length");
  std::filesystem::create_directories(dir);

  std::vector<std::string> gnames, wnames;
  char buf[64];
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    std::snprintf(buf, sizeof buf, "g_%04zu.bin", i);
    gnames.push_back(buf);
    write_snapshot(dir + "/" + gnames.back(), run.g[i]);
    std::snprintf(buf, sizeof buf, "w_%04zu.bin", i);
    wnames.push_back(buf);
    write_snapshot(dir + "/" + wnames.back(), run.w[i]);
  }

  const Grid& grid = run.g[0].grid();
  const std::string path = dir + "/manifest.txt";
  std::ofstream out(path);
  if (!out) fail("write_run: cannot open " + path);
  out << "format gflow-run 1\n";
  out << "dim " << grid.dim() << "\n";
  out << "points " << grid.points() << "\n";
  out.precision(17);
  out << "k " << run.params.k << "\n";
  out << "a " << run.params.a << "\n";
  out << "b " << run.params.b << "\n";
  out << "c " << run.params.c << "\n";
  out << "alpha " << run.params.alpha << "\n";
  out << "beta " << run.params.beta << "\n";
  out << "shift " << run.params.obstruction_shift << "\n";
  out << "dt " << run.dt << "\n";
  out << "halted_step " << run.halted_step << "\n";
  if (!run.halt_reason.empty()) out << "halt_reason " << run.halt_reason << "\n";
  out << "snapshots " << run.times.size() << "\n";
  for (std::size_t i = 0; i < run.times.size(); ++i)
    out << "snapshot " << i << " " << run.times[i] << " " << gnames[i] << " "
        << wnames[i] << "\n";
  out.close();
  if (!out) fail("write_run: write failed for " + path);
  return path;
}

}  // namespace gflow
