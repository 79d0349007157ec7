#include "gflow/tensor_field.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <stdexcept>

namespace gflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_compatible(const TensorField& a, const TensorField& b, const char* op) {
  if (a.grid() != b.grid() || a.lower() != b.lower() || a.upper() != b.upper())
    fail(std::string(op) + ": incompatible fields");
}

void require_finite(const TensorField& f, const char* op) {
  for (double v : f.raw())
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite input value");
}

std::string node_string(const Grid& g, std::int64_t node) {
  int idx[4];
  g.decode(node, idx);
  std::string s = "(";
  for (int a = 0; a < g.dim(); ++a) s += std::to_string(idx[a]) + (a + 1 < g.dim() ? "," : ")");
  return s;
}

// ---- FFT workspace registry (c2c, FFTW_ESTIMATE for run-to-run determinism)

struct FftEngine {
  int n, N;
  std::int64_t total;
  fftw_complex* buf;
  fftw_plan fwd, bwd;

  FftEngine(int n_, int N_) : n(n_), N(N_) {
    total = 1;
    for (int a = 0; a < n; ++a) total *= N;
    buf = fftw_alloc_complex(total);
    int dims[4] = {N, N, N, N};
    fwd = fftw_plan_dft(n, dims, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd = fftw_plan_dft(n, dims, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~FftEngine() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
    fftw_free(buf);
  }
};

FftEngine& engine_for(const Grid& g) {
  static std::vector<std::unique_ptr<FftEngine>> cache;
  for (auto& e : cache)
    if (e->n == g.dim() && e->N == g.points()) return *e;
  cache.push_back(std::make_unique<FftEngine>(g.dim(), g.points()));
  return *cache.back();
}

void fft_forward(const Grid& g, const double* in, std::complex<double>* out) {
  FftEngine& e = engine_for(g);
  for (std::int64_t i = 0; i < e.total; ++i) {
    e.buf[i][0] = in[i];
    e.buf[i][1] = 0.0;
  }
  fftw_execute(e.fwd);
  for (std::int64_t i = 0; i < e.total; ++i)
    out[i] = std::complex<double>(e.buf[i][0], e.buf[i][1]);
}

void fft_backward_real(const Grid& g, const std::complex<double>* in, double* out) {
  FftEngine& e = engine_for(g);
  std::memcpy(e.buf, in, sizeof(fftw_complex) * e.total);
  fftw_execute(e.bwd);
  const double inv = 1.0 / double(e.total);
  for (std::int64_t i = 0; i < e.total; ++i) out[i] = e.buf[i][0] * inv;
}

// ---- small dense helpers ---------------------------------------------------

double det_small(int n, const double* m) {
  if (n == 2) return m[0] * m[3] - m[1] * m[2];
  if (n == 3)
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  // n == 4: expand along the first row
  double d = 0.0;
  for (int c = 0; c < 4; ++c) {
    double sub[9];
    int t = 0;
    for (int r = 1; r < 4; ++r)
      for (int cc = 0; cc < 4; ++cc)
        if (cc != c) sub[t++] = m[r * 4 + cc];
    double cof = det_small(3, sub);
    d += ((c % 2) ? -1.0 : 1.0) * m[c] * cof;
  }
  return d;
}

// Gauss-Jordan inverse with partial pivoting; returns false on singularity.
bool invert_small(int n, double* m, double* out) {
  double aug[4][8];
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      aug[r][c] = m[r * n + c];
      aug[r][n + c] = (r == c) ? 1.0 : 0.0;
    }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(aug[r][col]) > std::fabs(aug[piv][col])) piv = r;
    if (aug[piv][col] == 0.0) return false;
    if (piv != col)
      for (int c = 0; c < 2 * n; ++c) std::swap(aug[piv][c], aug[col][c]);
    const double d = aug[col][col];
    for (int c = 0; c < 2 * n; ++c) aug[col][c] /= d;
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = aug[r][col];
      if (f == 0.0) continue;
      for (int c = 0; c < 2 * n; ++c) aug[r][c] -= f * aug[col][c];
    }
  }
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[r * n + c] = aug[r][n + c];
  return true;
}

// Cholesky probe: true iff the symmetric matrix is positive definite.
bool chol_ok(int n, const double* m) {
  double L[16] = {0};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = m[i * n + j];
      for (int k = 0; k < j; ++k) s -= L[i * 4 + k] * L[j * 4 + k];
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return false;
        L[i * 4 + j] = std::sqrt(s);
      } else {
        L[i * 4 + j] = s / L[j * 4 + j];
      }
    }
  }
  return true;
}

// ---- axis-line convolutions --------------------------------------------------

template <typename Kernel>
void sweep_axis(const Grid& g, int axis, const double* in, double* out, Kernel&& k) {
  const int N = g.points();
  const std::int64_t stride = g.axis_stride(axis);
  const std::int64_t nodes = g.node_count();
  std::vector<double> line(N), res(N);
  int idx[4];
  for (std::int64_t node = 0; node < nodes; ++node) {
    g.decode(node, idx);
    if (idx[axis] != 0) continue;
    const std::int64_t base = node;
    for (int j = 0; j < N; ++j) line[j] = in[base + j * stride];
    k(line.data(), res.data(), N);
    for (int j = 0; j < N; ++j) out[base + j * stride] = res[j];
  }
}

}  // namespace

// ---- TensorField core --------------------------------------------------------

TensorField::TensorField(const Grid& grid, int p, int q) : grid_(grid), p_(p), q_(q) {
  if (p < 0 || q < 0 || p + q > 6) fail("TensorField: rank out of range");
  comps_ = 1;
  for (int i = 0; i < p + q; ++i) comps_ *= grid.dim();
  values_.assign(std::int64_t(comps_) * grid.node_count(), 0.0);
}

void TensorField::comp_decode(int comp, int* t) const {
  const int n = grid_.dim();
  for (int i = rank() - 1; i >= 0; --i) {
    t[i] = comp % n;
    comp /= n;
  }
}

int TensorField::comp_encode(const int* t) const {
  const int n = grid_.dim();
  int c = 0;
  for (int i = 0; i < rank(); ++i) c = c * n + t[i];
  return c;
}

// ---- algebra ------------------------------------------------------------------

TensorField add(const TensorField& a, const TensorField& b) {
  require_compatible(a, b, "add");
  TensorField r = a;
  const auto& bv = b.raw();
  auto& rv = r.raw();
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] += bv[i];
  return r;
}

TensorField sub(const TensorField& a, const TensorField& b) {
  require_compatible(a, b, "sub");
  TensorField r = a;
  const auto& bv = b.raw();
  auto& rv = r.raw();
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] -= bv[i];
  return r;
}

TensorField scale(const TensorField& a, double s) {
  TensorField r = a;
  for (auto& v : r.raw()) v *= s;
  return r;
}

void axpy(TensorField& acc, double s, const TensorField& x) {
  require_compatible(acc, x, "axpy");
  auto& av = acc.raw();
  const auto& xv = x.raw();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += s * xv[i];
}

// ---- derivatives and filtering --------------------------------------------------

TensorField spectral_derivative(const TensorField& f, int axis) {
  if (axis < 0 || axis >= f.grid().dim()) fail("spectral_derivative: bad axis");
  require_finite(f, "spectral_derivative");
  const Grid& g = f.grid();
  const std::vector<double>& w = g.derivative_kernel();
  TensorField out(g, f.lower(), f.upper());
  auto conv = [&w](const double* line, double* res, int N) {
    for (int i = 0; i < N; ++i) {
      double acc = 0.0;
      for (int m = 1; m < N / 2; ++m) {
        const int l = (i - m + N) % N, r = (i + m) % N;
        // exact zero for constant lines: the difference vanishes bitwise
        acc += w[m] * (line[l] - line[r]);
      }
      res[i] = acc;
    }
  };
  for (int c = 0; c < f.comps(); ++c)
    sweep_axis(g, axis, f.comp_data(c), out.comp_data(c), conv);
  return out;
}

TensorField partials_lower(const TensorField& f) {
  require_finite(f, "partials_lower");
  const Grid& g = f.grid();
  const int n = g.dim(), p = f.lower(), q = f.upper();
  TensorField out(g, p + 1, q);
  int t[8], t2[8];
  for (int m = 0; m < n; ++m) {
    const std::vector<double>& w = g.derivative_kernel();
    auto conv = [&w](const double* line, double* res, int N) {
      for (int i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int mm = 1; mm < N / 2; ++mm) {
          const int l = (i - mm + N) % N, r = (i + mm) % N;
          acc += w[mm] * (line[l] - line[r]);
        }
        res[i] = acc;
      }
    };
    for (int c = 0; c < f.comps(); ++c) {
      f.comp_decode(c, t);
      for (int i = 0; i < p; ++i) t2[i] = t[i];
      t2[p] = m;
      for (int i = 0; i < q; ++i) t2[p + 1 + i] = t[p + i];
      const int oc = out.comp_encode(t2);
      sweep_axis(g, m, f.comp_data(c), out.comp_data(oc), conv);
    }
  }
  return out;
}

TensorField dealias(const TensorField& f) {
  const Grid& g = f.grid();
  const std::vector<double>& k = g.dealias_kernel();
  TensorField out = f;
  std::vector<double> tmp(g.node_count());
  auto conv = [&k](const double* line, double* res, int N) {
    for (int i = 0; i < N; ++i) {
      double acc = k[0] * line[i];
      for (int j = 1; j < N / 2; ++j) {
        const int l = (i - j + N) % N, r = (i + j) % N;
        acc += k[j] * (line[l] + line[r]);
      }
      acc += k[N / 2] * line[(i + N / 2) % N];
      res[i] = acc;
    }
  };
  for (int c = 0; c < out.comps(); ++c) {
    for (int axis = 0; axis < g.dim(); ++axis) {
      sweep_axis(g, axis, out.comp_data(c), tmp.data(), conv);
      std::memcpy(out.comp_data(c), tmp.data(), sizeof(double) * g.node_count());
    }
  }
  return out;
}

// ---- inner products ----------------------------------------------------------------

bool is_identity_metric(const MetricField& h) {
  if (h.lower() != 2 || h.upper() != 0) return false;
  const int n = h.grid().dim();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int t[2] = {i, j};
      const double want = (i == j) ? 1.0 : 0.0;
      const double* d = h.comp_data(h.comp_encode(t));
      for (std::int64_t node = 0; node < h.nodes(); ++node)
        if (d[node] != want) return false;
    }
  return true;
}

double l2_inner(const TensorField& f, const TensorField& g, const MetricField& h) {
  require_compatible(f, g, "l2_inner");
  if (h.grid() != f.grid() || h.lower() != 2 || h.upper() != 0)
    fail("l2_inner: h must be a metric on the same grid");
  const Grid& gr = f.grid();
  const int n = gr.dim(), p = f.lower(), q = f.upper();
  double cell = 1.0;
  for (int a = 0; a < n; ++a) cell *= gr.spacing();

  if (is_identity_metric(h)) {
    double acc = 0.0;
    const auto& fv = f.raw();
    const auto& gv = g.raw();
    for (std::size_t i = 0; i < fv.size(); ++i) acc += fv[i] * gv[i];
    return acc * cell;
  }

  TensorField hinv = inverse_metric(h, false);
  std::vector<double> vol(gr.node_count());
  {
    double m[16];
    for (std::int64_t node = 0; node < gr.node_count(); ++node) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int t[2] = {i, j};
          m[i * n + j] = h.at(h.comp_encode(t), node);
        }
      vol[node] = std::sqrt(det_small(n, m)) * cell;
    }
  }

  int tf[8], tg[8];
  double acc = 0.0;
  for (int cf = 0; cf < f.comps(); ++cf) {
    f.comp_decode(cf, tf);
    const double* fd = f.comp_data(cf);
    for (int cg = 0; cg < g.comps(); ++cg) {
      g.comp_decode(cg, tg);
      const double* gd = g.comp_data(cg);
      for (std::int64_t node = 0; node < gr.node_count(); ++node) {
        double w = vol[node];
        for (int l = 0; l < p; ++l) {
          const int t[2] = {tf[l], tg[l]};
          w *= hinv.at(hinv.comp_encode(t), node);
        }
        for (int u = 0; u < q; ++u) {
          const int t[2] = {tf[p + u], tg[p + u]};
          w *= h.at(h.comp_encode(t), node);
        }
        acc += w * fd[node] * gd[node];
      }
    }
  }
  return acc;
}

double sup_norm(const TensorField& f) {
  double m = 0.0;
  for (double v : f.raw()) m = std::max(m, std::fabs(v));
  return m;
}

// ---- interpolation ------------------------------------------------------------------

TrigInterpolant::TrigInterpolant(const TensorField& f, int band) {
  require_finite(f, "TrigInterpolant");
  const Grid& g = f.grid();
  n_ = g.dim();
  N_ = g.points();
  band_ = (band < 0) ? N_ / 2 : band;
  comps_ = f.comps();

  std::vector<std::vector<std::complex<double>>> all(comps_);
  for (int c = 0; c < comps_; ++c) {
    all[c].resize(g.node_count());
    fft_forward(g, f.comp_data(c), all[c].data());
  }
  const double inv = 1.0 / double(g.node_count());
  int idx[4];
  for (std::int64_t bin = 0; bin < g.node_count(); ++bin) {
    g.decode(bin, idx);
    std::array<int, 4> m = {0, 0, 0, 0};
    bool keep = true;
    for (int a = 0; a < n_; ++a) {
      m[a] = bin_frequency(idx[a], N_);
      if (std::abs(m[a]) > band_) keep = false;
    }
    if (!keep) continue;
    modes_.push_back(m);
    for (int c = 0; c < comps_; ++c) coef_.push_back(all[c][bin] * inv);
  }
}

void TrigInterpolant::eval(const double* point, double* out) const {
  // per-axis phase tables e^{i m y}, m = -band..band (plus Nyquist if kept)
  const int M = band_;
  std::vector<std::complex<double>> ph[4];
  for (int a = 0; a < n_; ++a) {
    ph[a].resize(2 * M + 1);
    const std::complex<double> step(std::cos(point[a]), std::sin(point[a]));
    std::complex<double> cur(1.0, 0.0);
    ph[a][M] = cur;
    for (int m = 1; m <= M; ++m) {
      cur *= step;
      ph[a][M + m] = cur;
      ph[a][M - m] = std::conj(cur);
    }
  }
  for (int c = 0; c < comps_; ++c) out[c] = 0.0;
  const std::complex<double>* coef = coef_.data();
  for (std::size_t b = 0; b < modes_.size(); ++b) {
    std::complex<double> p(1.0, 0.0);
    for (int a = 0; a < n_; ++a) p *= ph[a][M + modes_[b][a]];
    for (int c = 0; c < comps_; ++c) {
      const std::complex<double>& z = coef[b * comps_ + c];
      out[c] += z.real() * p.real() - z.imag() * p.imag();
    }
  }
}

std::vector<double> interpolate(const TensorField& f, const double* point) {
  const Grid& g = f.grid();
  const int n = g.dim(), N = g.points();
  // node fast path: bit-exact reproduction of stored values
  int idx[4];
  bool on_node = true;
  for (int a = 0; a < n && on_node; ++a) {
    const double r = point[a] / g.spacing();
    const long j = std::lround(r);
    if (point[a] == g.coord(int(((j % N) + N) % N)) || point[a] == j * g.spacing()) {
      idx[a] = int(((j % N) + N) % N);
    } else {
      on_node = false;
    }
  }
  if (on_node) {
    const std::int64_t node = g.encode(idx);
    std::vector<double> out(f.comps());
    for (int c = 0; c < f.comps(); ++c) out[c] = f.at(c, node);
    return out;
  }
  TrigInterpolant ti(f);
  std::vector<double> out(f.comps());
  ti.eval(point, out.data());
  return out;
}

// ---- metric helpers -------------------------------------------------------------------

MetricField flat_metric(const Grid& grid) {
  MetricField h(grid, 2, 0);
  for (int i = 0; i < grid.dim(); ++i) {
    const int t[2] = {i, i};
    double* d = h.comp_data(h.comp_encode(t));
    for (std::int64_t node = 0; node < grid.node_count(); ++node) d[node] = 1.0;
  }
  return h;
}

TensorField inverse_metric(const MetricField& g, bool apply_mask) {
  if (g.lower() != 2 || g.upper() != 0) fail("inverse_metric: expected a (2,0) field");
  const Grid& gr = g.grid();
  const int n = gr.dim();
  TensorField out(gr, 0, 2);
  double m[16], inv[16];
  for (std::int64_t node = 0; node < gr.node_count(); ++node) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int t[2] = {i, j};
        m[i * n + j] = g.at(g.comp_encode(t), node);
      }
    if (!invert_small(n, m, inv))
      throw std::runtime_error("inverse_metric: singular metric at node " +
                               node_string(gr, node));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int t[2] = {i, j};
        // enforce exact symmetry of the stored inverse
        out.at(out.comp_encode(t), node) = 0.5 * (inv[i * n + j] + inv[j * n + i]);
      }
  }
  return apply_mask ? dealias(out) : out;
}

bool is_spd(const MetricField& g, std::int64_t* bad_node) {
  const Grid& gr = g.grid();
  const int n = gr.dim();
  double m[16];
  for (std::int64_t node = 0; node < gr.node_count(); ++node) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int t[2] = {i, j};
        m[i * n + j] = g.at(g.comp_encode(t), node);
      }
    if (!chol_ok(n, m)) {
      if (bad_node) *bad_node = node;
      return false;
    }
  }
  return true;
}

void require_spd(const MetricField& g, const char* what) {
  std::int64_t bad = -1;
  if (!is_spd(g, &bad))
    throw std::runtime_error(std::string(what) + ": metric not positive definite at node " +
                             node_string(g.grid(), bad));
}

// ---- serialization ------------------------------------------------------------------

namespace {
void put_u32(std::ofstream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
std::uint32_t get_u32(std::ifstream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
}  // namespace

void write_snapshot(const std::string& path, const TensorField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("write_snapshot: cannot open " + path);
  os.write("GFLO", 4);
  put_u32(os, 1u);
  put_u32(os, std::uint32_t(f.grid().dim()));
  put_u32(os, std::uint32_t(f.grid().points()));
  put_u32(os, std::uint32_t(f.lower()));
  put_u32(os, std::uint32_t(f.upper()));
  for (std::int64_t node = 0; node < f.nodes(); ++node)
    for (int c = 0; c < f.comps(); ++c) {
      const double v = f.at(c, node);
      os.write(reinterpret_cast<const char*>(&v), 8);
    }
  if (!os) fail("write_snapshot: short write to " + path);
}

TensorField read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("read_snapshot: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GFLO", 4) != 0)
    fail("read_snapshot: bad magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != 1u) fail("read_snapshot: unsupported version in " + path);
  const int n = int(get_u32(is)), N = int(get_u32(is));
  const int p = int(get_u32(is)), q = int(get_u32(is));
  TensorField f(Grid(n, N), p, q);
  for (std::int64_t node = 0; node < f.nodes(); ++node)
    for (int c = 0; c < f.comps(); ++c) {
      double v;
      is.read(reinterpret_cast<char*>(&v), 8);
      f.at(c, node) = v;
    }
  if (!is) fail("read_snapshot: truncated file " + path);
  return f;
}

// ---- misc -----------------------------------------------------------------------------

TensorField shift_field(const TensorField& f, const int* cells) {
  const Grid& g = f.grid();
  const int n = g.dim(), N = g.points();
  TensorField out(g, f.lower(), f.upper());
  int idx[4], idx2[4];
  for (std::int64_t node = 0; node < g.node_count(); ++node) {
    g.decode(node, idx);
    for (int a = 0; a < n; ++a) idx2[a] = ((idx[a] + cells[a]) % N + N) % N;
    const std::int64_t dst = g.encode(idx2);
    for (int c = 0; c < f.comps(); ++c) out.at(c, dst) = f.at(c, node);
  }
  return out;
}

TensorField random_band_limited(const Grid& grid, int p, int q, int band,
                                std::uint64_t seed, double amplitude,
                                bool symmetric_pair) {
  if (band < 1 || band > grid.points() / 2 - 1) fail("random_band_limited: bad band");
  TensorField f(grid, p, q);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const int n = grid.dim(), N = grid.points();

  std::vector<std::complex<double>> spec(grid.node_count());
  std::vector<double> real(grid.node_count());
  int idx[4], mir[4], t[4];

  for (int c = 0; c < f.comps(); ++c) {
    if (symmetric_pair) {
      f.comp_decode(c, t);
      if (t[0] > t[1]) continue;  // fill upper triangle only
    }
    std::fill(spec.begin(), spec.end(), std::complex<double>(0.0, 0.0));
    for (std::int64_t bin = 0; bin < grid.node_count(); ++bin) {
      grid.decode(bin, idx);
      bool keep = true;
      for (int a = 0; a < n; ++a)
        if (std::abs(bin_frequency(idx[a], N)) > band) keep = false;
      if (!keep) continue;
      for (int a = 0; a < n; ++a) mir[a] = (N - idx[a]) % N;
      const std::int64_t mbin = grid.encode(mir);
      if (bin < mbin) {
        const double re = dist(rng), im = dist(rng);
        spec[bin] = {re, im};
        spec[mbin] = {re, -im};
      } else if (bin == mbin) {
        spec[bin] = {dist(rng), 0.0};
      }
    }
    fft_backward_real(grid, spec.data(), real.data());
    std::memcpy(f.comp_data(c), real.data(), sizeof(double) * grid.node_count());
  }
  if (symmetric_pair) {
    for (int c = 0; c < f.comps(); ++c) {
      f.comp_decode(c, t);
      if (t[0] <= t[1]) continue;
      const int t2[2] = {t[1], t[0]};
      std::memcpy(f.comp_data(c), f.comp_data(f.comp_encode(t2)),
                  sizeof(double) * grid.node_count());
    }
  }
  const double s = sup_norm(f);
  if (s > 0.0) {
    const double fac = amplitude / s;
    for (auto& v : f.raw()) v *= fac;
  }
  return f;
}

MetricField perturbed_flat_metric(const Grid& grid,
                                  const std::vector<std::array<int, 4>>& xis,
                                  const std::vector<std::vector<double>>& etas,
                                  const std::vector<double>& amps) {
  if (xis.size() != etas.size() || xis.size() != amps.size())
    fail("perturbed_flat_metric: mode list size mismatch");
  const int n = grid.dim();
  MetricField g = flat_metric(grid);
  int idx[4];
  for (std::size_t m = 0; m < xis.size(); ++m) {
    if (int(etas[m].size()) != n * n) fail("perturbed_flat_metric: eta must have n*n entries");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (etas[m][i * n + j] != etas[m][j * n + i])
          fail("perturbed_flat_metric: eta must be symmetric");
    for (std::int64_t node = 0; node < grid.node_count(); ++node) {
      grid.decode(node, idx);
      double phase = 0.0;
      for (int a = 0; a < n; ++a) phase += xis[m][a] * grid.coord(idx[a]);
      const double cw = amps[m] * std::cos(phase);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int t[2] = {i, j};
          g.at(g.comp_encode(t), node) += cw * etas[m][i * n + j];
        }
    }
  }
  return g;
}

}  // namespace gflow
