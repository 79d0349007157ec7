#include "gflow/symbol.hpp"

#include "gflow/deturck.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace gflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double xpow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

// The five scalar contractions every symbol formula is built from.
struct Contractions {
  double X;  // |xi|^2
  double T;  // tr eta
  double P;  // <xi (x) xi, eta>
  double N;  // |eta|^2
  double Q;  // <xi (x) xi, tr(eta (x) eta)>
};

void validate_input(const SymbolInput& in) {
  const int n = in.params.n;
  in.params.validate();
  if (static_cast<int>(in.xi.size()) != n) fail("symbol: xi must have length n");
  if (static_cast<int>(in.eta.size()) != n * n) fail("symbol: eta must be n x n");
  if (!in.metric.empty() && static_cast<int>(in.metric.size()) != n * n)
    fail("symbol: metric must be n x n or empty");
  double scale = 1.0;
  for (double v : in.eta) scale = std::max(scale, std::abs(v));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j)
      if (std::abs(in.eta[i * n + j] - in.eta[j * n + i]) > 1e-12 * scale)
        fail("symbol: eta must be symmetric");
}

Contractions contract(const SymbolInput& in) {
  const int n = in.params.n;
  Contractions c{0, 0, 0, 0, 0};
  if (in.metric.empty()) {
    std::vector<double> v(n, 0.0);
    for (int i = 0; i < n; ++i) {
      c.X += in.xi[i] * in.xi[i];
      c.T += in.eta[i * n + i];
      for (int j = 0; j < n; ++j) {
        v[i] += in.eta[i * n + j] * in.xi[j];
        c.N += in.eta[i * n + j] * in.eta[i * n + j];
      }
    }
    for (int i = 0; i < n; ++i) {
      c.P += in.xi[i] * v[i];
      c.Q += v[i] * v[i];
    }
    return c;
  }
  Eigen::MatrixXd m(n, n), eta(n, n);
  Eigen::VectorXd xi(n);
  for (int i = 0; i < n; ++i) {
    xi(i) = in.xi[i];
    for (int j = 0; j < n; ++j) {
      m(i, j) = in.metric[i * n + j];
      eta(i, j) = in.eta[i * n + j];
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) fail("symbol: metric must be positive definite");
  Eigen::MatrixXd minv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::VectorXd xiup = minv * xi;      // raised index
  Eigen::VectorXd v = eta * xiup;        // eta_{ij} xi^j, lower index
  c.X = xi.dot(xiup);
  c.T = (minv * eta).trace();
  c.P = xiup.dot(eta * xiup);
  c.N = (minv * eta * minv * eta).trace();
  c.Q = v.dot(minv * v);
  return c;
}

}  // namespace

const char* verdict_name(EllipticityVerdict v) {
  switch (v) {
    case EllipticityVerdict::strongly_elliptic: return "strongly_elliptic";
    case EllipticityVerdict::critical: return "critical";
    case EllipticityVerdict::not_elliptic: return "not_elliptic";
  }
  return "unknown";
}

double building_block_symbol(SymbolBlock block, const SymbolInput& input) {
  validate_input(input);
  const int k = input.params.k;
  const Contractions c = contract(input);
  const double sk = (k % 2 == 0) ? 1.0 : -1.0;    // (-1)^k
  const double sk1 = -sk;                          // (-1)^{k-1}
  switch (block) {
    case SymbolBlock::ricci:
      return sk * 0.5 *
             (xpow(c.X, k + 1) * c.N + xpow(c.X, k) * c.T * c.P - 2.0 * xpow(c.X, k) * c.Q);
    case SymbolBlock::scalar_g:
      return sk * (xpow(c.X, k + 1) * c.T * c.T - xpow(c.X, k) * c.T * c.P);
    case SymbolBlock::hess_scalar:
      if (k < 1) fail("building_block_symbol: hess_scalar requires k >= 1");
      return sk1 * (xpow(c.X, k - 1) * c.P * c.P - xpow(c.X, k) * c.T * c.P);
    case SymbolBlock::lie_V:
      return sk1 * (2.0 * xpow(c.X, k) * c.Q - xpow(c.X, k) * c.T * c.P);
    case SymbolBlock::lie_Z:
      if (k < 1) fail("building_block_symbol: lie_Z requires k >= 1");
      return sk1 * (2.0 * xpow(c.X, k) * c.Q - xpow(c.X, k - 1) * c.P * c.P);
  }
  fail("building_block_symbol: unknown block");
}

double combined_symbol(const SymbolInput& input) {
  validate_input(input);
  const FlowParams& p = input.params;
  const int k = p.k;
  const double ae = p.a_eff();
  const double wQ = 2.0 * p.alpha + 2.0 * p.beta - 1.0;
  const double wP = p.b - p.beta;
  const double wT = 0.5 - ae - p.b - p.alpha;
  if (k == 0 && wP != 0.0)
    fail("combined_symbol: k = 0 requires b = beta (inverse-Laplacian channel)");
  const Contractions c = contract(input);
  double acc = 0.5 * xpow(c.X, k + 1) * c.N;
  if (wQ != 0.0) acc += wQ * xpow(c.X, k) * c.Q;
  if (wP != 0.0) acc += wP * xpow(c.X, k - 1) * c.P * c.P;
  if (wT != 0.0) acc += wT * xpow(c.X, k) * c.T * c.P;
  if (ae != 0.0) acc += ae * xpow(c.X, k + 1) * c.T * c.T;
  return p.c * acc;
}

SymbolReport check_strong_ellipticity(const FlowParams& params) {
  params.validate();
  const int n = params.n;
  const double ae = params.a_eff();
  const double thr = -1.0 / (2.0 * (n - 1));
  const double margin = ae - thr;
  const double band = 1e-9 * std::max(1.0, std::abs(thr));

  SymbolReport rep;
  if (margin > band) {
    rep.verdict = EllipticityVerdict::strongly_elliptic;
    rep.lambda = params.c * (0.5 + std::min(0.0, ae * (n - 1)));
    return rep;
  }
  rep.verdict = (std::abs(margin) <= band) ? EllipticityVerdict::critical
                                           : EllipticityVerdict::not_elliptic;
  rep.lambda = (rep.verdict == EllipticityVerdict::critical)
                   ? 0.0
                   : params.c * (0.5 + ae * (n - 1));
  // degenerate direction: eta = |xi|^2 g - xi (x) xi with xi = e_1
  rep.witness_xi.assign(n, 0.0);
  rep.witness_xi[0] = 1.0;
  rep.witness_eta.assign(n * n, 0.0);
  for (int i = 1; i < n; ++i) rep.witness_eta[i * n + i] = 1.0;
  return rep;
}

int sym_basis_dim(int n) { return n * (n + 1) / 2; }

void sym_to_coords(int n, const double* eta, double* coords) {
  const double r2 = std::sqrt(2.0);
  int idx = n;
  for (int i = 0; i < n; ++i) coords[i] = eta[i * n + i];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) coords[idx++] = r2 * eta[i * n + j];
}

void coords_to_sym(int n, const double* coords, double* eta) {
  const double inv_r2 = 1.0 / std::sqrt(2.0);
  int idx = n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) eta[i * n + j] = 0.0;
  for (int i = 0; i < n; ++i) eta[i * n + i] = coords[i];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      eta[i * n + j] = eta[j * n + i] = inv_r2 * coords[idx++];
    }
}

namespace {

// Minimum of the normalized quadratic form over eta at fixed unit xi,
// computed exactly: polarize combined_symbol over the orthonormal basis and
// take the smallest eigenvalue.
double eta_minimum(const FlowParams& params, const std::vector<double>& xi) {
  const int n = params.n;
  const int S = sym_basis_dim(n);
  SymbolInput in;
  in.params = params;
  in.xi = xi;
  in.eta.assign(n * n, 0.0);
  double X = 0.0;
  for (double v : xi) X += v * v;

  auto q = [&](const std::vector<double>& cds) {
    coords_to_sym(n, cds.data(), in.eta.data());
    return combined_symbol(in);
  };

  Eigen::MatrixXd B(S, S);
  std::vector<double> plus(S, 0.0), minus(S, 0.0);
  for (int r = 0; r < S; ++r)
    for (int s = r; s < S; ++s) {
      std::fill(plus.begin(), plus.end(), 0.0);
      std::fill(minus.begin(), minus.end(), 0.0);
      plus[r] += 1.0;
      plus[s] += 1.0;
      minus[r] += 1.0;
      minus[s] -= 1.0;
      const double val = 0.25 * (q(plus) - q(minus));
      B(r, s) = val;
      B(s, r) = val;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  return es.eigenvalues()(0) / (params.c * xpow(X, params.k + 1));
}

}  // namespace

double brute_force_min(const FlowParams& params, std::int64_t samples) {
  params.validate();
  if (samples < 10000) fail("brute_force_min: need at least 10^4 samples");
  const int n = params.n;
  const int S = sym_basis_dim(n);

  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SymbolInput in;
  in.params = params;
  in.xi.assign(n, 0.0);
  in.eta.assign(n * n, 0.0);
  std::vector<double> coords(S, 0.0);

  auto draw_unit = [&](std::vector<double>& v) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : v) {
        x = gauss(rng);
        norm += x * x;
      }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  };

  const double cpow = params.c;  // |xi| = |eta| = 1 below
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_xi(n, 0.0);
  best_xi[0] = 1.0;

  for (std::int64_t s = 0; s < samples; ++s) {
    draw_unit(in.xi);
    draw_unit(coords);
    coords_to_sym(n, coords.data(), in.eta.data());
    const double val = combined_symbol(in) / cpow;
    if (val < best) {
      best = val;
      best_xi = in.xi;
    }
  }

  // analytic candidate directions at a fixed unit frequency
  std::vector<double> e1(n, 0.0);
  e1[0] = 1.0;
  auto try_eta = [&](const std::vector<double>& xi, const std::vector<double>& eta) {
    double norm = 0.0;
    for (double v : eta) norm += v * v;
    if (norm < 1e-14) return;
    in.xi = xi;
    in.eta = eta;
    const double val = combined_symbol(in) / (cpow * norm);
    if (val < best) {
      best = val;
      best_xi = xi;
    }
  };
  std::vector<double> cand(n * n, 0.0);
  for (int i = 1; i < n; ++i) cand[i * n + i] = 1.0;  // |xi|^2 g - xi (x) xi
  try_eta(e1, cand);
  std::fill(cand.begin(), cand.end(), 0.0);
  for (int i = 0; i < n; ++i) cand[i * n + i] = 1.0;  // pure trace
  try_eta(e1, cand);
  std::fill(cand.begin(), cand.end(), 0.0);
  cand[0] = 1.0;  // xi (x) xi
  try_eta(e1, cand);

  // exact eta-minimum at the best sampled frequency, then local descent in xi
  double refined = std::min(eta_minimum(params, best_xi), eta_minimum(params, e1));
  std::vector<double> cur = best_xi, prop(n);
  double step = 0.3;
  for (int it = 0; it < 60; ++it) {
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      prop[i] = cur[i] + step * gauss(rng);
      norm += prop[i] * prop[i];
    }
    norm = std::sqrt(norm);
    for (double& x : prop) x /= norm;
    const double val = eta_minimum(params, prop);
    if (val < refined) {
      refined = val;
      cur = prop;
    } else {
      step *= 0.85;
    }
  }
  return std::min(best, refined);
}

std::vector<double> flat_symbol_matrix(const FlowParams& params,
                                       const std::vector<double>& xi) {
  params.validate();
  const int n = params.n;
  if (static_cast<int>(xi.size()) != n) fail("flat_symbol_matrix: xi must have length n");
  double X = 0.0;
  for (double v : xi) X += v * v;
  if (X == 0.0) fail("flat_symbol_matrix: xi must be nonzero");
  const int k = params.k;
  if (k == 0 && params.beta != 0.0)
    fail("flat_symbol_matrix: k = 0 requires beta = 0");
  const double ae = params.a_eff();
  const double c = params.c;
  const int S = sym_basis_dim(n);

  const double Xk = xpow(X, k);
  const double Xk1 = (k >= 1) ? xpow(X, k - 1) : 0.0;  // only used with k >= 1 weights

  std::vector<double> out(S * S, 0.0);
  std::vector<double> eta(n * n), sig(n * n), col(S), v(n), u(n);

  for (int s = 0; s < S; ++s) {
    std::vector<double> basis(S, 0.0);
    basis[s] = 1.0;
    coords_to_sym(n, basis.data(), eta.data());

    double T = 0.0, P = 0.0;
    for (int i = 0; i < n; ++i) {
      T += eta[i * n + i];
      v[i] = 0.0;
      for (int j = 0; j < n; ++j) v[i] += eta[i * n + j] * xi[j];
    }
    for (int i = 0; i < n; ++i) P += xi[i] * v[i];
    const double DS = X * T - P;

    // u is the (real) mode amplitude of the gauge vector field divided by i
    for (int i = 0; i < n; ++i) {
      u[i] = c * params.alpha * Xk * (v[i] - 0.5 * T * xi[i]);
      if (k >= 1 && params.beta != 0.0)
        u[i] += c * params.beta * Xk1 * (X * v[i] - 0.5 * P * xi[i]);
    }

    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double dric = 0.5 * (X * eta[i * n + j] + T * xi[i] * xi[j] -
                                   xi[i] * v[j] - v[i] * xi[j]);
        double val = c * Xk * dric;
        if (ae != 0.0 && i == j) val += c * ae * Xk * DS;
        if (k >= 1 && params.b != 0.0) val -= c * params.b * Xk1 * DS * xi[i] * xi[j];
        val += xi[i] * u[j] + u[i] * xi[j];
        sig[i * n + j] = val;
      }

    sym_to_coords(n, sig.data(), col.data());
    for (int r = 0; r < S; ++r) out[r * S + s] = col[r];
  }
  return out;
}

std::vector<double> linearize_at_flat(const FlowParams& params,
                                      const std::vector<int>& xi) {
  params.validate();
  const int n = params.n;
  if (n < 2 || n > 4)
    fail("linearize_at_flat: grid backend supports n in [2,4]");
  if (static_cast<int>(xi.size()) != n) fail("linearize_at_flat: xi must have length n");
  int maxfreq = 0;
  for (int f : xi) maxfreq = std::max(maxfreq, std::abs(f));
  if (maxfreq == 0) fail("linearize_at_flat: xi must be nonzero");

  int N = std::max(8, 3 * maxfreq);
  if (N % 2 != 0) ++N;
  Grid grid(n, N);
  const std::int64_t nodes = grid.node_count();

  // cos(xi . x) sampled on the grid
  std::vector<double> cosf(nodes);
  {
    int idx[4];
    for (std::int64_t nd = 0; nd < nodes; ++nd) {
      grid.decode(nd, idx);
      double phase = 0.0;
      for (int a = 0; a < n; ++a) phase += xi[a] * grid.coord(idx[a]);
      cosf[nd] = std::cos(phase);
    }
  }
  double den = 0.0;
  for (std::int64_t nd = 0; nd < nodes; ++nd) den += cosf[nd] * cosf[nd];

  const double eps = 1e-6;
  const int S = sym_basis_dim(n);
  MetricField flat = flat_metric(grid);
  std::vector<double> eta(n * n), out(S * S), col(S), dmat(n * n);

  auto gauged_rhs = [&](const MetricField& g) {
    TensorField t = ansatz_tensor(g, params);
    TensorField w = deturck_field(g, flat, params);
    return add(t, lie_derivative(w, g));
  };

  for (int s = 0; s < S; ++s) {
    std::vector<double> basis(S, 0.0);
    basis[s] = 1.0;
    coords_to_sym(n, basis.data(), eta.data());

    MetricField gp = flat, gm = flat;
    for (int c = 0; c < n * n; ++c) {
      if (eta[c] == 0.0) continue;
      double* p = gp.comp_data(c);
      double* m = gm.comp_data(c);
      for (std::int64_t nd = 0; nd < nodes; ++nd) {
        p[nd] += eps * eta[c] * cosf[nd];
        m[nd] -= eps * eta[c] * cosf[nd];
      }
    }
    TensorField diff = sub(gauged_rhs(gp), gauged_rhs(gm));

    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int t[2] = {i, j};
        const double* d = diff.comp_data(diff.comp_encode(t));
        double num = 0.0;
        for (std::int64_t nd = 0; nd < nodes; ++nd) num += d[nd] * cosf[nd];
        dmat[i * n + j] = num / (2.0 * eps * den);
      }
    sym_to_coords(n, dmat.data(), col.data());
    // d/dt eta_hat = M eta_hat on the mode; Sigma = -M
    for (int r = 0; r < S; ++r) out[r * S + s] = -col[r];
  }
  return out;
}

}  // namespace gflow
