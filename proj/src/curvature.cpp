#include "gflow/curvature.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace gflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_metric_shape(const TensorField& g, const char* op) {
  if (g.lower() != 2 || g.upper() != 0) fail(std::string(op) + ": expected a (2,0) field");
}

// 0.5 (F + F^T) for a (2,0) field, with the lower triangle mirrored from the
// upper so the result is symmetric to the last bit.  Exact-identity on fields
// that are already bitwise symmetric.
TensorField symmetrize_pair(const TensorField& f) {
  const Grid& gr = f.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();
  TensorField out(gr, 2, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const int tij[2] = {i, j};
      const int tji[2] = {j, i};
      const double* a = f.comp_data(f.comp_encode(tij));
      const double* b = f.comp_data(f.comp_encode(tji));
      double* o = out.comp_data(out.comp_encode(tij));
      for (std::int64_t nd = 0; nd < nodes; ++nd) o[nd] = 0.5 * (a[nd] + b[nd]);
      if (j != i)
        std::memcpy(out.comp_data(out.comp_encode(tji)), o, sizeof(double) * nodes);
    }
  return out;
}

// gam^c_{ab} assembled from a precomputed inverse; tuple (a,b,c).
TensorField christoffel_impl(const MetricField& g, const TensorField& ginv) {
  const Grid& gr = g.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();
  TensorField dg = partials_lower(g);  // (i,j,m) = d_m g_{ij}
  TensorField gam(gr, 2, 1);
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        const int tout[3] = {a, b, c};
        double* out = gam.comp_data(gam.comp_encode(tout));
        for (int d = 0; d < n; ++d) {
          const int tinv[2] = {c, d};
          const int t1[3] = {d, b, a};  // d_a g_{db}
          const int t2[3] = {a, d, b};  // d_b g_{ad}
          const int t3[3] = {a, b, d};  // d_d g_{ab}
          const double* gi = ginv.comp_data(ginv.comp_encode(tinv));
          const double* d1 = dg.comp_data(dg.comp_encode(t1));
          const double* d2 = dg.comp_data(dg.comp_encode(t2));
          const double* d3 = dg.comp_data(dg.comp_encode(t3));
          for (std::int64_t i = 0; i < nodes; ++i)
            out[i] += 0.5 * gi[i] * (d1[i] + d2[i] - d3[i]);
        }
        if (b != a) {
          const int tmir[3] = {b, a, c};
          std::memcpy(gam.comp_data(gam.comp_encode(tmir)), out, sizeof(double) * nodes);
        }
      }
  return dealias(gam);
}

}  // namespace

// ---- FlowParams ---------------------------------------------------------------

void FlowParams::validate() const {
  if (n < 2) fail("FlowParams: n must be >= 2");
  if (k < 0) fail("FlowParams: k must be >= 0");
  if (!(c > 0.0)) fail("FlowParams: c must be positive");
  if (obstruction_shift < 0.0) fail("FlowParams: obstruction shift must be >= 0");
  if (k == 0 && b != 0.0) fail("FlowParams: k = 0 requires b = 0");
}

FlowParams FlowParams::canonical(int n, int k, double a, double b, double c,
                                 double obstruction_shift) {
  FlowParams p;
  p.n = n;
  p.k = k;
  p.a = a;
  p.b = b;
  p.c = c;
  p.obstruction_shift = obstruction_shift;
  p.alpha = 0.5 + p.a_eff() - b;
  p.beta = b - p.a_eff();
  p.validate();
  return p;
}

FlowParams FlowParams::obstruction_preset(int n) {
  if (n < 4 || n % 2 != 0) fail("obstruction preset: n must be even and >= 4");
  const int k = n / 2 - 1;
  const double a = -1.0 / (2.0 * (n - 1));
  const double b = double(n - 2) / (2.0 * (n - 1));
  double fact = 1.0;
  for (int i = 2; i <= n / 2 - 2; ++i) fact *= i;
  const double c = 1.0 / ((n - 2) * std::pow(2.0, n / 2 - 2) * fact);
  return canonical(n, k, a, b, c);
}

// ---- curvature ------------------------------------------------------------------

TensorField christoffel(const MetricField& g) {
  require_metric_shape(g, "christoffel");
  return christoffel_impl(g, inverse_metric(g));
}

CurvaturePack ricci_scalar(const MetricField& g) {
  require_metric_shape(g, "ricci_scalar");
  const Grid& gr = g.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();

  TensorField ginv = inverse_metric(g);
  TensorField gam = christoffel_impl(g, ginv);
  TensorField dgam = partials_lower(gam);  // (a,b,m,c) = d_m gam^c_{ab}

  // trace gam^c_{cd} as a function of d
  TensorField trg(gr, 1, 0);
  for (int d = 0; d < n; ++d) {
    double* out = trg.comp_data(d);
    for (int c = 0; c < n; ++c) {
      const int t[3] = {c, d, c};
      const double* gd = gam.comp_data(gam.comp_encode(t));
      for (std::int64_t i = 0; i < nodes; ++i) out[i] += gd[i];
    }
  }

  TensorField lin(gr, 2, 0), quad(gr, 2, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int tij[2] = {i, j};
      double* lo = lin.comp_data(lin.comp_encode(tij));
      double* qo = quad.comp_data(quad.comp_encode(tij));
      for (int c = 0; c < n; ++c) {
        const int t1[4] = {i, j, c, c};  // d_c gam^c_{ij}
        const int t2[4] = {c, j, i, c};  // d_i gam^c_{cj}
        const double* a1 = dgam.comp_data(dgam.comp_encode(t1));
        const double* a2 = dgam.comp_data(dgam.comp_encode(t2));
        for (std::int64_t nd = 0; nd < nodes; ++nd) lo[nd] += a1[nd] - a2[nd];
      }
      for (int d = 0; d < n; ++d) {
        const int tij_d[3] = {i, j, d};
        const double* gij_d = gam.comp_data(gam.comp_encode(tij_d));
        const double* td = trg.comp_data(d);
        for (std::int64_t nd = 0; nd < nodes; ++nd) qo[nd] += td[nd] * gij_d[nd];
        for (int c = 0; c < n; ++c) {
          const int tid_c[3] = {i, d, c};
          const int tcj_d[3] = {c, j, d};
          const double* a = gam.comp_data(gam.comp_encode(tid_c));
          const double* bq = gam.comp_data(gam.comp_encode(tcj_d));
          for (std::int64_t nd = 0; nd < nodes; ++nd) qo[nd] -= a[nd] * bq[nd];
        }
      }
    }
  // symmetrize (the analytic tensor is symmetric; this removes roundoff skew)
  TensorField rsym = symmetrize_pair(add(lin, dealias(quad)));

  TensorField scal(gr, 0, 0);
  {
    double* out = scal.comp_data(0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int t[2] = {i, j};
        const double* gi = ginv.comp_data(ginv.comp_encode(t));
        const double* rj = rsym.comp_data(rsym.comp_encode(t));
        for (std::int64_t nd = 0; nd < nodes; ++nd) out[nd] += gi[nd] * rj[nd];
      }
  }
  CurvaturePack pack{std::move(gam), std::move(rsym), dealias(scal)};
  return pack;
}

// ---- covariant derivatives ---------------------------------------------------------

TensorField covariant_derivative_two(const TensorField& F,
                                     const TensorField* gamma_lower,
                                     const TensorField* gamma_upper) {
  const Grid& gr = F.grid();
  const int n = gr.dim(), p = F.lower(), q = F.upper();
  const std::int64_t nodes = gr.node_count();
  TensorField out = partials_lower(F);
  const bool lower_active = gamma_lower && p > 0;
  const bool upper_active = gamma_upper && q > 0;
  if (!lower_active && !upper_active) return out;

  TensorField corr(gr, p + 1, q);
  int t[8], ft[8];
  for (int oc = 0; oc < out.comps(); ++oc) {
    out.comp_decode(oc, t);  // t[0..p-1] lowers, t[p] = m, t[p+1..p+q] uppers
    const int m = t[p];
    double* cd = corr.comp_data(oc);
    if (lower_active) {
      for (int s = 0; s < p; ++s)
        for (int d = 0; d < n; ++d) {
          for (int i = 0; i < p; ++i) ft[i] = (i == s) ? d : t[i];
          for (int i = 0; i < q; ++i) ft[p + i] = t[p + 1 + i];
          const int gt[3] = {m, t[s], d};
          const double* gl = gamma_lower->comp_data(gamma_lower->comp_encode(gt));
          const double* fv = F.comp_data(F.comp_encode(ft));
          for (std::int64_t nd = 0; nd < nodes; ++nd) cd[nd] -= gl[nd] * fv[nd];
        }
    }
    if (upper_active) {
      for (int s = 0; s < q; ++s)
        for (int d = 0; d < n; ++d) {
          for (int i = 0; i < p; ++i) ft[i] = t[i];
          for (int i = 0; i < q; ++i) ft[p + i] = (i == s) ? d : t[p + 1 + i];
          const int gt[3] = {m, d, t[p + 1 + s]};
          const double* gu = gamma_upper->comp_data(gamma_upper->comp_encode(gt));
          const double* fv = F.comp_data(F.comp_encode(ft));
          for (std::int64_t nd = 0; nd < nodes; ++nd) cd[nd] += gu[nd] * fv[nd];
        }
    }
  }
  return add(out, dealias(corr));
}

TensorField covariant_derivative(const TensorField& F, const TensorField& gamma) {
  return covariant_derivative_two(F, &gamma, &gamma);
}

TensorField rough_laplacian_power(const TensorField& F, const MetricField& g, int k,
                                  const TensorField* gamma) {
  if (k < 0) fail("rough_laplacian_power: k must be >= 0");
  if (k == 0) return F;
  require_metric_shape(g, "rough_laplacian_power");
  const Grid& gr = F.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();
  TensorField gam = gamma ? *gamma : christoffel(g);
  TensorField ginv = inverse_metric(g);

  TensorField cur = F;
  int t[8], dt[8];
  for (int iter = 0; iter < k; ++iter) {
    const int p = cur.lower(), q = cur.upper();
    TensorField d2 = covariant_derivative(covariant_derivative(cur, gam), gam);
    TensorField tr(gr, p, q);
    for (int oc = 0; oc < tr.comps(); ++oc) {
      tr.comp_decode(oc, t);
      double* out = tr.comp_data(oc);
      for (int m1 = 0; m1 < n; ++m1)
        for (int m2 = 0; m2 < n; ++m2) {
          for (int i = 0; i < p; ++i) dt[i] = t[i];
          dt[p] = m1;
          dt[p + 1] = m2;
          for (int i = 0; i < q; ++i) dt[p + 2 + i] = t[p + i];
          const int gt[2] = {m1, m2};
          const double* gi = ginv.comp_data(ginv.comp_encode(gt));
          const double* dv = d2.comp_data(d2.comp_encode(dt));
          for (std::int64_t nd = 0; nd < nodes; ++nd) out[nd] += gi[nd] * dv[nd];
        }
    }
    cur = dealias(tr);
  }
  return cur;
}

// ---- flow right-hand side ------------------------------------------------------------

TensorField ansatz_tensor(const MetricField& g, const FlowParams& params) {
  params.validate();
  require_metric_shape(g, "ansatz_tensor");
  if (g.grid().dim() != params.n)
    fail("ansatz_tensor: params.n does not match the grid dimension");

  CurvaturePack pack = ricci_scalar(g);
  TensorField rhs = rough_laplacian_power(pack.ricci, g, params.k, &pack.christoffel);

  const double ae = params.a_eff();
  if (ae != 0.0) {
    TensorField sk = rough_laplacian_power(pack.scalar, g, params.k, &pack.christoffel);
    const double* sv = sk.comp_data(0);
    TensorField sg(g.grid(), 2, 0);
    for (int c = 0; c < sg.comps(); ++c) {
      const double* gv = g.comp_data(c);
      double* out = sg.comp_data(c);
      for (std::int64_t nd = 0; nd < g.nodes(); ++nd) out[nd] = sv[nd] * gv[nd];
    }
    axpy(rhs, ae, dealias(sg));
  }

  if (params.k >= 1 && params.b != 0.0) {
    TensorField hess =
        covariant_derivative(covariant_derivative(pack.scalar, pack.christoffel),
                             pack.christoffel);
    axpy(rhs, -params.b,
         rough_laplacian_power(hess, g, params.k - 1, &pack.christoffel));
  }

  const double sign = (params.k % 2 == 0) ? -1.0 : 1.0;  // (-1)^{k+1}
  // the composite is symmetric analytically but its terms accumulate in slot
  // order, so enforce bitwise symmetry at the boundary
  return symmetrize_pair(scale(rhs, sign * params.c));
}

TensorField lie_derivative(const VectorFieldOnGrid& W, const MetricField& g) {
  if (W.lower() != 0 || W.upper() != 1) fail("lie_derivative: W must be a (0,1) field");
  require_metric_shape(g, "lie_derivative");
  if (W.grid() != g.grid()) fail("lie_derivative: grid mismatch");
  const Grid& gr = g.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();
  TensorField dg = partials_lower(g);  // (i,j,m) = d_m g_{ij}
  TensorField dW = partials_lower(W);  // (i,m)   = d_i W^m
  TensorField out(gr, 2, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const int tij[2] = {i, j};
      double* ov = out.comp_data(out.comp_encode(tij));
      for (int m = 0; m < n; ++m) {
        const int tg[3] = {i, j, m};
        const int tmj[2] = {m, j};
        const int tim[2] = {i, m};
        const int di[2] = {i, m};
        const int dj[2] = {j, m};
        const double* wv = W.comp_data(m);
        const double* dgv = dg.comp_data(dg.comp_encode(tg));
        const double* gmj = g.comp_data(g.comp_encode(tmj));
        const double* gim = g.comp_data(g.comp_encode(tim));
        const double* dwi = dW.comp_data(dW.comp_encode(di));
        const double* dwj = dW.comp_data(dW.comp_encode(dj));
        for (std::int64_t nd = 0; nd < nodes; ++nd)
          ov[nd] += wv[nd] * dgv[nd] + gmj[nd] * dwi[nd] + gim[nd] * dwj[nd];
      }
      if (j != i) {
        const int tji[2] = {j, i};
        std::memcpy(out.comp_data(out.comp_encode(tji)), ov, sizeof(double) * nodes);
      }
    }
  return out;
}

}  // namespace gflow
