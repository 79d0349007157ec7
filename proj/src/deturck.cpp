#include "gflow/deturck.hpp"

#include <stdexcept>
#include <string>

namespace gflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// g-trace of the two derivative slots appended by a double mixed derivative.
TensorField trace_last_two(const TensorField& d2, const TensorField& ginv, int p, int q) {
  const Grid& gr = d2.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();
  TensorField out(gr, p, q);
  int t[8], dt[8];
  for (int oc = 0; oc < out.comps(); ++oc) {
    out.comp_decode(oc, t);
    double* ov = out.comp_data(oc);
    for (int m1 = 0; m1 < n; ++m1)
      for (int m2 = 0; m2 < n; ++m2) {
        for (int i = 0; i < p; ++i) dt[i] = t[i];
        dt[p] = m1;
        dt[p + 1] = m2;
        for (int i = 0; i < q; ++i) dt[p + 2 + i] = t[p + i];
        const int gt[2] = {m1, m2};
        const double* gi = ginv.comp_data(ginv.comp_encode(gt));
        const double* dv = d2.comp_data(d2.comp_encode(dt));
        for (std::int64_t nd = 0; nd < nodes; ++nd) ov[nd] += gi[nd] * dv[nd];
      }
  }
  return dealias(out);
}

}  // namespace

TensorField difference_tensor(const MetricField& g, const MetricField& h) {
  if (g.grid() != h.grid()) fail("difference_tensor: grid mismatch");
  return sub(christoffel(g), christoffel(h));
}

TensorField mixed_covariant_derivative(const TensorField& F, const MetricField& g,
                                       const MetricField& h) {
  if (F.grid() != g.grid() || F.grid() != h.grid())
    fail("mixed_covariant_derivative: grid mismatch");
  TensorField gg = christoffel(g);
  TensorField gh = christoffel(h);
  return covariant_derivative_two(F, &gg, &gh);
}

TensorField map_laplacian(const TensorField& F, const MetricField& g,
                          const MetricField& h) {
  TensorField gg = christoffel(g);
  TensorField gh = christoffel(h);
  TensorField ginv = inverse_metric(g);
  TensorField d2 = covariant_derivative_two(covariant_derivative_two(F, &gg, &gh),
                                            &gg, &gh);
  return trace_last_two(d2, ginv, F.lower(), F.upper());
}

VectorFieldOnGrid deturck_field(const MetricField& g, const MetricField& h,
                                const FlowParams& params, const TensorField* gamma_g) {
  params.validate();
  if (params.k == 0 && params.beta != 0.0)
    fail("deturck_field: k = 0 requires beta = 0");
  if (g.grid() != h.grid()) fail("deturck_field: grid mismatch");
  const Grid& gr = g.grid();
  const int n = gr.dim();
  const std::int64_t nodes = gr.node_count();

  TensorField gg = gamma_g ? *gamma_g : christoffel(g);
  TensorField gh = christoffel(h);
  TensorField A = sub(gg, gh);
  TensorField ginv = inverse_metric(g);

  auto lap_power = [&](TensorField X, int times) {
    for (int i = 0; i < times; ++i) {
      TensorField d2 = covariant_derivative_two(covariant_derivative_two(X, &gg, &gh),
                                                &gg, &gh);
      X = trace_last_two(d2, ginv, X.lower(), X.upper());
    }
    return X;
  };

  VectorFieldOnGrid acc(gr, 0, 1);
  if (params.alpha != 0.0) {
    VectorFieldOnGrid V(gr, 0, 1);
    for (int c = 0; c < n; ++c) {
      double* out = V.comp_data(c);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const int tg[2] = {a, b};
          const int ta[3] = {a, b, c};
          const double* gi = ginv.comp_data(ginv.comp_encode(tg));
          const double* av = A.comp_data(A.comp_encode(ta));
          for (std::int64_t nd = 0; nd < nodes; ++nd) out[nd] += gi[nd] * av[nd];
        }
    }
    axpy(acc, params.alpha, lap_power(dealias(V), params.k));
  }

  if (params.k >= 1 && params.beta != 0.0) {
    // (mixed^2 A) has tuple (a, b, m1, m2, c); pair m2 with a and m1 with b.
    TensorField d2 = covariant_derivative_two(covariant_derivative_two(A, &gg, &gh),
                                              &gg, &gh);
    VectorFieldOnGrid Z(gr, 0, 1);
    for (int c = 0; c < n; ++c) {
      double* out = Z.comp_data(c);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int m1 = 0; m1 < n; ++m1)
            for (int m2 = 0; m2 < n; ++m2) {
              const int t1[2] = {m2, a};
              const int t2[2] = {m1, b};
              const int td[5] = {a, b, m1, m2, c};
              const double* g1 = ginv.comp_data(ginv.comp_encode(t1));
              const double* g2 = ginv.comp_data(ginv.comp_encode(t2));
              const double* dv = d2.comp_data(d2.comp_encode(td));
              for (std::int64_t nd = 0; nd < nodes; ++nd)
                out[nd] += g1[nd] * g2[nd] * dv[nd];
            }
    }
    axpy(acc, params.beta, lap_power(dealias(Z), params.k - 1));
  }

  const double s = ((params.k % 2 == 0) ? 1.0 : -1.0) * params.c;  // (-1)^k c
  return scale(acc, s);
}

}  // namespace gflow
