#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "gflow/tensor_field.hpp"

using namespace gflow;

// ---------------------------------------------------------------------------
// Independent oracles.  These are written against textbook definitions only
// and deliberately share no code with the library implementations.
// ---------------------------------------------------------------------------

// Eighth-order centered finite-difference first derivative along one axis.
static TensorField fd8_axis(const TensorField& f, int axis) {
  static const double c[4] = {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
  const Grid& g = f.grid();
  const int N = g.points();
  const double h = g.spacing();
  TensorField out(g, f.lower(), f.upper());
  int idx[4], jdx[4];
  for (int comp = 0; comp < f.comps(); ++comp) {
    for (std::int64_t node = 0; node < g.node_count(); ++node) {
      g.decode(node, idx);
      double acc = 0.0;
      for (int j = 1; j <= 4; ++j) {
        std::memcpy(jdx, idx, sizeof(jdx));
        jdx[axis] = (idx[axis] + j) % N;
        const double up = f.at(comp, g.encode(jdx));
        jdx[axis] = (idx[axis] - j + N) % N;
        const double dn = f.at(comp, g.encode(jdx));
        acc += c[j - 1] * (up - dn);
      }
      out.at(comp, node) = acc / h;
    }
  }
  return out;
}

// Direct-summation Fourier evaluation: compute every DFT coefficient of one
// component by explicit O(nodes^2) summation, then evaluate the series at an
// arbitrary point using the standard signed-frequency convention (bin k maps
// to k for k <= N/2, else k - N).
static double direct_series_eval(const TensorField& f, int comp, const double* point) {
  const Grid& g = f.grid();
  const int n = g.dim(), N = g.points();
  const std::int64_t nodes = g.node_count();
  int idx[4], bidx[4];
  std::complex<double> value(0.0, 0.0);
  for (std::int64_t bin = 0; bin < nodes; ++bin) {
    g.decode(bin, bidx);
    std::complex<double> coef(0.0, 0.0);
    for (std::int64_t node = 0; node < nodes; ++node) {
      g.decode(node, idx);
      double phase = 0.0;
      for (int a = 0; a < n; ++a) phase -= bidx[a] * idx[a] * g.spacing();
      coef += f.at(comp, node) * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    coef /= double(nodes);
    double phase = 0.0;
    for (int a = 0; a < n; ++a) {
      const int m = (bidx[a] <= N / 2) ? bidx[a] : bidx[a] - N;
      phase += m * point[a];
    }
    value += coef * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  return value.real();
}

static TensorField scalar_of(const Grid& g, double (*fn)(double, double, double)) {
  TensorField f(g, 0, 0);
  int idx[4] = {0, 0, 0, 0};
  for (std::int64_t node = 0; node < g.node_count(); ++node) {
    g.decode(node, idx);
    f.at(0, node) = fn(g.coord(idx[0]), g.coord(idx[1]), g.dim() > 2 ? g.coord(idx[2]) : 0.0);
  }
  return f;
}

// ---------------------------------------------------------------------------

TEST_CASE("grid construction validates its arguments") {
  CHECK_THROWS_AS(Grid(1, 16), std::invalid_argument);
  CHECK_THROWS_AS(Grid(5, 16), std::invalid_argument);
  CHECK_THROWS_AS(Grid(3, 7), std::invalid_argument);
  CHECK_THROWS_AS(Grid(3, 6), std::invalid_argument);
  Grid g(3, 16);
  CHECK(g.node_count() == 4096);
  CHECK(g.dealias_band() == 5);
  int idx[3] = {3, 14, 9};
  int back[3];
  g.decode(g.encode(idx), back);
  CHECK(std::memcmp(idx, back, sizeof(idx)) == 0);
}

TEST_CASE("derivative of sin(x1) is cos(x1) to machine precision") {
  Grid g(2, 16);
  TensorField f = scalar_of(g, [](double x, double, double) { return std::sin(x); });
  TensorField d = spectral_derivative(f, 0);
  int idx[2];
  double worst = 0.0;
  for (std::int64_t node = 0; node < g.node_count(); ++node) {
    g.decode(node, idx);
    worst = std::max(worst, std::fabs(d.at(0, node) - std::cos(g.coord(idx[0]))));
  }
  CHECK(worst <= 1e-13);
}

TEST_CASE("derivative of a constant field is identically zero") {
  Grid g(3, 8);
  TensorField f(g, 1, 1);
  for (auto& v : f.raw()) v = 2.75;
  for (int axis = 0; axis < 3; ++axis) {
    TensorField d = spectral_derivative(f, axis);
    for (double v : d.raw()) CHECK(v == 0.0);
  }
}

TEST_CASE("derivative matches an eighth-order finite-difference oracle") {
  Grid g(2, 32);
  TensorField f = random_band_limited(g, 0, 0, 2, 20260816ull, 0.1);
  for (int axis = 0; axis < 2; ++axis) {
    TensorField spec = spectral_derivative(f, axis);
    TensorField fd = fd8_axis(f, axis);
    CHECK(sup_norm(sub(spec, fd)) <= 1e-6);
  }
}

TEST_CASE("mixed partials commute") {
  Grid g(3, 16);
  TensorField f = random_band_limited(g, 0, 0, 3, 77ull, 1.0);
  TensorField ab = spectral_derivative(spectral_derivative(f, 0), 1);
  TensorField ba = spectral_derivative(spectral_derivative(f, 1), 0);
  CHECK(sup_norm(sub(ab, ba)) <= 1e-12 * std::max(1.0, sup_norm(ab)));
}

TEST_CASE("partials_lower appends the derivative slot last and matches per-axis calls") {
  Grid g(2, 8);
  TensorField f = random_band_limited(g, 1, 1, 2, 5ull, 1.0);
  TensorField all = partials_lower(f);
  REQUIRE(all.lower() == 2);
  REQUIRE(all.upper() == 1);
  int t[2], t2[3];
  for (int m = 0; m < 2; ++m) {
    TensorField d = spectral_derivative(f, m);
    for (int c = 0; c < f.comps(); ++c) {
      f.comp_decode(c, t);
      t2[0] = t[0];  // original lower slot
      t2[1] = m;     // new derivative slot sits after the lower block
      t2[2] = t[1];  // original upper slot
      const double* lhs = all.comp_data(all.comp_encode(t2));
      const double* rhs = d.comp_data(c);
      CHECK(std::memcmp(lhs, rhs, sizeof(double) * g.node_count()) == 0);
    }
  }
}

TEST_CASE("l2 inner product of the flat metric with itself on T^3") {
  Grid g(3, 16);
  MetricField delta = flat_metric(g);
  const double got = l2_inner(delta, delta, delta);
  const double want = 3.0 * kTwoPi * kTwoPi * kTwoPi;
  CHECK(std::fabs(got - want) <= 1e-12 * want);
}

TEST_CASE("l2 inner product with a zero field vanishes") {
  Grid g(3, 8);
  MetricField delta = flat_metric(g);
  TensorField z(g, 2, 0);
  CHECK(l2_inner(z, delta, delta) == 0.0);
}

TEST_CASE("l2 inner product of sin(x1)*delta with itself on T^3") {
  Grid g(3, 16);
  MetricField delta = flat_metric(g);
  TensorField f(g, 2, 0);
  int idx[3];
  for (int i = 0; i < 3; ++i) {
    const int t[2] = {i, i};
    double* d = f.comp_data(f.comp_encode(t));
    for (std::int64_t node = 0; node < g.node_count(); ++node) {
      g.decode(node, idx);
      d[node] = std::sin(g.coord(idx[0]));
    }
  }
  const double got = l2_inner(f, f, delta);
  const double want = 3.0 * kTwoPi * kTwoPi * kTwoPi / 2.0;
  CHECK(std::fabs(got - want) <= 1e-12 * want);
}

TEST_CASE("l2 inner product is symmetric and positive definite under a curved metric") {
  Grid g(3, 8);
  MetricField h = perturbed_flat_metric(
      g, {{1, 0, 0, 0}}, {{0.5, 0.1, 0.0, 0.1, 0.3, 0.0, 0.0, 0.0, 0.2}}, {0.4});
  REQUIRE(is_spd(h));
  TensorField F = random_band_limited(g, 2, 0, 2, 11ull, 1.0, true);
  TensorField G = random_band_limited(g, 2, 0, 2, 12ull, 1.0, true);
  const double fg = l2_inner(F, G, h);
  const double gf = l2_inner(G, F, h);
  const double ff = l2_inner(F, F, h);
  CHECK(std::fabs(fg - gf) <= 1e-10 * (1.0 + std::fabs(ff)));
  CHECK(ff > 0.0);
}

TEST_CASE("interpolation reproduces node values bit-exactly") {
  Grid g(2, 16);
  TensorField f = random_band_limited(g, 2, 0, 5, 99ull, 1.0, true);
  int idx[2] = {3, 7};
  double point[2] = {g.coord(3), g.coord(7)};
  std::vector<double> v = interpolate(f, point);
  const std::int64_t node = g.encode(idx);
  for (int c = 0; c < f.comps(); ++c) CHECK(v[c] == f.at(c, node));

  // a negative exact multiple of the spacing wraps onto a node as well
  double wrapped[2] = {-g.spacing(), g.coord(7)};
  int widx[2] = {15, 7};
  std::vector<double> w = interpolate(f, wrapped);
  const std::int64_t wnode = g.encode(widx);
  for (int c = 0; c < f.comps(); ++c) CHECK(w[c] == f.at(c, wnode));
}

TEST_CASE("interpolation of sin(x1) off the grid") {
  Grid g(2, 16);
  TensorField f = scalar_of(g, [](double x, double, double) { return std::sin(x); });
  double point[2] = {0.5, 0.0};
  std::vector<double> v = interpolate(f, point);
  CHECK(std::fabs(v[0] - std::sin(0.5)) <= 1e-12);
}

TEST_CASE("interpolation matches direct summation of the Fourier series") {
  Grid g(3, 8);
  TensorField f = random_band_limited(g, 1, 0, 2, 314ull, 1.0);
  TrigInterpolant ti(f);
  const double pts[5][3] = {{0.3, 1.7, 5.1},
                            {2.2, 0.01, 3.9},
                            {6.1, 4.4, 0.7},
                            {1.0, 1.0, 1.0},
                            {5.55, 2.34, 4.05}};
  double out[3];
  for (const auto& p : pts) {
    ti.eval(p, out);
    for (int c = 0; c < 3; ++c)
      CHECK(std::fabs(out[c] - direct_series_eval(f, c, p)) <= 1e-10);
  }
}

TEST_CASE("snapshot round-trips bit-exactly") {
  Grid g(2, 8);
  TensorField f = random_band_limited(g, 1, 1, 3, 4242ull, 2.5);
  const std::string path = "gf_snapshot_test.bin";
  write_snapshot(path, f);
  TensorField back = read_snapshot(path);
  std::remove(path.c_str());
  REQUIRE(back.grid() == g);
  REQUIRE(back.lower() == 1);
  REQUIRE(back.upper() == 1);
  CHECK(std::memcmp(back.raw().data(), f.raw().data(),
                    sizeof(double) * f.raw().size()) == 0);
}

TEST_CASE("whole-cell shifts commute bit-exactly with derivative and filter") {
  Grid g(2, 16);
  TensorField f = random_band_limited(g, 2, 0, 7, 2024ull, 1.0, true);
  const int cells[2] = {5, 9};
  TensorField shifted = shift_field(f, cells);

  TensorField a = spectral_derivative(shifted, 0);
  TensorField b = shift_field(spectral_derivative(f, 0), cells);
  CHECK(std::memcmp(a.raw().data(), b.raw().data(), sizeof(double) * a.raw().size()) == 0);

  TensorField c = dealias(shifted);
  TensorField d = shift_field(dealias(f), cells);
  CHECK(std::memcmp(c.raw().data(), d.raw().data(), sizeof(double) * c.raw().size()) == 0);
}

TEST_CASE("the band filter keeps low modes and annihilates high ones") {
  Grid g(2, 16);  // band = 5
  TensorField lo = scalar_of(g, [](double x, double y, double) { return std::cos(3 * x + 2 * y); });
  CHECK(sup_norm(sub(dealias(lo), lo)) <= 1e-12);
  TensorField hi = scalar_of(g, [](double x, double, double) { return std::cos(6 * x); });
  CHECK(sup_norm(dealias(hi)) <= 1e-12);
}

TEST_CASE("metric inverse inverts pointwise") {
  Grid g(3, 8);
  MetricField m = perturbed_flat_metric(
      g, {{1, 1, 0, 0}, {0, 1, 1, 0}},
      {{0.3, 0.0, 0.1, 0.0, -0.2, 0.0, 0.1, 0.0, 0.4},
       {0.0, 0.2, 0.0, 0.2, 0.1, 0.0, 0.0, 0.0, -0.3}},
      {0.3, 0.25});
  REQUIRE(is_spd(m));
  TensorField inv = inverse_metric(m, false);
  int ti[2], tj[2];
  double worst = 0.0;
  for (std::int64_t node = 0; node < g.node_count(); ++node)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) {
          ti[0] = i, ti[1] = k;
          tj[0] = k, tj[1] = j;
          s += m.at(m.comp_encode(ti), node) * inv.at(inv.comp_encode(tj), node);
        }
        worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
      }
  CHECK(worst <= 1e-12);
}

TEST_CASE("singular metric is rejected with the offending node named") {
  Grid g(3, 8);
  MetricField m = flat_metric(g);
  int idx[3] = {1, 2, 3};
  const std::int64_t node = g.encode(idx);
  for (int j = 0; j < 3; ++j) {
    const int t[2] = {0, j};
    m.at(m.comp_encode(t), node) = 0.0;
  }
  try {
    inverse_metric(m, false);
    FAIL("expected inverse_metric to throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("(1,2,3)") != std::string::npos);
  }
}

TEST_CASE("positive-definiteness probe flags an indefinite node") {
  Grid g(2, 8);
  MetricField m = flat_metric(g);
  CHECK(is_spd(m));
  int idx[2] = {4, 4};
  const int t[2] = {0, 0};
  m.at(m.comp_encode(t), g.encode(idx)) = -1.0;
  std::int64_t bad = -1;
  CHECK_FALSE(is_spd(m, &bad));
  CHECK(bad == g.encode(idx));
  CHECK_THROWS_AS(require_spd(m, "test"), std::runtime_error);
}

TEST_CASE("random band-limited fields are reproducible and honor symmetry") {
  Grid g(2, 16);
  TensorField a = random_band_limited(g, 2, 0, 4, 123ull, 1.0, true);
  TensorField b = random_band_limited(g, 2, 0, 4, 123ull, 1.0, true);
  CHECK(std::memcmp(a.raw().data(), b.raw().data(), sizeof(double) * a.raw().size()) == 0);
  TensorField c = random_band_limited(g, 2, 0, 4, 124ull, 1.0, true);
  CHECK(std::memcmp(a.raw().data(), c.raw().data(), sizeof(double) * a.raw().size()) != 0);
  CHECK(sup_norm(a) == doctest::Approx(1.0).epsilon(1e-12));
  int t01[2] = {0, 1}, t10[2] = {1, 0};
  CHECK(std::memcmp(a.comp_data(a.comp_encode(t01)), a.comp_data(a.comp_encode(t10)),
                    sizeof(double) * g.node_count()) == 0);
}

TEST_CASE("non-finite inputs are rejected") {
  Grid g(2, 8);
  TensorField f(g, 0, 0);
  f.at(0, 5) = std::nan("");
  CHECK_THROWS_AS(spectral_derivative(f, 0), std::invalid_argument);
  CHECK_THROWS_AS(partials_lower(f), std::invalid_argument);
}
