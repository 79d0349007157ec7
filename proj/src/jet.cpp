#include "gflow/jet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace gflow {
namespace {

constexpr int kMaxVars = 4;
constexpr int kMaxDegree = 12;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("jet: " + msg);
}

void require(bool ok, const char* msg) {
  if (!ok) fail(msg);
}

// Monomial tables for one variable count, built once to the maximal degree.
// Enumeration is degree-major, so the table for a lower order is a prefix of
// the same table and every jet of the same variable count can share
// positions.
struct JetSpace {
  int vars = 0;
  std::vector<std::array<int, kMaxVars>> expo;
  std::vector<int> degree;          // total degree per monomial
  std::vector<std::uint32_t> key;   // 4 bits per exponent
  std::vector<int> offset;          // offset[d] = first monomial of degree d
  std::vector<int> lookup;          // key -> position
};

std::uint32_t pack_key(const std::array<int, kMaxVars>& e) {
  return static_cast<std::uint32_t>(e[0]) |
         (static_cast<std::uint32_t>(e[1]) << 4) |
         (static_cast<std::uint32_t>(e[2]) << 8) |
         (static_cast<std::uint32_t>(e[3]) << 12);
}

void enumerate_degree(int vars, int axis, int left,
                      std::array<int, kMaxVars>& cur, JetSpace& out) {
  if (axis == vars - 1) {
    cur[axis] = left;
    out.expo.push_back(cur);
    cur[axis] = 0;
    return;
  }
  for (int e = left; e >= 0; --e) {
    cur[axis] = e;
    enumerate_degree(vars, axis + 1, left - e, cur, out);
  }
  cur[axis] = 0;
}

const JetSpace& space(int vars) {
  static std::mutex mu;
  static std::array<std::unique_ptr<JetSpace>, kMaxVars + 1> cache;
  require(vars >= 2 && vars <= kMaxVars, "variable count must be 2..4");
  std::lock_guard<std::mutex> lock(mu);
  if (!cache[vars]) {
    auto sp = std::make_unique<JetSpace>();
    sp->vars = vars;
    std::array<int, kMaxVars> cur{};
    sp->offset.assign(kMaxDegree + 2, 0);
    for (int d = 0; d <= kMaxDegree; ++d) {
      sp->offset[d] = static_cast<int>(sp->expo.size());
      enumerate_degree(vars, 0, d, cur, *sp);
    }
    sp->offset[kMaxDegree + 1] = static_cast<int>(sp->expo.size());
    const int count = static_cast<int>(sp->expo.size());
    sp->degree.resize(count);
    sp->key.resize(count);
    sp->lookup.assign(1u << (4 * kMaxVars), -1);
    for (int i = 0; i < count; ++i) {
      const auto& e = sp->expo[i];
      sp->degree[i] = e[0] + e[1] + e[2] + e[3];
      sp->key[i] = pack_key(e);
      sp->lookup[sp->key[i]] = i;
    }
    cache[vars] = std::move(sp);
  }
  return *cache[vars];
}

int coeff_count(int vars, int order) {
  require(order >= 0 && order <= kMaxDegree, "order must be 0..12");
  return space(vars).offset[order + 1];
}

void check_scalar(const JetScalar& f) {
  require(f.vars >= 2 && f.vars <= kMaxVars, "variable count must be 2..4");
  require(f.order >= 0 && f.order <= kMaxDegree, "order must be 0..12");
  require(static_cast<int>(f.coeff.size()) == coeff_count(f.vars, f.order),
          "coefficient storage does not match (vars, order)");
}

void check_pair(const JetScalar& a, const JetScalar& b) {
  check_scalar(a);
  check_scalar(b);
  require(a.vars == b.vars, "operands live in different variable counts");
}

JetScalar zero_jet(int vars, int order) {
  JetScalar f;
  f.vars = vars;
  f.order = order;
  f.coeff.assign(coeff_count(vars, order), 0.0);
  return f;
}

// ------------------------------------------------------------------ maps

// Gauss-Jordan inverse for n <= 4; returns false when a pivot collapses.
bool invert_dense(int n, const double* a, double* out) {
  double m[kMaxVars][2 * kMaxVars];
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m[i][j] = a[i * n + j];
    for (int j = 0; j < n; ++j) m[i][n + j] = (i == j) ? 1.0 : 0.0;
  }
  double scale = 0.0;
  for (int i = 0; i < n * n; ++i) scale = std::max(scale, std::fabs(a[i]));
  if (scale == 0.0) return false;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    if (std::fabs(m[pivot][col]) < 1e-12 * scale) return false;
    if (pivot != col)
      for (int j = 0; j < 2 * n; ++j) std::swap(m[pivot][j], m[col][j]);
    const double inv = 1.0 / m[col][col];
    for (int j = 0; j < 2 * n; ++j) m[col][j] *= inv;
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      if (f == 0.0) continue;
      for (int j = 0; j < 2 * n; ++j) m[r][j] -= f * m[col][j];
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = m[i][n + j];
  return true;
}

void check_map(const JetMap& phi) {
  require(phi.n_src >= 2 && phi.n_src <= kMaxVars &&
              phi.n_dst >= 2 && phi.n_dst <= kMaxVars,
          "map dimensions must be 2..4");
  require(static_cast<int>(phi.comp.size()) == phi.n_dst,
          "map needs one component per target variable");
  for (const JetScalar& c : phi.comp) {
    check_scalar(c);
    require(c.vars == phi.n_src, "map components must use source variables");
    require(c.order == phi.order, "map components must share the map order");
  }
}

// Composition operator for a fixed inner map: one truncated jet per target
// monomial, so applying a composition to any number of component jets costs
// one pass over the coefficients each.
struct ComposeOp {
  int n_src = 0;
  int n_dst = 0;
  int out_order = 0;
  std::vector<std::vector<double>> mono;  // per dst monomial, src coefficients
};

ComposeOp build_compose(const std::vector<JetScalar>& comp, int n_src,
                        int n_dst, int out_order) {
  ComposeOp op;
  op.n_src = n_src;
  op.n_dst = n_dst;
  op.out_order = out_order;
  const JetSpace& sd = space(n_dst);
  const int rows = sd.offset[out_order + 1];
  op.mono.resize(rows);
  std::vector<JetScalar> trunc(n_dst);
  for (int k = 0; k < n_dst; ++k) {
    require(comp[k].order >= out_order,
            "composition operator needs inner jets at the output order");
    trunc[k] = comp[k];
    if (trunc[k].order > out_order) {
      trunc[k].order = out_order;
      trunc[k].coeff.resize(coeff_count(n_src, out_order));
    }
    require(std::fabs(trunc[k].coeff[0]) == 0.0,
            "composition requires a map fixing the origin");
  }
  std::vector<JetScalar> jets(rows);
  jets[0] = jet_constant(n_src, out_order, 1.0);
  op.mono[0] = jets[0].coeff;
  for (int r = 1; r < rows; ++r) {
    std::array<int, kMaxVars> e = sd.expo[r];
    int axis = 0;
    while (e[axis] == 0) ++axis;
    e[axis] -= 1;
    const int prev = sd.lookup[pack_key(e)];
    jets[r] = jet_mul(jets[prev], trunc[axis]);
    op.mono[r] = jets[r].coeff;
  }
  return op;
}

JetScalar apply_compose(const ComposeOp& op, const JetScalar& f) {
  const int r = std::min(f.order, op.out_order);
  JetScalar out = zero_jet(op.n_src, r);
  const JetSpace& sd = space(op.n_dst);
  const int n_out = static_cast<int>(out.coeff.size());
  const int rows = std::min(static_cast<int>(f.coeff.size()),
                            sd.offset[r + 1]);
  for (int e = 0; e < rows; ++e) {
    const double c = f.coeff[e];
    if (c == 0.0) continue;
    const std::vector<double>& row = op.mono[e];
    for (int j = 0; j < n_out; ++j) out.coeff[j] += c * row[j];
  }
  return out;
}

// ---------------------------------------------------------------- tensors

bool is_lower(JetSlot s) {
  return s == JetSlot::lower_src || s == JetSlot::lower_dst;
}
bool is_src(JetSlot s) {
  return s == JetSlot::lower_src || s == JetSlot::upper_src;
}

int slot_range(const JetTensor& t, JetSlot s) {
  return is_src(s) ? t.n_src : t.n_dst;
}

void check_tensor(const JetTensor& t) {
  require(t.n_src >= 2 && t.n_src <= kMaxVars &&
              t.n_dst >= 2 && t.n_dst <= kMaxVars,
          "tensor dimensions must be 2..4");
  require(t.vars == t.n_src || t.vars == t.n_dst,
          "component variables must match one of the patches");
  require(t.slots.size() <= 6, "tensors support at most six slots");
  std::size_t count = 1;
  for (JetSlot s : t.slots) count *= static_cast<std::size_t>(slot_range(t, s));
  require(t.comp.size() == count, "component storage does not match slots");
  for (const JetScalar& c : t.comp) {
    check_scalar(c);
    require(c.vars == t.vars && c.order == t.order,
            "tensor components must share (vars, order)");
  }
}

int comp_index(const JetTensor& t, const int* idx) {
  int pos = 0;
  for (std::size_t s = 0; s < t.slots.size(); ++s) {
    const int range = slot_range(t, t.slots[s]);
    require(idx[s] >= 0 && idx[s] < range, "component index out of range");
    pos = pos * range + idx[s];
  }
  return pos;
}

// Iterates over all index tuples of a tensor shape.
struct TupleIter {
  std::vector<int> range;
  std::vector<int> idx;
  bool live = true;
  explicit TupleIter(const JetTensor& t) {
    for (JetSlot s : t.slots) range.push_back(slot_range(t, s));
    idx.assign(range.size(), 0);
  }
  bool next() {
    for (int s = static_cast<int>(range.size()) - 1; s >= 0; --s) {
      if (++idx[s] < range[s]) return true;
      idx[s] = 0;
    }
    live = false;
    return false;
  }
};

void check_metric_shape(const JetTensor& g) {
  check_tensor(g);
  require(g.slots.size() == 2 && g.slots[0] == g.slots[1] &&
              is_lower(g.slots[0]),
          "metric jets need two identical lower slots");
}

double origin_value(const JetTensor& t, int i, int j) {
  const int idx[2] = {i, j};
  return t.comp[comp_index(t, idx)].coeff[0];
}

}  // namespace

// --------------------------------------------------------------- scalars

int jet_coefficient_count(int vars, int order) {
  return coeff_count(vars, order);
}

JetScalar jet_constant(int vars, int order, double value) {
  JetScalar f = zero_jet(vars, order);
  f.coeff[0] = value;
  return f;
}

JetScalar jet_coordinate(int vars, int order, int axis) {
  require(order >= 1, "a coordinate jet needs order >= 1");
  JetScalar f = zero_jet(vars, order);
  std::array<int, kMaxVars> e{};
  require(axis >= 0 && axis < vars, "axis out of range");
  e[axis] = 1;
  f.coeff[space(vars).lookup[pack_key(e)]] = 1.0;
  return f;
}

double jet_coefficient(const JetScalar& f, const std::vector<int>& exponents) {
  check_scalar(f);
  require(static_cast<int>(exponents.size()) == f.vars,
          "exponent vector must list one entry per variable");
  std::array<int, kMaxVars> e{};
  int deg = 0;
  for (int i = 0; i < f.vars; ++i) {
    require(exponents[i] >= 0, "exponents must be nonnegative");
    e[i] = exponents[i];
    deg += exponents[i];
  }
  require(deg <= f.order, "exponent degree exceeds the order budget");
  return f.coeff[space(f.vars).lookup[pack_key(e)]];
}

void jet_set_coefficient(JetScalar& f, const std::vector<int>& exponents,
                         double value) {
  check_scalar(f);
  require(static_cast<int>(exponents.size()) == f.vars,
          "exponent vector must list one entry per variable");
  std::array<int, kMaxVars> e{};
  int deg = 0;
  for (int i = 0; i < f.vars; ++i) {
    require(exponents[i] >= 0, "exponents must be nonnegative");
    e[i] = exponents[i];
    deg += exponents[i];
  }
  require(deg <= f.order, "exponent degree exceeds the order budget");
  f.coeff[space(f.vars).lookup[pack_key(e)]] = value;
}

double jet_value(const JetScalar& f) {
  check_scalar(f);
  return f.coeff[0];
}

double jet_eval(const JetScalar& f, const std::vector<double>& x) {
  check_scalar(f);
  require(static_cast<int>(x.size()) == f.vars,
          "evaluation point must list one entry per variable");
  const JetSpace& sp = space(f.vars);
  double acc = 0.0;
  for (std::size_t i = 0; i < f.coeff.size(); ++i) {
    if (f.coeff[i] == 0.0) continue;
    double m = f.coeff[i];
    for (int v = 0; v < f.vars; ++v)
      for (int p = 0; p < sp.expo[i][v]; ++p) m *= x[v];
    acc += m;
  }
  return acc;
}

JetScalar jet_add(const JetScalar& a, const JetScalar& b) {
  check_pair(a, b);
  const int r = std::min(a.order, b.order);
  JetScalar out = zero_jet(a.vars, r);
  for (std::size_t i = 0; i < out.coeff.size(); ++i)
    out.coeff[i] = a.coeff[i] + b.coeff[i];
  return out;
}

JetScalar jet_sub(const JetScalar& a, const JetScalar& b) {
  check_pair(a, b);
  const int r = std::min(a.order, b.order);
  JetScalar out = zero_jet(a.vars, r);
  for (std::size_t i = 0; i < out.coeff.size(); ++i)
    out.coeff[i] = a.coeff[i] - b.coeff[i];
  return out;
}

JetScalar jet_scale(const JetScalar& a, double s) {
  check_scalar(a);
  JetScalar out = a;
  for (double& c : out.coeff) c *= s;
  return out;
}

JetScalar jet_mul(const JetScalar& a, const JetScalar& b) {
  check_pair(a, b);
  const int r = std::min(a.order, b.order);
  JetScalar out = zero_jet(a.vars, r);
  const JetSpace& sp = space(a.vars);
  const int na = sp.offset[r + 1];
  for (int i = 0; i < na; ++i) {
    const double ai = a.coeff[i];
    if (ai == 0.0) continue;
    const int rem = r - sp.degree[i];
    const int nb = sp.offset[rem + 1];
    const std::uint32_t ki = sp.key[i];
    for (int j = 0; j < nb; ++j) {
      const double bj = b.coeff[j];
      if (bj == 0.0) continue;
      out.coeff[sp.lookup[ki + sp.key[j]]] += ai * bj;
    }
  }
  return out;
}

JetScalar jet_truncate(const JetScalar& a, int order) {
  check_scalar(a);
  require(order >= 0 && order <= a.order,
          "truncation can only lower the order budget");
  JetScalar out = a;
  out.order = order;
  out.coeff.resize(coeff_count(a.vars, order));
  return out;
}

JetScalar jet_partial(const JetScalar& a, int axis) {
  check_scalar(a);
  require(axis >= 0 && axis < a.vars, "axis out of range");
  require(a.order >= 1, "derivative budget exhausted");
  JetScalar out = zero_jet(a.vars, a.order - 1);
  const JetSpace& sp = space(a.vars);
  for (std::size_t i = 0; i < a.coeff.size(); ++i) {
    const int e = sp.expo[i][axis];
    if (e == 0 || a.coeff[i] == 0.0) continue;
    std::array<int, kMaxVars> down = sp.expo[i];
    down[axis] -= 1;
    out.coeff[sp.lookup[pack_key(down)]] = e * a.coeff[i];
  }
  return out;
}

JetScalar jet_reciprocal(const JetScalar& f) {
  check_scalar(f);
  const double c0 = f.coeff[0];
  require(std::fabs(c0) > 1e-100, "reciprocal needs f(0) != 0");
  JetScalar v = f;
  v.coeff[0] = 0.0;
  JetScalar w = jet_scale(v, -1.0 / c0);
  JetScalar acc = jet_constant(f.vars, f.order, 1.0);
  JetScalar term = acc;
  for (int m = 1; m <= f.order; ++m) {
    term = jet_mul(term, w);
    acc = jet_add(acc, term);
  }
  return jet_scale(acc, 1.0 / c0);
}

JetScalar jet_exp(const JetScalar& f) {
  check_scalar(f);
  const double c0 = f.coeff[0];
  JetScalar v = f;
  v.coeff[0] = 0.0;
  JetScalar acc = jet_constant(f.vars, f.order, 1.0);
  JetScalar term = acc;
  for (int m = 1; m <= f.order; ++m) {
    term = jet_scale(jet_mul(term, v), 1.0 / m);
    acc = jet_add(acc, term);
  }
  return jet_scale(acc, std::exp(c0));
}

JetScalar jet_random(int vars, int order, std::mt19937_64& rng,
                     double amplitude, bool dyadic) {
  require(amplitude > 0.0, "amplitude must be positive");
  JetScalar f = zero_jet(vars, order);
  const JetSpace& sp = space(vars);
  double base = amplitude;
  if (dyadic)
    base = std::ldexp(1.0, static_cast<int>(std::lround(std::log2(amplitude))));
  for (std::size_t i = 0; i < f.coeff.size(); ++i) {
    const double damp = std::ldexp(base, -sp.degree[i]);
    if (dyadic) {
      std::uniform_int_distribution<int> draw(-4096, 4096);
      f.coeff[i] = damp * (static_cast<double>(draw(rng)) / 4096.0);
    } else {
      std::uniform_real_distribution<double> draw(-damp, damp);
      f.coeff[i] = draw(rng);
    }
  }
  return f;
}

// ------------------------------------------------------------------ maps

JetMap jet_map(int n_src, int n_dst, std::vector<JetScalar> comp) {
  JetMap phi;
  phi.n_src = n_src;
  phi.n_dst = n_dst;
  require(!comp.empty(), "map needs components");
  phi.order = comp[0].order;
  phi.comp = std::move(comp);
  check_map(phi);
  require(n_src == n_dst, "map jets must have a square Jacobian");
  for (const JetScalar& c : phi.comp)
    require(c.coeff[0] == 0.0, "map jets must fix the origin");
  std::array<double, kMaxVars * kMaxVars> jac{};
  for (int a = 0; a < n_dst; ++a)
    for (int i = 0; i < n_src; ++i) {
      std::array<int, kMaxVars> e{};
      e[i] = 1;
      jac[a * n_src + i] =
          phi.order >= 1 ? phi.comp[a].coeff[space(n_src).lookup[pack_key(e)]]
                         : 0.0;
    }
  std::array<double, kMaxVars * kMaxVars> inv{};
  require(invert_dense(n_src, jac.data(), inv.data()),
          "map jets need an invertible linear part");
  return phi;
}

JetMap jet_identity_map(int n, int order) {
  require(order >= 1, "identity map jet needs order >= 1");
  std::vector<JetScalar> comp;
  for (int a = 0; a < n; ++a) comp.push_back(jet_coordinate(n, order, a));
  return jet_map(n, n, std::move(comp));
}

JetMap jet_random_map(int n, int order, std::mt19937_64& rng, double amplitude,
                      bool dyadic) {
  require(order >= 1, "random map jet needs order >= 1");
  require(amplitude <= 0.25, "random map amplitude must stay below 0.25");
  std::vector<JetScalar> comp;
  for (int a = 0; a < n; ++a) {
    JetScalar c = jet_random(n, order, rng, amplitude, dyadic);
    c.coeff[0] = 0.0;
    comp.push_back(std::move(c));
  }
  // Linear part: identity plus the random degree-one draws already present,
  // which keeps the Jacobian diagonally dominant and invertible.
  for (int a = 0; a < n; ++a) {
    std::array<int, kMaxVars> e{};
    e[a] = 1;
    const int pos = space(n).lookup[pack_key(e)];
    comp[a].coeff[pos] += 1.0;
  }
  return jet_map(n, n, std::move(comp));
}

JetMap jet_map_compose(const JetMap& g, const JetMap& f) {
  check_map(g);
  check_map(f);
  require(f.n_dst == g.n_src, "map composition needs matching patches");
  const int r = std::min(g.order, f.order);
  ComposeOp op = build_compose(f.comp, f.n_src, f.n_dst, r);
  std::vector<JetScalar> comp;
  for (const JetScalar& c : g.comp) comp.push_back(apply_compose(op, c));
  return jet_map(f.n_src, g.n_dst, std::move(comp));
}

JetMap jet_map_inverse(const JetMap& phi) {
  check_map(phi);
  require(phi.n_src == phi.n_dst, "only square maps can be inverted");
  const int n = phi.n_src;
  const int r = phi.order;
  const JetSpace& sp = space(n);
  std::array<double, kMaxVars * kMaxVars> jac{};
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < n; ++i) {
      std::array<int, kMaxVars> e{};
      e[i] = 1;
      jac[a * n + i] = phi.comp[a].coeff[sp.lookup[pack_key(e)]];
    }
  std::array<double, kMaxVars * kMaxVars> inv{};
  require(invert_dense(n, jac.data(), inv.data()),
          "map jets need an invertible linear part");

  // Split phi = L x + p with p of valuation >= 2, then iterate
  // psi <- Linv (y - p(psi)); every pass fixes one more degree.
  std::vector<JetScalar> p;
  for (int a = 0; a < n; ++a) {
    JetScalar c = phi.comp[a];
    c.coeff[0] = 0.0;
    for (int i = 0; i < n; ++i) {
      std::array<int, kMaxVars> e{};
      e[i] = 1;
      c.coeff[sp.lookup[pack_key(e)]] = 0.0;
    }
    p.push_back(std::move(c));
  }
  auto linear_apply = [&](const std::vector<JetScalar>& rhs) {
    std::vector<JetScalar> out;
    for (int i = 0; i < n; ++i) {
      JetScalar acc = zero_jet(n, rhs[0].order);
      for (int j = 0; j < n; ++j)
        acc = jet_add(acc, jet_scale(rhs[j], inv[i * n + j]));
      out.push_back(std::move(acc));
    }
    return out;
  };
  std::vector<JetScalar> id_comp;
  for (int i = 0; i < n; ++i) id_comp.push_back(jet_coordinate(n, r, i));
  std::vector<JetScalar> psi = linear_apply(id_comp);
  for (int pass = 2; pass <= r; ++pass) {
    ComposeOp op = build_compose(psi, n, n, r);
    std::vector<JetScalar> rhs;
    for (int j = 0; j < n; ++j)
      rhs.push_back(jet_sub(id_comp[j], apply_compose(op, p[j])));
    psi = linear_apply(rhs);
  }
  return jet_map(n, n, std::move(psi));
}

// ---------------------------------------------------------------- tensors

JetTensor jet_tensor_zero(int n_src, int n_dst, int vars,
                          std::vector<JetSlot> slots, int order) {
  JetTensor t;
  t.n_src = n_src;
  t.n_dst = n_dst;
  t.vars = vars;
  t.order = order;
  t.slots = std::move(slots);
  std::size_t count = 1;
  for (JetSlot s : t.slots) count *= static_cast<std::size_t>(slot_range(t, s));
  t.comp.assign(count, zero_jet(vars, order));
  check_tensor(t);
  return t;
}

int jet_slot_range(const JetTensor& t, int slot) {
  check_tensor(t);
  require(slot >= 0 && slot < static_cast<int>(t.slots.size()),
          "slot index out of range");
  return slot_range(t, t.slots[slot]);
}

int jet_component_count(const JetTensor& t) {
  check_tensor(t);
  return static_cast<int>(t.comp.size());
}

JetScalar& jet_comp(JetTensor& t, const std::vector<int>& idx) {
  require(idx.size() == t.slots.size(), "index tuple must list every slot");
  return t.comp[comp_index(t, idx.data())];
}

const JetScalar& jet_comp(const JetTensor& t, const std::vector<int>& idx) {
  require(idx.size() == t.slots.size(), "index tuple must list every slot");
  return t.comp[comp_index(t, idx.data())];
}

JetTensor jet_tensor_add(const JetTensor& a, const JetTensor& b) {
  check_tensor(a);
  check_tensor(b);
  require(a.slots == b.slots && a.n_src == b.n_src && a.n_dst == b.n_dst &&
              a.vars == b.vars,
          "tensor addition needs matching shapes");
  JetTensor out = jet_tensor_zero(a.n_src, a.n_dst, a.vars, a.slots,
                                  std::min(a.order, b.order));
  for (std::size_t i = 0; i < out.comp.size(); ++i)
    out.comp[i] = jet_add(a.comp[i], b.comp[i]);
  return out;
}

JetTensor jet_tensor_sub(const JetTensor& a, const JetTensor& b) {
  return jet_tensor_add(a, jet_tensor_scale(b, -1.0));
}

JetTensor jet_tensor_scale(const JetTensor& a, double s) {
  check_tensor(a);
  JetTensor out = a;
  for (JetScalar& c : out.comp) c = jet_scale(c, s);
  return out;
}

JetTensor jet_retag(const JetTensor& t, std::vector<JetSlot> slots) {
  check_tensor(t);
  require(slots.size() == t.slots.size(), "retag must keep the slot count");
  for (std::size_t s = 0; s < slots.size(); ++s) {
    require(is_lower(slots[s]) == is_lower(t.slots[s]),
            "retag must keep each slot's variance");
    const int range = is_src(slots[s]) ? t.n_src : t.n_dst;
    require(range == slot_range(t, t.slots[s]),
            "retag must keep each slot's index range");
  }
  JetTensor out = t;
  out.slots = std::move(slots);
  check_tensor(out);
  return out;
}

double jet_tensor_sup(const JetTensor& t) {
  check_tensor(t);
  double sup = 0.0;
  for (const JetScalar& c : t.comp)
    for (double v : c.coeff) sup = std::max(sup, std::fabs(v));
  return sup;
}

double jet_tensor_max_difference(const JetTensor& a, const JetTensor& b) {
  check_tensor(a);
  check_tensor(b);
  require(a.slots == b.slots && a.n_src == b.n_src && a.n_dst == b.n_dst &&
              a.vars == b.vars,
          "difference needs matching shapes");
  const int r = std::min(a.order, b.order);
  const int count = coeff_count(a.vars, r);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.comp.size(); ++i)
    for (int j = 0; j < count; ++j)
      worst = std::max(worst, std::fabs(a.comp[i].coeff[j] - b.comp[i].coeff[j]));
  return worst;
}

// ---------------------------------------------------------------- metrics

JetTensor jet_flat_metric(int n, int order, JetSlot kind) {
  require(is_lower(kind), "metric slots must be lower");
  JetTensor g = jet_tensor_zero(n, n, n, {kind, kind}, order);
  for (int i = 0; i < n; ++i) {
    const int idx[2] = {i, i};
    g.comp[comp_index(g, idx)].coeff[0] = 1.0;
  }
  return g;
}

JetTensor jet_random_metric(int n, int order, std::mt19937_64& rng,
                            double amplitude, JetSlot kind, bool dyadic) {
  require(is_lower(kind), "metric slots must be lower");
  JetTensor g = jet_tensor_zero(n, n, n, {kind, kind}, order);
  const double cap = dyadic ? 0.0625 : std::min(amplitude, 0.25 / n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      JetScalar c = jet_random(n, order, rng, amplitude, dyadic);
      double c0;
      if (dyadic) {
        std::uniform_int_distribution<int> draw(-64, 64);
        c0 = cap * (static_cast<double>(draw(rng)) / 64.0);
      } else {
        std::uniform_real_distribution<double> draw(-cap, cap);
        c0 = draw(rng);
      }
      c.coeff[0] = (i == j) ? 1.0 + c0 : c0;
      const int ij[2] = {i, j};
      const int ji[2] = {j, i};
      g.comp[comp_index(g, ij)] = c;
      g.comp[comp_index(g, ji)] = std::move(c);
    }
  return g;
}

bool jet_metric_spd_at_origin(const JetTensor& g) {
  check_metric_shape(g);
  const int n = slot_range(g, g.slots[0]);
  // Cholesky attempt on the degree-zero block.
  double m[kMaxVars][kMaxVars];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m[i][j] = origin_value(g, i, j);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (std::fabs(m[i][j] - m[j][i]) > 1e-12) return false;
  for (int c = 0; c < n; ++c) {
    double d = m[c][c];
    for (int k = 0; k < c; ++k) d -= m[c][k] * m[c][k];
    if (d <= 0.0) return false;
    m[c][c] = std::sqrt(d);
    for (int r = c + 1; r < n; ++r) {
      double v = m[r][c];
      for (int k = 0; k < c; ++k) v -= m[r][k] * m[c][k];
      m[r][c] = v / m[c][c];
    }
  }
  return true;
}

JetTensor jet_metric_inverse(const JetTensor& g) {
  check_metric_shape(g);
  const int n = slot_range(g, g.slots[0]);
  std::array<double, kMaxVars * kMaxVars> g0{};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g0[i * n + j] = origin_value(g, i, j);
  std::array<double, kMaxVars * kMaxVars> g0inv{};
  require(invert_dense(n, g0.data(), g0inv.data()),
          "metric jet is singular at the origin");

  const JetSlot up = is_src(g.slots[0]) ? JetSlot::upper_src : JetSlot::upper_dst;
  JetTensor out = jet_tensor_zero(g.n_src, g.n_dst, g.vars, {up, up}, g.order);

  // R = g - g(0) has positive valuation, so the geometric series for
  // (g0 + R)^{-1} terminates at the order budget.
  std::vector<JetScalar> R(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int idx[2] = {i, j};
      JetScalar c = g.comp[comp_index(g, idx)];
      c.coeff[0] = 0.0;
      R[i * n + j] = std::move(c);
    }
  std::vector<JetScalar> B(n * n, zero_jet(g.vars, g.order));  // -g0inv R
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      JetScalar acc = zero_jet(g.vars, g.order);
      for (int k = 0; k < n; ++k)
        acc = jet_add(acc, jet_scale(R[k * n + j], -g0inv[i * n + k]));
      B[i * n + j] = std::move(acc);
    }
  std::vector<JetScalar> term(n * n), acc(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      term[i * n + j] = jet_constant(g.vars, g.order, g0inv[i * n + j]);
      acc[i * n + j] = term[i * n + j];
    }
  for (int m = 1; m <= g.order; ++m) {
    std::vector<JetScalar> next(n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        JetScalar s = zero_jet(g.vars, g.order);
        for (int k = 0; k < n; ++k)
          s = jet_add(s, jet_mul(B[i * n + k], term[k * n + j]));
        next[i * n + j] = std::move(s);
      }
    term = std::move(next);
    for (int i = 0; i < n * n; ++i) acc[i] = jet_add(acc[i], term[i]);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int idx[2] = {i, j};
      out.comp[comp_index(out, idx)] = acc[i * n + j];
    }
  return out;
}

JetTensor jet_christoffel(const JetTensor& g) {
  check_metric_shape(g);
  const int n = slot_range(g, g.slots[0]);
  require(g.vars == n, "Christoffel jets need a metric on its own patch");
  require(g.order >= 1, "derivative budget exhausted");
  const JetSlot lo = g.slots[0];
  const JetSlot up = is_src(lo) ? JetSlot::upper_src : JetSlot::upper_dst;
  JetTensor ginv = jet_metric_inverse(g);
  JetTensor out = jet_tensor_zero(g.n_src, g.n_dst, g.vars, {lo, lo, up},
                                  g.order - 1);
  // dg[a][i][j] = d_a g_{ij}
  std::vector<JetScalar> dg(n * n * n);
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int idx[2] = {i, j};
        dg[(a * n + i) * n + j] = jet_partial(g.comp[comp_index(g, idx)], a);
      }
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        JetScalar acc = zero_jet(g.vars, g.order - 1);
        for (int d = 0; d < n; ++d) {
          JetScalar sum = jet_add(dg[(a * n + b) * n + d],
                                  dg[(b * n + a) * n + d]);
          sum = jet_sub(sum, dg[(d * n + a) * n + b]);
          const int gi[2] = {c, d};
          acc = jet_add(acc, jet_mul(ginv.comp[comp_index(ginv, gi)], sum));
        }
        acc = jet_scale(acc, 0.5);
        const int ab[3] = {a, b, c};
        const int ba[3] = {b, a, c};
        out.comp[comp_index(out, ab)] = acc;
        out.comp[comp_index(out, ba)] = std::move(acc);
      }
  return out;
}

JetTensor jet_difference_tensor(const JetTensor& g, const JetTensor& h) {
  check_metric_shape(g);
  check_metric_shape(h);
  require(g.vars == h.vars && slot_range(g, g.slots[0]) == slot_range(h, h.slots[0]),
          "difference tensor needs two metrics on one patch");
  JetTensor gg = jet_christoffel(g);
  JetTensor gh = jet_christoffel(h);
  gh = jet_retag(gh, gg.slots);
  JetTensor diff = jet_tensor_sub(gg, gh);
  // Tag for mixed-derivative use: the lower pair follows the first metric,
  // the upper slot the second.
  JetTensor out = diff;
  out.slots = {JetSlot::lower_src, JetSlot::lower_src, JetSlot::upper_dst};
  require(out.n_src == out.n_dst, "mixed tagging needs equal patch dimensions");
  check_tensor(out);
  return out;
}

// ------------------------------------------------------- map transport

JetTensor jet_compose(const JetTensor& F, const JetMap& phi) {
  check_tensor(F);
  check_map(phi);
  require(F.vars == phi.n_dst,
          "composition needs components in the target variables");
  bool has_src = false;
  for (JetSlot s : F.slots) has_src |= is_src(s);
  if (has_src)
    require(phi.n_src == phi.n_dst && F.n_src == phi.n_dst,
            "composing source-family slots needs a square map");
  require(F.n_dst == phi.n_dst, "slot ranges must survive the composition");
  const int r = std::min(F.order, phi.order);
  ComposeOp op = build_compose(phi.comp, phi.n_src, phi.n_dst, r);
  JetTensor out = jet_tensor_zero(phi.n_src, phi.n_dst, phi.n_src, F.slots, r);
  for (std::size_t i = 0; i < F.comp.size(); ++i)
    out.comp[i] = apply_compose(op, F.comp[i]);
  return out;
}

JetTensor jet_differential(const JetMap& phi) {
  check_map(phi);
  require(phi.order >= 1, "derivative budget exhausted");
  JetTensor out = jet_tensor_zero(phi.n_src, phi.n_dst, phi.n_src,
                                  {JetSlot::lower_src, JetSlot::upper_dst},
                                  phi.order - 1);
  for (int i = 0; i < phi.n_src; ++i)
    for (int a = 0; a < phi.n_dst; ++a) {
      const int idx[2] = {i, a};
      out.comp[comp_index(out, idx)] = jet_partial(phi.comp[a], i);
    }
  return out;
}

JetTensor jet_pullback(const JetTensor& F, const JetMap& phi) {
  for (JetSlot s : F.slots)
    require(s != JetSlot::upper_src,
            "pullback cannot transport upper source slots");
  JetTensor cur = jet_compose(F, phi);
  bool any_lower = false;
  for (JetSlot s : cur.slots) any_lower |= is_lower(s);
  if (!any_lower) return cur;
  JetTensor dphi = jet_differential(phi);
  for (std::size_t s = 0; s < cur.slots.size(); ++s) {
    if (!is_lower(cur.slots[s])) continue;
    std::vector<JetSlot> slots = cur.slots;
    slots[s] = JetSlot::lower_src;
    const int r = std::min(cur.order, dphi.order);
    JetTensor next = jet_tensor_zero(cur.n_src, cur.n_dst, cur.vars, slots, r);
    const int old_range = slot_range(cur, cur.slots[s]);
    TupleIter it(next);
    do {
      JetScalar acc = zero_jet(cur.vars, r);
      std::vector<int> idx = it.idx;
      for (int b = 0; b < old_range; ++b) {
        idx[s] = b;
        const int di[2] = {it.idx[s], b};
        acc = jet_add(acc, jet_mul(dphi.comp[comp_index(dphi, di)],
                                   cur.comp[comp_index(cur, idx.data())]));
      }
      next.comp[comp_index(next, it.idx.data())] = std::move(acc);
    } while (it.next());
    cur = std::move(next);
  }
  return cur;
}

JetTensor jet_map_covariant_derivative(const JetTensor& F, const JetMap& phi,
                                       const JetTensor& g_src,
                                       const JetTensor& h_dst) {
  check_tensor(F);
  check_map(phi);
  check_metric_shape(g_src);
  check_metric_shape(h_dst);
  require(F.vars == phi.n_src, "tensor must live over the map's source patch");
  require(F.n_src == phi.n_src && F.n_dst == phi.n_dst,
          "tensor and map patch dimensions must agree");
  require(g_src.vars == phi.n_src &&
              slot_range(g_src, g_src.slots[0]) == phi.n_src,
          "source metric must live on the source patch");
  require(h_dst.vars == phi.n_dst &&
              slot_range(h_dst, h_dst.slots[0]) == phi.n_dst,
          "target metric must live on the target patch");
  require(F.order >= 1, "derivative budget exhausted");

  bool has_src = false, has_dst = false;
  for (JetSlot s : F.slots) (is_src(s) ? has_src : has_dst) = true;

  JetTensor gamma_src, gamma_dst, dphi;
  int r = F.order - 1;
  if (has_src) {
    gamma_src = jet_christoffel(g_src);
    r = std::min(r, gamma_src.order);
  }
  if (has_dst) {
    gamma_dst = jet_compose(jet_christoffel(h_dst), phi);
    dphi = jet_differential(phi);
    r = std::min({r, gamma_dst.order, dphi.order});
  }

  std::vector<JetSlot> slots = F.slots;
  slots.push_back(JetSlot::lower_src);
  JetTensor out = jet_tensor_zero(F.n_src, F.n_dst, F.vars, slots, r);

  const int nsrc = F.n_src;
  TupleIter it(F);
  do {
    for (int m = 0; m < nsrc; ++m) {
      JetScalar acc = jet_partial(F.comp[comp_index(F, it.idx.data())], m);
      std::vector<int> idx = it.idx;
      for (std::size_t s = 0; s < F.slots.size(); ++s) {
        const JetSlot kind = F.slots[s];
        const int range = slot_range(F, kind);
        const int orig = it.idx[s];
        for (int d = 0; d < range; ++d) {
          idx[s] = d;
          JetScalar corr;
          switch (kind) {
            case JetSlot::lower_src: {
              const int gi[3] = {m, orig, d};
              corr = gamma_src.comp[comp_index(gamma_src, gi)];
              break;
            }
            case JetSlot::upper_src: {
              const int gi[3] = {m, d, orig};
              corr = gamma_src.comp[comp_index(gamma_src, gi)];
              break;
            }
            case JetSlot::lower_dst: {
              corr = zero_jet(F.vars, r);
              for (int mu = 0; mu < F.n_dst; ++mu) {
                const int di[2] = {m, mu};
                const int gi[3] = {mu, orig, d};
                corr = jet_add(corr,
                               jet_mul(dphi.comp[comp_index(dphi, di)],
                                       gamma_dst.comp[comp_index(gamma_dst, gi)]));
              }
              break;
            }
            case JetSlot::upper_dst: {
              corr = zero_jet(F.vars, r);
              for (int mu = 0; mu < F.n_dst; ++mu) {
                const int di[2] = {m, mu};
                const int gi[3] = {d, mu, orig};
                corr = jet_add(corr,
                               jet_mul(dphi.comp[comp_index(dphi, di)],
                                       gamma_dst.comp[comp_index(gamma_dst, gi)]));
              }
              break;
            }
          }
          const JetScalar term =
              jet_mul(F.comp[comp_index(F, idx.data())], corr);
          acc = is_lower(kind) ? jet_sub(acc, term) : jet_add(acc, term);
        }
        idx[s] = orig;
      }
      std::vector<int> oidx = it.idx;
      oidx.push_back(m);
      out.comp[comp_index(out, oidx.data())] = jet_truncate(acc, r);
    }
  } while (it.next());
  return out;
}

JetTensor jet_covariant_derivative(const JetTensor& F, const JetTensor& g) {
  check_tensor(F);
  check_metric_shape(g);
  require(g.vars == F.vars && slot_range(g, g.slots[0]) == F.vars,
          "metric must live on the tensor's patch");
  for (JetSlot s : F.slots)
    require(slot_range(F, s) == F.vars,
            "single-connection derivative needs every slot on one patch");
  require(F.order >= 1, "derivative budget exhausted");
  JetTensor gamma = jet_christoffel(g);
  const int r = std::min(F.order - 1, gamma.order);

  std::vector<JetSlot> slots = F.slots;
  slots.push_back(JetSlot::lower_src);
  JetTensor out = jet_tensor_zero(F.n_src, F.n_dst, F.vars, slots, r);

  TupleIter it(F);
  do {
    for (int m = 0; m < F.vars; ++m) {
      JetScalar acc = jet_partial(F.comp[comp_index(F, it.idx.data())], m);
      std::vector<int> idx = it.idx;
      for (std::size_t s = 0; s < F.slots.size(); ++s) {
        const int orig = it.idx[s];
        for (int d = 0; d < F.vars; ++d) {
          idx[s] = d;
          const int lo[3] = {m, orig, d};
          const int up[3] = {m, d, orig};
          const JetScalar& corr =
              gamma.comp[comp_index(gamma, is_lower(F.slots[s]) ? lo : up)];
          const JetScalar term =
              jet_mul(F.comp[comp_index(F, idx.data())], corr);
          acc = is_lower(F.slots[s]) ? jet_sub(acc, term) : jet_add(acc, term);
        }
        idx[s] = orig;
      }
      std::vector<int> oidx = it.idx;
      oidx.push_back(m);
      out.comp[comp_index(out, oidx.data())] = jet_truncate(acc, r);
    }
  } while (it.next());
  return out;
}

JetTensor jet_contract(const JetTensor& F, int slot_a, int slot_b) {
  check_tensor(F);
  const int ns = static_cast<int>(F.slots.size());
  require(slot_a >= 0 && slot_a < ns && slot_b >= 0 && slot_b < ns &&
              slot_a != slot_b,
          "contraction needs two distinct slots");
  const JetSlot ka = F.slots[slot_a];
  const JetSlot kb = F.slots[slot_b];
  require(is_src(ka) == is_src(kb), "contraction slots must share a family");
  require(is_lower(ka) != is_lower(kb),
          "contraction needs one upper and one lower slot");
  const int range = slot_range(F, ka);

  std::vector<JetSlot> slots;
  for (int s = 0; s < ns; ++s)
    if (s != slot_a && s != slot_b) slots.push_back(F.slots[s]);
  JetTensor out = jet_tensor_zero(F.n_src, F.n_dst, F.vars, slots, F.order);
  TupleIter it(out);
  do {
    JetScalar acc = zero_jet(F.vars, F.order);
    std::vector<int> idx(ns, 0);
    for (int d = 0; d < range; ++d) {
      int o = 0;
      for (int s = 0; s < ns; ++s)
        idx[s] = (s == slot_a || s == slot_b) ? d : it.idx[o++];
      acc = jet_add(acc, F.comp[comp_index(F, idx.data())]);
    }
    out.comp[comp_index(out, it.idx.data())] = std::move(acc);
  } while (it.next());
  return out;
}

JetTensor jet_metric_trace(const JetTensor& F, int slot_a, int slot_b,
                           const JetTensor& G) {
  check_tensor(F);
  check_tensor(G);
  const int ns = static_cast<int>(F.slots.size());
  require(slot_a >= 0 && slot_a < ns && slot_b >= 0 && slot_b < ns &&
              slot_a != slot_b,
          "metric trace needs two distinct slots");
  const JetSlot ka = F.slots[slot_a];
  const JetSlot kb = F.slots[slot_b];
  require(ka == kb, "metric trace slots must share flavour");
  require(G.slots.size() == 2 && G.slots[0] == G.slots[1],
          "metric trace needs a two-slot contractor");
  require(is_src(G.slots[0]) == is_src(ka) &&
              is_lower(G.slots[0]) != is_lower(ka),
          "contractor must have the opposite variance in the same family");
  require(G.vars == F.vars, "contractor must live in the tensor's variables");
  const int range = slot_range(F, ka);
  require(slot_range(G, G.slots[0]) == range, "contractor range mismatch");

  std::vector<JetSlot> slots;
  for (int s = 0; s < ns; ++s)
    if (s != slot_a && s != slot_b) slots.push_back(F.slots[s]);
  const int r = std::min(F.order, G.order);
  JetTensor out = jet_tensor_zero(F.n_src, F.n_dst, F.vars, slots, r);
  TupleIter it(out);
  do {
    JetScalar acc = zero_jet(F.vars, r);
    std::vector<int> idx(ns, 0);
    for (int da = 0; da < range; ++da)
      for (int db = 0; db < range; ++db) {
        int o = 0;
        for (int s = 0; s < ns; ++s) {
          if (s == slot_a)
            idx[s] = da;
          else if (s == slot_b)
            idx[s] = db;
          else
            idx[s] = it.idx[o++];
        }
        const int gi[2] = {da, db};
        acc = jet_add(acc, jet_mul(G.comp[comp_index(G, gi)],
                                   F.comp[comp_index(F, idx.data())]));
      }
    out.comp[comp_index(out, it.idx.data())] = std::move(acc);
  } while (it.next());
  return out;
}

JetTensor jet_map_laplacian(const JetTensor& F, const JetMap& phi,
                            const JetTensor& g_src, const JetTensor& h_dst) {
  JetTensor d1 = jet_map_covariant_derivative(F, phi, g_src, h_dst);
  JetTensor d2 = jet_map_covariant_derivative(d1, phi, g_src, h_dst);
  JetTensor ginv = jet_metric_inverse(g_src);
  if (!is_src(ginv.slots[0]))
    ginv = jet_retag(ginv, {JetSlot::upper_src, JetSlot::upper_src});
  const int ns = static_cast<int>(d2.slots.size());
  return jet_metric_trace(d2, ns - 2, ns - 1, ginv);
}

JetTensor jet_map_laplacian(const JetMap& phi, const JetTensor& g_src,
                            const JetTensor& h_dst) {
  // The map's own laplacian traces its hessian: one derivative of the
  // differential, contracted against the differential's original slot.
  JetTensor hess = jet_map_covariant_derivative(jet_differential(phi), phi,
                                                g_src, h_dst);
  JetTensor ginv = jet_metric_inverse(g_src);
  if (!is_src(ginv.slots[0]))
    ginv = jet_retag(ginv, {JetSlot::upper_src, JetSlot::upper_src});
  return jet_metric_trace(hess, 0, 2, ginv);
}

// ---------------------------------------------------------- identity suite

namespace {

struct TrialData {
  int n = 0;
  JetTensor g;      // metric on the target patch, slots (lower_src, lower_src)
  JetTensor h;      // metric on the target patch, slots (lower_dst, lower_dst)
  JetMap phi;       // map between the patches, fixing the origin
  JetTensor gbar;   // pullback of g under phi
};

// Zeroes every coefficient above `cap` so that a trial can run on purely
// quadratic data while keeping the full order budget.
JetScalar degree_cap(const JetScalar& f, int cap) {
  JetScalar out = f;
  const JetSpace& sp = space(f.vars);
  for (std::size_t i = 0; i < out.coeff.size(); ++i)
    if (sp.degree[i] > cap) out.coeff[i] = 0.0;
  return out;
}

JetTensor degree_cap(const JetTensor& t, int cap) {
  JetTensor out = t;
  for (JetScalar& c : out.comp) c = degree_cap(c, cap);
  return out;
}

JetMap degree_cap(const JetMap& m, int cap) {
  std::vector<JetScalar> comp;
  for (const JetScalar& c : m.comp) comp.push_back(degree_cap(c, cap));
  return jet_map(m.n_src, m.n_dst, std::move(comp));
}

TrialData random_trial(std::mt19937_64& rng, int n, int order, int cap) {
  TrialData d;
  d.n = n;
  d.g = jet_random_metric(n, order, rng, 0.4, JetSlot::lower_src);
  d.h = jet_random_metric(n, order, rng, 0.4, JetSlot::lower_dst);
  d.phi = jet_random_map(n, order, rng, 0.2);
  if (cap < order) {
    d.g = degree_cap(d.g, cap);
    d.h = degree_cap(d.h, cap);
    d.phi = degree_cap(d.phi, cap);
  }
  d.gbar = jet_pullback(d.g, d.phi);
  return d;
}

// Flat metrics with a signed power-of-two scaled permutation map: every
// quantity downstream stays exactly representable, so identity defects must
// vanish bitwise.
TrialData exact_trial(std::mt19937_64& rng, int n, int order) {
  TrialData d;
  d.n = n;
  d.g = jet_flat_metric(n, order, JetSlot::lower_src);
  d.h = jet_flat_metric(n, order, JetSlot::lower_dst);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  std::vector<JetScalar> comp;
  for (int a = 0; a < n; ++a) {
    std::uniform_int_distribution<int> expo(-1, 1);
    std::uniform_int_distribution<int> sgn(0, 1);
    const double s = std::ldexp(sgn(rng) ? 1.0 : -1.0, expo(rng));
    comp.push_back(jet_scale(jet_coordinate(n, order, perm[a]), s));
  }
  d.phi = jet_map(n, n, std::move(comp));
  d.gbar = jet_pullback(d.g, d.phi);
  return d;
}

double rel_defect(const JetTensor& lhs, const JetTensor& rhs) {
  const double scale =
      std::max({1.0, jet_tensor_sup(lhs), jet_tensor_sup(rhs)});
  return jet_tensor_max_difference(lhs, rhs) / scale;
}

JetTensor random_tensor(std::mt19937_64& rng, int n, int order,
                        std::vector<JetSlot> slots, int cap, bool dyadic) {
  JetTensor t = jet_tensor_zero(n, n, n, std::move(slots), order);
  for (JetScalar& c : t.comp) c = degree_cap(jet_random(n, order, rng, 0.7, dyadic), cap);
  return t;
}

// d id as a (lower, upper) tensor on the target patch.
JetTensor identity_differential(int n, int order) {
  return jet_differential(jet_identity_map(n, order));
}

// Family pipelines; each returns the trial's defect.  They are shared
// between the random lines and the exact flat/linear line.

double family_did(const TrialData& d, int order) {
  const JetMap id = jet_identity_map(d.n, order);
  JetTensor did = identity_differential(d.n, order);
  JetTensor grad = jet_map_covariant_derivative(did, id, d.g, d.h);
  JetTensor A = jet_difference_tensor(d.g, d.h);
  JetTensor want = jet_tensor_zero(d.n, d.n, d.n, grad.slots, A.order);
  TupleIter it(want);
  do {
    const std::vector<int> ai = {it.idx[2], it.idx[0], it.idx[1]};
    jet_comp(want, it.idx) = jet_scale(jet_comp(A, ai), -1.0);
  } while (it.next());
  return rel_defect(grad, want);
}

double family_split(const TrialData& d, int order, std::mt19937_64& rng,
                    int cap, bool dyadic) {
  const JetMap id = jet_identity_map(d.n, order);
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_src, JetSlot::upper_src}, cap,
                              dyadic);
  JetTensor lhs = jet_covariant_derivative(F, d.g);
  JetTensor F2 = jet_retag(F, {JetSlot::lower_src, JetSlot::upper_dst});
  JetTensor rhs = jet_map_covariant_derivative(F2, id, d.g, d.h);
  JetTensor A = jet_difference_tensor(d.g, d.h);
  JetTensor corr = jet_tensor_zero(d.n, d.n, d.n, rhs.slots, A.order);
  TupleIter it(corr);
  do {
    JetScalar acc = zero_jet(d.n, A.order);
    for (int gam = 0; gam < d.n; ++gam) {
      const std::vector<int> fi = {it.idx[0], gam};
      const std::vector<int> ai = {gam, it.idx[2], it.idx[1]};
      acc = jet_add(acc, jet_mul(jet_comp(F, fi), jet_comp(A, ai)));
    }
    jet_comp(corr, it.idx) = std::move(acc);
  } while (it.next());
  rhs = jet_tensor_add(rhs, corr);
  return rel_defect(jet_retag(lhs, rhs.slots), rhs);
}

double family_gbar_parallel(const TrialData& d) {
  JetTensor grad = jet_map_covariant_derivative(d.gbar, d.phi, d.gbar, d.h);
  JetTensor zero = jet_tensor_zero(d.n, d.n, d.n, grad.slots, grad.order);
  return rel_defect(grad, zero);
}

double family_hphi_parallel(const TrialData& d) {
  JetTensor hphi = jet_compose(d.h, d.phi);
  JetTensor grad = jet_map_covariant_derivative(hphi, d.phi, d.gbar, d.h);
  JetTensor zero = jet_tensor_zero(d.n, d.n, d.n, grad.slots, grad.order);
  return rel_defect(grad, zero);
}

double family_pullback_did(const TrialData& d, int order) {
  JetTensor did = identity_differential(d.n, order);
  JetTensor lhs = jet_pullback(did, d.phi);
  JetTensor rhs = jet_differential(d.phi);
  return rel_defect(lhs, rhs);
}

double family_traces(const TrialData& d, int order, std::mt19937_64& rng,
                     int cap, bool dyadic) {
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_dst, JetSlot::lower_dst,
                               JetSlot::upper_dst, JetSlot::upper_dst},
                              cap, dyadic);
  JetTensor Fp = jet_pullback(F, d.phi);
  // Lower pair against the pullback metric's inverse.
  JetTensor lhs1 = jet_metric_trace(Fp, 0, 1, jet_metric_inverse(d.gbar));
  JetTensor g_dst = jet_retag(d.g, {JetSlot::lower_dst, JetSlot::lower_dst});
  JetTensor rhs1 =
      jet_pullback(jet_metric_trace(F, 0, 1, jet_metric_inverse(g_dst)), d.phi);
  // Upper pair against the composed target metric.
  JetTensor lhs2 = jet_metric_trace(Fp, 2, 3, jet_compose(d.h, d.phi));
  JetTensor rhs2 = jet_pullback(jet_metric_trace(F, 2, 3, d.h), d.phi);
  return std::max(rel_defect(lhs1, rhs1), rel_defect(lhs2, rhs2));
}

double family_grad_natural(const TrialData& d, int order, std::mt19937_64& rng,
                           int cap, bool dyadic) {
  const JetMap id = jet_identity_map(d.n, order);
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_src, JetSlot::upper_dst}, cap,
                              dyadic);
  JetTensor lhs =
      jet_map_covariant_derivative(jet_pullback(F, d.phi), d.phi, d.gbar, d.h);
  JetTensor rhs =
      jet_pullback(jet_map_covariant_derivative(F, id, d.g, d.h), d.phi);
  return rel_defect(lhs, rhs);
}

double family_lap_natural(const TrialData& d, int order, std::mt19937_64& rng,
                          int cap, bool dyadic) {
  const JetMap id = jet_identity_map(d.n, order);
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_src, JetSlot::upper_dst}, cap,
                              dyadic);
  JetTensor lhs = jet_map_laplacian(jet_pullback(F, d.phi), d.phi, d.gbar, d.h);
  JetTensor rhs = jet_pullback(jet_map_laplacian(F, id, d.g, d.h), d.phi);
  return rel_defect(lhs, rhs);
}

double family_pullback_A(const TrialData& d) {
  JetTensor A = jet_difference_tensor(d.g, d.h);
  JetTensor Ap = jet_pullback(A, d.phi);
  JetTensor hess = jet_map_covariant_derivative(jet_differential(d.phi), d.phi,
                                                d.gbar, d.h);
  JetTensor want = jet_tensor_zero(d.n, d.n, d.n, Ap.slots, hess.order);
  TupleIter it(want);
  do {
    const std::vector<int> hi = {it.idx[0], it.idx[2], it.idx[1]};
    jet_comp(want, it.idx) = jet_scale(jet_comp(hess, hi), -1.0);
  } while (it.next());
  return rel_defect(Ap, want);
}

double family_pullback_V(const TrialData& d) {
  JetTensor A = jet_difference_tensor(d.g, d.h);
  JetTensor ginv = jet_metric_inverse(d.g);
  ginv = jet_retag(ginv, {JetSlot::upper_src, JetSlot::upper_src});
  JetTensor V = jet_metric_trace(A, 0, 1, ginv);
  JetTensor lhs = jet_pullback(V, d.phi);
  JetTensor rhs = jet_tensor_scale(jet_map_laplacian(d.phi, d.gbar, d.h), -1.0);
  return rel_defect(lhs, rhs);
}

double family_pullback_lapV(const TrialData& d, int order) {
  const JetMap id = jet_identity_map(d.n, order);
  JetTensor A = jet_difference_tensor(d.g, d.h);
  JetTensor ginv = jet_metric_inverse(d.g);
  ginv = jet_retag(ginv, {JetSlot::upper_src, JetSlot::upper_src});
  JetTensor V = jet_metric_trace(A, 0, 1, ginv);
  JetTensor lhs = jet_pullback(jet_map_laplacian(V, id, d.g, d.h), d.phi);
  JetTensor t1 = jet_map_laplacian(d.phi, d.gbar, d.h);
  JetTensor rhs =
      jet_tensor_scale(jet_map_laplacian(t1, d.phi, d.gbar, d.h), -1.0);
  return rel_defect(lhs, rhs);
}

// Degree-zero components of phi*(Z) + (map laplacian)^2 phi, the remainder
// of the second-order vector relation, computed from an independently chosen
// source metric: the map's inverse carries it to the target patch.
std::vector<double> second_order_defect(const JetTensor& gbar,
                                        const JetTensor& h, const JetMap& phi) {
  const int n = phi.n_src;
  const JetMap id = jet_identity_map(n, phi.order);
  JetMap psi = jet_map_inverse(phi);
  JetTensor g = jet_pullback(gbar, psi);
  JetTensor ginv = jet_metric_inverse(g);
  ginv = jet_retag(ginv, {JetSlot::upper_src, JetSlot::upper_src});
  JetTensor A = jet_difference_tensor(g, h);
  JetTensor d1 = jet_map_covariant_derivative(A, id, g, h);
  JetTensor d2 = jet_map_covariant_derivative(d1, id, g, h);
  // Z^c = g^{mu a} g^{nu b} grad_mu grad_nu A^c_{ab}: the outer derivative
  // pairs with the first lower slot of A, the inner one with the second.
  JetTensor z1 = jet_metric_trace(d2, 4, 0, ginv);
  JetTensor Z = jet_metric_trace(z1, 2, 0, ginv);
  JetTensor Zphi = jet_compose(Z, phi);
  JetTensor t1 = jet_map_laplacian(phi, gbar, h);
  JetTensor t2 = jet_map_laplacian(t1, phi, gbar, h);
  JetTensor defect = jet_tensor_add(Zphi, t2);
  std::vector<double> out;
  for (const JetScalar& c : defect.comp) out.push_back(c.coeff[0]);
  return out;
}

double family_commutator_antisym(const TrialData& d, int order,
                                 std::mt19937_64& rng, int cap, bool dyadic) {
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_src, JetSlot::upper_dst}, cap,
                              dyadic);
  JetTensor d2 = jet_map_covariant_derivative(
      jet_map_covariant_derivative(F, d.phi, d.gbar, d.h), d.phi, d.gbar, d.h);
  double worst = 0.0;
  const int ns = static_cast<int>(d2.slots.size());
  TupleIter it(d2);
  do {
    std::vector<int> swapped = it.idx;
    std::swap(swapped[ns - 1], swapped[ns - 2]);
    JetScalar comm = jet_sub(jet_comp(d2, it.idx), jet_comp(d2, swapped));
    JetScalar comm_sw = jet_sub(jet_comp(d2, swapped), jet_comp(d2, it.idx));
    JetScalar sum = jet_add(comm, comm_sw);
    for (double v : sum.coeff) worst = std::max(worst, std::fabs(v));
  } while (it.next());
  return worst;
}

double family_commutator_flat(const TrialData& d, int order,
                              std::mt19937_64& rng) {
  // Constant metrics mean every symbol vanishes and the second derivative is
  // a plain coordinate Hessian; with dyadic data the swap defect is exact.
  JetTensor F = random_tensor(rng, d.n, order,
                              {JetSlot::lower_src, JetSlot::upper_dst},
                              order, /*dyadic=*/true);
  JetTensor d2 = jet_map_covariant_derivative(
      jet_map_covariant_derivative(F, d.phi, d.gbar, d.h), d.phi, d.gbar, d.h);
  double worst = 0.0;
  const int ns = static_cast<int>(d2.slots.size());
  TupleIter it(d2);
  do {
    std::vector<int> swapped = it.idx;
    std::swap(swapped[ns - 1], swapped[ns - 2]);
    JetScalar comm = jet_sub(jet_comp(d2, it.idx), jet_comp(d2, swapped));
    for (double v : comm.coeff) worst = std::max(worst, std::fabs(v));
  } while (it.next());
  return worst;
}

}  // namespace

JetIdentityReport jet_verify_identities(std::uint64_t seed, int order,
                                        int trials) {
  require(order >= 1 && order <= 10, "identity suite needs order in 1..10");
  require(trials >= 1, "identity suite needs at least one trial");
  JetIdentityReport rep;
  rep.seed = seed;
  rep.order = order;
  rep.trials = trials;

  struct Spec {
    const char* name;
    int required;
  };
  const std::vector<Spec> specs = {
      {"map derivative of d(id) equals minus the difference tensor", 2},
      {"single-metric derivative splits into mixed derivative plus corrections", 2},
      {"pulled-back source metric is parallel", 2},
      {"composed target metric is parallel", 2},
      {"pullback of d(id) equals the map differential", 1},
      {"metric traces commute with pullback", 1},
      {"map derivative commutes with pullback", 2},
      {"map laplacian commutes with pullback", 3},
      {"pullback of the difference tensor is minus the map hessian", 2},
      {"pullback of the trace vector is minus the map laplacian", 2},
      {"pullback of the vector laplacian is minus the iterated map laplacian", 4},
      {"second-order vector defect ignores top-degree map coefficients", 5},
      {"derivative commutator is antisymmetric", 3},
      {"derivative commutator vanishes for flat metrics and linear maps", 3},
      {"flat metrics with a power-of-two linear map leave no defect", 4},
  };
  for (const Spec& s : specs) {
    JetIdentityLine line;
    line.name = s.name;
    line.required_order = s.required;
    rep.lines.push_back(std::move(line));
  }

  std::mt19937_64 rng(seed ^ 0x6a09e667f3bcc908ULL);
  double defect_mag = 0.0;

  for (int trial = 0; trial < trials; ++trial) {
    const int n = 2 + (trial % 2);
    const int cap = (trial % 4 < 2) ? order : std::min(order, 2);
    const bool capped = cap < order;
    TrialData d = random_trial(rng, n, order, cap);

    auto feed = [&](int line, double residual) {
      rep.lines[line].ran = true;
      rep.lines[line].trials += 1;
      rep.lines[line].max_residual =
          std::max(rep.lines[line].max_residual, residual);
    };

    if (order >= rep.lines[0].required_order) feed(0, family_did(d, order));
    if (order >= rep.lines[1].required_order)
      feed(1, family_split(d, order, rng, cap, false));
    if (order >= rep.lines[2].required_order) feed(2, family_gbar_parallel(d));
    if (order >= rep.lines[3].required_order) feed(3, family_hphi_parallel(d));
    if (order >= rep.lines[4].required_order)
      feed(4, family_pullback_did(d, order));
    if (order >= rep.lines[5].required_order)
      feed(5, family_traces(d, order, rng, cap, false));
    if (order >= rep.lines[6].required_order)
      feed(6, family_grad_natural(d, order, rng, cap, false));
    if (order >= rep.lines[7].required_order)
      feed(7, family_lap_natural(d, order, rng, cap, false));
    if (order >= rep.lines[8].required_order) feed(8, family_pullback_A(d));
    if (order >= rep.lines[9].required_order) feed(9, family_pullback_V(d));
    if (order >= rep.lines[10].required_order)
      feed(10, family_pullback_lapV(d, order));

    if (order >= rep.lines[11].required_order) {
      // Hold the source metric fixed while the map gains random top-degree
      // coefficients; the remainder's basepoint value must not move.
      JetTensor gbar = jet_random_metric(n, order, rng, 0.4, JetSlot::lower_src);
      JetTensor h = d.h;
      JetMap phi = d.phi;
      if (capped) {
        gbar = degree_cap(gbar, cap);
      }
      const std::vector<double> base = second_order_defect(gbar, h, phi);
      std::vector<JetScalar> comp = phi.comp;
      const JetSpace& sp = space(n);
      std::uniform_real_distribution<double> draw(-0.5, 0.5);
      for (JetScalar& c : comp)
        for (std::size_t i = 0; i < c.coeff.size(); ++i)
          if (sp.degree[i] == 4) c.coeff[i] += draw(rng);
      const JetMap phi4 = jet_map(n, n, std::move(comp));
      const std::vector<double> moved = second_order_defect(gbar, h, phi4);
      double scale = 1.0, diff = 0.0;
      for (std::size_t i = 0; i < base.size(); ++i) {
        scale = std::max({scale, std::fabs(base[i]), std::fabs(moved[i])});
        diff = std::max(diff, std::fabs(base[i] - moved[i]));
        defect_mag = std::max(defect_mag, std::fabs(base[i]));
      }
      feed(11, diff / scale);
      std::ostringstream note;
      note.setf(std::ios::scientific);
      note.precision(1);
      note << "basepoint remainder magnitude " << defect_mag;
      rep.lines[11].note = note.str();
    }

    if (order >= rep.lines[12].required_order)
      feed(12, family_commutator_antisym(d, order, rng, cap, false));
    if (order >= rep.lines[13].required_order) {
      TrialData flat;
      flat.n = n;
      flat.g = jet_flat_metric(n, order, JetSlot::lower_src);
      flat.h = jet_flat_metric(n, order, JetSlot::lower_dst);
      // Any invertible linear part works here: constant pullback metrics
      // leave no symbols behind.
      std::vector<JetScalar> comp;
      std::uniform_real_distribution<double> entry(-0.3, 0.3);
      for (int a = 0; a < n; ++a) {
        JetScalar c = zero_jet(n, order);
        for (int i = 0; i < n; ++i) {
          std::array<int, kMaxVars> e{};
          e[i] = 1;
          c.coeff[space(n).lookup[pack_key(e)]] = (i == a ? 1.0 : 0.0) + entry(rng);
        }
        comp.push_back(std::move(c));
      }
      flat.phi = jet_map(n, n, std::move(comp));
      flat.gbar = jet_pullback(flat.g, flat.phi);
      feed(13, family_commutator_flat(flat, order, rng));
    }
    if (order >= rep.lines[14].required_order) {
      TrialData ex = exact_trial(rng, n, order);
      double worst = family_did(ex, order);
      worst = std::max(worst, family_split(ex, order, rng, order, true));
      worst = std::max(worst, family_gbar_parallel(ex));
      worst = std::max(worst, family_hphi_parallel(ex));
      worst = std::max(worst, family_pullback_did(ex, order));
      worst = std::max(worst, family_traces(ex, order, rng, order, true));
      worst = std::max(worst, family_grad_natural(ex, order, rng, order, true));
      worst = std::max(worst, family_lap_natural(ex, order, rng, order, true));
      worst = std::max(worst, family_pullback_A(ex));
      worst = std::max(worst, family_pullback_V(ex));
      worst = std::max(worst, family_pullback_lapV(ex, order));
      feed(14, worst);
      rep.lines[14].note = "dyadic data; defects are exact zeros";
    }
  }

  for (JetIdentityLine& line : rep.lines)
    if (!line.ran) {
      std::ostringstream note;
      note << "needs order >= " << line.required_order << ", have " << order;
      line.note = note.str();
    }
  return rep;
}

}  // namespace gflow
