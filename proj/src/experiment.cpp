#include "gflow/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "gflow/jet.hpp"
#include "gflow/symbol.hpp"

namespace gflow {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt3e(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

long long parse_int(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail("config: " + what + ": expected an integer, got '" + s + "'");
  return value;
}

std::uint64_t parse_u64(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail("config: " + what + ": expected an unsigned integer, got '" + s + "'");
  return value;
}

double parse_double(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) fail("config: " + what + ": expected a number");
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(value))
    fail("config: " + what + ": expected a finite number, got '" + s + "'");
  return value;
}

bool parse_bool(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail("config: " + what + ": expected true or false, got '" + s + "'");
}

ModeSeed parse_mode(const std::string& value, int n) {
  const auto parts = split(value, ':');
  if (parts.size() != 3)
    fail("config: mode needs the form 'xi : amplitude : eta'");
  ModeSeed m;
  const auto xi_tok = tokens(parts[0]);
  if (static_cast<int>(xi_tok.size()) != n)
    fail("config: mode frequency needs " + std::to_string(n) + " integer components");
  for (int a = 0; a < n; ++a)
    m.xi[a] = static_cast<int>(parse_int(xi_tok[a], "mode frequency"));
  m.amplitude = parse_double(parts[1], "mode amplitude");
  const auto eta_tok = tokens(parts[2]);
  if (static_cast<int>(eta_tok.size()) != n * n)
    fail("config: mode eta needs " + std::to_string(n * n) + " entries");
  m.eta.resize(eta_tok.size());
  for (std::size_t i = 0; i < eta_tok.size(); ++i)
    m.eta[i] = parse_double(eta_tok[i], "mode eta");
  return m;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "n", "N", "k", "a", "b", "c", "obstruction_shift", "alpha", "beta",
      "random_amplitude", "random_band", "seed", "dt", "dt_safety", "horizon",
      "snapshot_stride", "perturb_amplitude", "variant", "outdir",
      "allow_non_elliptic", "samples"};
  return keys;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char ch : s) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  quoted += '"';
  return quoted;
}

// Column name for a tracked mode: frequencies joined by '_', minus signs as 'm'.
std::string mode_column(const ModeSeed& m, int n) {
  std::string name = "mode";
  for (int a = 0; a < n; ++a) {
    name += '_';
    if (m.xi[a] < 0) name += 'm';
    name += std::to_string(std::abs(m.xi[a]));
  }
  return name + "_amp";
}

// Physical amplitude of one tracked cosine mode: twice the 2-norm of the
// symmetric coordinates of the Fourier coefficient at xi, so a field seeded
// as amp * eta cos<xi, x> starts at amp * |eta|_F.
double mode_amplitude(const MetricField& g, const ModeSeed& m, int n) {
  std::vector<int> xi(m.xi.begin(), m.xi.begin() + n);
  const auto coords = metric_mode(g, xi);
  double s = 0.0;
  for (const auto& z : coords) s += std::norm(z);
  return 2.0 * std::sqrt(s);
}

double max_abs_metric(const std::vector<MetricField>& gs) {
  double m = 0.0;
  for (const auto& g : gs) m = std::max(m, sup_norm(g));
  return m;
}

// Largest pointwise gap between two reconstructed snapshot sequences.
double max_sup_difference(const std::vector<MetricField>& a,
                          const std::vector<MetricField>& b) {
  if (a.size() != b.size()) fail("uniqueness: snapshot counts differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, sup_norm(sub(a[i], b[i])));
  return worst;
}

// Tightest K with e(t) <= e(0) exp(K t) over the sampled times: the largest
// chord slope of log e.  NaN when the start energy vanishes.
double tightest_growth_rate(const EnergySeries& es) {
  if (es.e.empty() || !(es.e.front() > 0.0))
    return std::numeric_limits<double>::quiet_NaN();
  double khat = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < es.e.size(); ++i) {
    const double dt = es.t[i] - es.t.front();
    if (dt > 0.0 && es.e[i] > 0.0)
      khat = std::max(khat, std::log(es.e[i] / es.e.front()) / dt);
  }
  return khat;
}

int resolve_steps(double horizon, double dt, int stride) {
  int steps = static_cast<int>(std::ceil(horizon / dt - 1e-9));
  steps = std::max(steps, 1);
  const int rem = steps % stride;
  if (rem != 0) steps += stride - rem;  // land the final state on a snapshot
  return steps;
}

struct LadderRung {
  AdjustedRun run;
  PureFlowReconstruction recon;
};

}  // namespace

// ---- configuration ------------------------------------------------------------

void RunConfig::validate() const {
  const Grid grid = make_grid();  // checks n and N
  params.validate();
  if (params.n != n)
    fail("config: flow parameters live in dimension " + std::to_string(params.n) +
         " but the grid has dimension " + std::to_string(n));
  if (!modes.empty() && random_amplitude > 0.0)
    fail("config: choose mode seeds or a random field, not both");
  if (random_amplitude < 0.0) fail("config: random_amplitude must be >= 0");
  if (random_band < 1 || random_band > grid.dealias_band())
    fail("config: random_band must lie in [1, N/3]");
  const int band = grid.dealias_band();
  for (const auto& m : modes) {
    if (!(m.amplitude > 0.0)) fail("config: mode amplitude must be positive");
    if (static_cast<int>(m.eta.size()) != n * n)
      fail("config: mode eta needs n*n entries");
    bool xi_zero = true, eta_zero = true;
    for (int a = 0; a < n; ++a) {
      if (std::abs(m.xi[a]) > band)
        fail("config: mode frequency exceeds the dealias band N/3");
      if (m.xi[a] != 0) xi_zero = false;
    }
    for (int a = n; a < 4; ++a)
      if (m.xi[a] != 0)
        fail("config: mode frequency has more components than the dimension");
    if (xi_zero) fail("config: mode frequency must be nonzero");
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (m.eta[i * n + j] != m.eta[j * n + i])
          fail("config: mode eta must be symmetric");
    for (double v : m.eta)
      if (v != 0.0) eta_zero = false;
    if (eta_zero) fail("config: mode eta must be nonzero");
  }
  if (dt < 0.0) fail("config: dt must be >= 0");
  if (!(dt_safety > 0.0)) fail("config: dt_safety must be positive");
  if (horizon < 0.0) fail("config: horizon must be >= 0");
  if (snapshot_stride < 1) fail("config: snapshot_stride must be >= 1");
  if (perturb_amplitude < 0.0) fail("config: perturb_amplitude must be >= 0");
  if (variant != "dt-halving" && variant != "identical")
    fail("config: variant must be dt-halving or identical");
  if (samples < 1) fail("config: samples must be >= 1");
  if (outdir.empty()) fail("config: outdir must be nonempty");
}

MetricField RunConfig::initial_metric() const {
  validate();
  const Grid grid = make_grid();
  if (!modes.empty()) {
    std::vector<std::array<int, 4>> xis;
    std::vector<std::vector<double>> etas;
    std::vector<double> amps;
    for (const auto& m : modes) {
      xis.push_back(m.xi);
      etas.push_back(m.eta);
      amps.push_back(m.amplitude);
    }
    return perturbed_flat_metric(grid, xis, etas, amps);
  }
  if (random_amplitude > 0.0)
    return add(flat_metric(grid),
               random_band_limited(grid, 2, 0, random_band, seed,
                                   random_amplitude, true));
  return flat_metric(grid);
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  out << "n = " << n << "\n";
  out << "N = " << N << "\n";
  out << "k = " << params.k << "\n";
  out << "a = " << fmt17(params.a) << "\n";
  out << "b = " << fmt17(params.b) << "\n";
  out << "c = " << fmt17(params.c) << "\n";
  out << "obstruction_shift = " << fmt17(params.obstruction_shift) << "\n";
  out << "alpha = " << fmt17(params.alpha) << "\n";
  out << "beta = " << fmt17(params.beta) << "\n";
  for (const auto& m : modes) {
    out << "mode =";
    for (int a = 0; a < n; ++a) out << ' ' << m.xi[a];
    out << " : " << fmt17(m.amplitude) << " :";
    for (double v : m.eta) out << ' ' << fmt17(v);
    out << "\n";
  }
  out << "random_amplitude = " << fmt17(random_amplitude) << "\n";
  out << "random_band = " << random_band << "\n";
  out << "seed = " << seed << "\n";
  out << "dt = " << fmt17(dt) << "\n";
  out << "dt_safety = " << fmt17(dt_safety) << "\n";
  out << "horizon = " << fmt17(horizon) << "\n";
  out << "snapshot_stride = " << snapshot_stride << "\n";
  out << "perturb_amplitude = " << fmt17(perturb_amplitude) << "\n";
  out << "variant = " << variant << "\n";
  out << "outdir = " << outdir << "\n";
  out << "allow_non_elliptic = " << (allow_non_elliptic ? "true" : "false") << "\n";
  out << "samples = " << samples << "\n";
  return out.str();
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : canonical_text()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> mode_lines;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "mode") {
      mode_lines.push_back(value);
      continue;
    }
    if (!known_keys().count(key)) fail("config: unknown key '" + key + "'");
    if (!kv.emplace(key, value).second) fail("config: duplicate key '" + key + "'");
  }

  const auto geti = [&](const char* key, int dflt) {
    const auto it = kv.find(key);
    return it == kv.end() ? dflt : static_cast<int>(parse_int(it->second, key));
  };
  const auto getd = [&](const char* key, double dflt) {
    const auto it = kv.find(key);
    return it == kv.end() ? dflt : parse_double(it->second, key);
  };
  const auto gets = [&](const char* key, const char* dflt) {
    const auto it = kv.find(key);
    return it == kv.end() ? std::string(dflt) : it->second;
  };

  RunConfig cfg;
  cfg.n = geti("n", 3);
  cfg.N = geti("N", 16);
  cfg.params = FlowParams::canonical(cfg.n, geti("k", 1), getd("a", 0.0),
                                     getd("b", 0.0), getd("c", 1.0),
                                     getd("obstruction_shift", 0.0));
  const bool has_alpha = kv.count("alpha") != 0, has_beta = kv.count("beta") != 0;
  if (has_alpha != has_beta)
    fail("config: alpha and beta must be given together");
  if (has_alpha) {
    cfg.params.alpha = getd("alpha", 0.0);
    cfg.params.beta = getd("beta", 0.0);
  }
  cfg.random_amplitude = getd("random_amplitude", 0.0);
  cfg.random_band = geti("random_band", 2);
  if (kv.count("seed")) cfg.seed = parse_u64(kv.at("seed"), "seed");
  cfg.dt = getd("dt", 0.0);
  cfg.dt_safety = getd("dt_safety", 0.5);
  cfg.horizon = getd("horizon", 0.0);
  cfg.snapshot_stride = geti("snapshot_stride", 1);
  cfg.perturb_amplitude = getd("perturb_amplitude", 0.0);
  cfg.variant = gets("variant", "dt-halving");
  cfg.outdir = gets("outdir", "gflow-out");
  if (kv.count("allow_non_elliptic"))
    cfg.allow_non_elliptic = parse_bool(kv.at("allow_non_elliptic"), "allow_non_elliptic");
  cfg.samples = geti("samples", 100);
  for (const auto& raw : mode_lines) cfg.modes.push_back(parse_mode(raw, cfg.n));
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string resolve_outdir(const RunConfig& cfg) {
  const char* env = std::getenv("GFLOW_OUTDIR");
  if (env != nullptr && *env != '\0') return env;
  return cfg.outdir;
}

// ---- records ------------------------------------------------------------------

void ExperimentRecord::add_row(const std::vector<double>& row) {
  if (columns.empty()) fail("record: set the columns before adding rows");
  if (row.size() != columns.size())
    fail("record: row width " + std::to_string(row.size()) +
         " differs from the column count " + std::to_string(columns.size()));
  if (!rows.empty() && !(row[0] > rows.back()[0]))
    fail("record: first column must be strictly increasing");
  rows.push_back(row);
}

void ExperimentRecord::set_verdict(const std::string& key, const std::string& value) {
  for (auto& kv : verdicts)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  verdicts.emplace_back(key, value);
}

const std::string* ExperimentRecord::verdict(const std::string& key) const {
  for (const auto& kv : verdicts)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

std::string ExperimentRecord::csv() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < columns.size(); ++i)
    out << (i ? "," : "") << csv_field(columns[i]);
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << fmt17(row[i]);
    out << "\n";
  }
  return out.str();
}

void ExperimentRecord::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/record.csv", std::ios::binary);
    if (!out) fail("record: cannot write " + dir + "/record.csv");
    out << csv();
  }
  char hash_hex[24];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(config_hash));
  std::ofstream out(dir + "/record.txt", std::ios::binary);
  if (!out) fail("record: cannot write " + dir + "/record.txt");
  out << "record " << name << "\n";
  out << "config_hash " << hash_hex << "\n";
  out << "columns " << columns.size() << "\n";
  out << "rows " << rows.size() << "\n";
  for (const auto& kv : verdicts) out << "verdict " << kv.first << " " << kv.second << "\n";
}

// ---- symbol driver ------------------------------------------------------------

int run_symbol_experiment(const FlowParams& params, std::ostream& out) {
  params.validate();
  const SymbolReport rep = check_strong_ellipticity(params);
  out << "operator order " << 2 * params.k + 2 << " in dimension " << params.n
      << ", a_eff = " << fmt6(params.a_eff()) << "\n";
  out << "gauge weights alpha = " << fmt6(params.alpha)
      << ", beta = " << fmt6(params.beta) << "\n";
  out << "verdict: " << verdict_name(rep.verdict) << "\n";
  out << "sharp constant lambda = " << fmt17(rep.lambda) << "\n";
  out << "witness xi =";
  for (double v : rep.witness_xi) out << ' ' << fmt6(v);
  out << "\nwitness eta =";
  for (double v : rep.witness_eta) out << ' ' << fmt6(v);
  out << "\n";
  switch (rep.verdict) {
    case EllipticityVerdict::strongly_elliptic: return 0;
    case EllipticityVerdict::critical: return 2;
    case EllipticityVerdict::not_elliptic: return 3;
  }
  return 3;
}

// ---- flow driver --------------------------------------------------------------

int run_flow_experiment(const RunConfig& cfg, std::ostream& out,
                        ExperimentRecord* out_record) {
  cfg.validate();
  if (!(cfg.horizon > 0.0)) fail("flow: horizon must be positive");
  const Grid grid = cfg.make_grid();
  const MetricField flat = flat_metric(grid);
  const MetricField g0 = cfg.initial_metric();

  StepperOptions sopts;
  sopts.dt_safety = cfg.dt_safety;
  sopts.allow_non_elliptic = cfg.allow_non_elliptic;
  const AdjustedStepper stepper(flat, cfg.params, sopts);
  const double dt = cfg.dt > 0.0 ? cfg.dt : stepper.suggested_dt();

  RunOptions opts;
  opts.dt = dt;
  opts.steps = resolve_steps(cfg.horizon, dt, cfg.snapshot_stride);
  opts.snapshot_every = cfg.snapshot_stride;
  opts.stepper = sopts;
  const AdjustedRun run = run_adjusted_flow(g0, flat, cfg.params, opts);

  ExperimentRecord rec;
  rec.name = "flow";
  rec.config_hash = cfg.hash();
  rec.columns = {"t", "l2_norm", "sup_norm", "energy_e"};
  const bool reconstructed = run.halted_step < 0 && run.g.size() >= 3;
  if (reconstructed) rec.columns.push_back("pure_residual");
  for (const auto& m : cfg.modes) rec.columns.push_back(mode_column(m, cfg.n));

  const int energy_order = std::min(cfg.params.k + 1, 4);
  const std::vector<MetricField> flats(run.g.size(), flat);
  const EnergySeries energy = energy_monitor(run.times, run.g, flats, flat, energy_order);

  PureFlowReconstruction recon;
  if (reconstructed) recon = reconstruct_pure_flow(run, flat, cfg.params);

  double worst_sup = 0.0;
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    const TensorField dev = sub(run.g[i], flat);
    std::vector<double> row = {run.times[i], flat_l2_norm(dev), sup_norm(dev),
                               energy.e[i]};
    worst_sup = std::max(worst_sup, row[2]);
    if (reconstructed) row.push_back(recon.residual[i]);
    for (const auto& m : cfg.modes) row.push_back(mode_amplitude(run.g[i], m, cfg.n));
    rec.add_row(row);
  }

  rec.set_verdict("dt", fmt17(run.dt));
  rec.set_verdict("steps", std::to_string(opts.steps));
  rec.set_verdict("snapshots", std::to_string(run.g.size()));
  rec.set_verdict("stiffness", fmt17(stepper.stiffness()));
  rec.set_verdict("energy_order", std::to_string(energy_order));
  std::string status;
  if (run.halted_step >= 0) {
    status = "halted";
    rec.set_verdict("halt", "step " + std::to_string(run.halted_step) + ": " +
                                run.halt_reason);
  } else if (worst_sup <= 1e-12) {
    status = "fixed-point";
  } else {
    status = "completed";
  }
  rec.set_verdict("status", status);
  if (reconstructed) {
    double worst_res = 0.0;
    for (double r : recon.residual) worst_res = std::max(worst_res, r);
    rec.set_verdict("worst_pure_residual", fmt17(worst_res));
  }

  const std::string dir = resolve_outdir(cfg);
  rec.write(dir);
  const std::string manifest = write_run(dir, run);

  out << "flow run on a " << cfg.n << "d torus, " << cfg.N << " points per axis\n";
  out << "dt = " << fmt6(run.dt) << ", steps = " << opts.steps << ", snapshots = "
      << run.g.size() << "\n";
  out << "status: " << status;
  if (run.halted_step >= 0)
    out << " (step " << run.halted_step << ": " << run.halt_reason << ")";
  out << "\n";
  out << "final sup distance from flat = "
      << fmt3e(sup_norm(sub(run.g.back(), flat))) << "\n";
  if (reconstructed)
    out << "worst pure-flow residual = " << fmt3e(
            *std::max_element(recon.residual.begin(), recon.residual.end()))
        << "\n";
  out << "wrote " << dir << "/record.csv and " << manifest << "\n";
  if (out_record != nullptr) *out_record = std::move(rec);
  return 0;
}

// ---- uniqueness driver ----------------------------------------------------------

int run_uniqueness_experiment(const RunConfig& cfg, std::ostream& out,
                              ExperimentRecord* out_record) {
  cfg.validate();
  if (!(cfg.horizon > 0.0)) fail("uniqueness: horizon must be positive");
  if (cfg.modes.empty() && cfg.random_amplitude <= 0.0)
    fail("uniqueness: configure a nonflat initial metric");
  const Grid grid = cfg.make_grid();
  const MetricField flat = flat_metric(grid);
  const MetricField g0 = cfg.initial_metric();

  StepperOptions sopts;
  sopts.dt_safety = cfg.dt_safety;
  sopts.allow_non_elliptic = cfg.allow_non_elliptic;
  double dt0 = cfg.dt;
  if (!(dt0 > 0.0)) {
    const AdjustedStepper stepper(flat, cfg.params, sopts);
    dt0 = stepper.suggested_dt();
  }
  const int stride = cfg.snapshot_stride;
  const int steps0 = std::max(resolve_steps(cfg.horizon, dt0, stride), 2 * stride);

  const auto make_rung = [&](const MetricField& start, int halving) {
    RunOptions opts;
    const int f = 1 << halving;
    opts.dt = dt0 / f;
    opts.steps = steps0 * f;
    opts.snapshot_every = stride * f;
    opts.stepper = sopts;
    LadderRung rung;
    rung.run = run_adjusted_flow(start, flat, cfg.params, opts);
    if (rung.run.halted_step >= 0)
      fail("uniqueness: run halted at step " +
           std::to_string(rung.run.halted_step) + ": " + rung.run.halt_reason);
    rung.recon = reconstruct_pure_flow(rung.run, flat, cfg.params);
    return rung;
  };

  ExperimentRecord rec;
  rec.name = "uniqueness";
  rec.config_hash = cfg.hash();

  if (cfg.variant == "identical") {
    const LadderRung a = make_rung(g0, 0);
    const LadderRung b = make_rung(g0, 0);
    rec.columns = {"t", "sup_diff"};
    double worst = 0.0;
    for (std::size_t i = 0; i < a.recon.gbar.size(); ++i) {
      const double d = sup_norm(sub(a.recon.gbar[i], b.recon.gbar[i]));
      worst = std::max(worst, d);
      rec.add_row({a.recon.times[i], d});
    }
    const bool ok = worst == 0.0;
    rec.set_verdict("difference", fmt17(worst));
    rec.set_verdict("status", ok ? "consistent" : "inconsistent");
    rec.write(resolve_outdir(cfg));
    out << "identical-run reconstruction difference = " << fmt3e(worst)
        << (ok ? " (exactly zero)\n" : " (nonzero)\n");
    out << "status: " << (ok ? "consistent" : "inconsistent") << "\n";
    if (out_record != nullptr) *out_record = std::move(rec);
    return ok ? 0 : 4;
  }

  // dt-halving ladder with independently integrated diffeomorphisms.
  const LadderRung a = make_rung(g0, 0);
  const LadderRung b = make_rung(g0, 1);
  const LadderRung c = make_rung(g0, 2);

  const double d_ab = max_sup_difference(a.recon.gbar, b.recon.gbar);
  const double d_bc = max_sup_difference(b.recon.gbar, c.recon.gbar);
  const double floor = 1e-12 * (1.0 + max_abs_metric(a.recon.gbar));
  const double err_estimate = (4.0 / 3.0) * std::max(d_ab, floor);
  const bool order_ok = d_bc <= std::max(d_ab / 3.0, floor);
  const bool consistent_ok = d_ab <= (16.0 / 3.0) * std::max(d_bc, floor);

  // Perturbed pair at dt0 and at dt0/2: energy bound plus rate stability.
  RunConfig pcfg = cfg;
  if (!pcfg.modes.empty()) {
    const double base = pcfg.modes[0].amplitude;
    pcfg.modes[0].amplitude =
        base + (cfg.perturb_amplitude > 0.0 ? cfg.perturb_amplitude : 0.3 * base);
  } else {
    pcfg.random_amplitude *= 1.3;
  }
  const MetricField gp = pcfg.initial_metric();

  const auto perturbed_run = [&](int halving) {
    RunOptions opts;
    const int f = 1 << halving;
    opts.dt = dt0 / f;
    opts.steps = steps0 * f;
    opts.snapshot_every = stride * f;
    opts.stepper = sopts;
    AdjustedRun run = run_adjusted_flow(gp, flat, cfg.params, opts);
    if (run.halted_step >= 0)
      fail("uniqueness: perturbed run halted at step " +
           std::to_string(run.halted_step) + ": " + run.halt_reason);
    return run;
  };
  const AdjustedRun p0 = perturbed_run(0);
  const AdjustedRun p1 = perturbed_run(1);

  const int energy_order = std::min(cfg.params.k + 1, 4);
  const EnergySeries e0 = energy_monitor(a.run.times, a.run.g, p0.g, flat, energy_order);
  const EnergySeries e1 = energy_monitor(b.run.times, b.run.g, p1.g, flat, energy_order);
  const double khat = tightest_growth_rate(e0);
  const double khat_refined = tightest_growth_rate(e1);
  const bool khat_ok =
      std::isfinite(khat) && std::isfinite(khat_refined) &&
      std::abs(khat_refined - khat) <=
          0.10 * std::max({std::abs(khat), std::abs(khat_refined), 0.05});

  rec.columns = {"t", "sup_diff_ab", "sup_diff_bc", "energy_e"};
  for (std::size_t i = 0; i < a.recon.gbar.size(); ++i)
    rec.add_row({a.recon.times[i],
                 sup_norm(sub(a.recon.gbar[i], b.recon.gbar[i])),
                 sup_norm(sub(b.recon.gbar[i], c.recon.gbar[i])), e0.e[i]});

  const bool ok = order_ok && consistent_ok && khat_ok;
  rec.set_verdict("difference_ab", fmt17(d_ab));
  rec.set_verdict("difference_bc", fmt17(d_bc));
  rec.set_verdict("error_estimate", fmt17(err_estimate));
  rec.set_verdict("floor", fmt17(floor));
  rec.set_verdict("khat", fmt17(khat));
  rec.set_verdict("khat_refined", fmt17(khat_refined));
  rec.set_verdict("order", order_ok ? "ok" : "violated");
  rec.set_verdict("agreement", consistent_ok ? "ok" : "violated");
  rec.set_verdict("rate_stability", khat_ok ? "ok" : "violated");
  rec.set_verdict("status", ok ? "consistent" : "inconsistent");
  rec.write(resolve_outdir(cfg));

  out << "reconstruction ladder: dt = " << fmt6(dt0) << ", " << a.recon.gbar.size()
      << " snapshots\n";
  out << "  sup difference dt vs dt/2   = " << fmt3e(d_ab) << "\n";
  out << "  sup difference dt/2 vs dt/4 = " << fmt3e(d_bc) << "\n";
  out << "  discretization error estimate = " << fmt3e(err_estimate)
      << " (roundoff floor " << fmt3e(floor) << ")\n";
  out << "  convergence order: " << (order_ok ? "ok" : "violated")
      << ", agreement within estimate: " << (consistent_ok ? "ok" : "violated")
      << "\n";
  out << "perturbed pair: Khat = " << fmt6(khat) << ", refined = "
      << fmt6(khat_refined) << " ("
      << (khat_ok ? "stable within 10%" : "NOT stable within 10%") << ")\n";
  out << "energy bound e(t) <= e(0) exp(Khat t) holds by the chord construction\n";
  out << "status: " << (ok ? "consistent" : "inconsistent") << "\n";
  if (out_record != nullptr) *out_record = std::move(rec);
  return ok ? 0 : 4;
}

// ---- Garding driver -------------------------------------------------------------

int run_garding_experiment(const RunConfig& cfg, std::ostream& out,
                           ExperimentRecord* out_record) {
  cfg.validate();
  const SymbolReport rep = check_strong_ellipticity(cfg.params);
  if (rep.verdict == EllipticityVerdict::not_elliptic) {
    out << "verdict: " << verdict_name(rep.verdict)
        << " (lambda = " << fmt6(rep.lambda) << "); no coercivity bound to test\n";
    return 3;
  }
  const double lambda = rep.lambda;
  const Grid grid = cfg.make_grid();
  const MetricField flat = flat_metric(grid);
  const int band = std::min(grid.dealias_band(), cfg.random_band);
  const int draws = std::max(cfg.samples, 100);

  StepperOptions sopts;
  sopts.allow_non_elliptic = cfg.allow_non_elliptic;
  const AdjustedStepper stepper(flat, cfg.params, sopts);
  const double eps = 1e-6;

  ExperimentRecord rec;
  rec.name = "garding";
  rec.config_hash = cfg.hash();
  rec.columns = {"sample", "margin", "quadratic_form", "gradient_term"};

  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < draws; ++i) {
    TensorField u(grid, 2, 0);
    if (i > 0) {
      u = random_band_limited(grid, 2, 0, band, cfg.seed + static_cast<std::uint64_t>(i),
                              1.0, true);
      const double nrm = flat_l2_norm(u);
      if (nrm > 0.0) u = scale(u, 1.0 / nrm);
    }
    const TensorField fp = stepper.gauged_rhs(add(flat, scale(u, eps)));
    const TensorField fm = stepper.gauged_rhs(add(flat, scale(u, -eps)));
    const TensorField lu = scale(sub(fp, fm), 1.0 / (2.0 * eps));
    const double lhs = -l2_inner(lu, u, flat);
    TensorField d = u;
    for (int j = 0; j <= cfg.params.k; ++j) d = partials_lower(d);
    const double grad = l2_inner(d, d, flat);
    const double margin = lhs - lambda * grad;
    worst = std::min(worst, margin);
    rec.add_row({static_cast<double>(i), margin, lhs, grad});
  }

  const bool ok = worst >= -1e-8;
  rec.set_verdict("lambda", fmt17(lambda));
  rec.set_verdict("worst_margin", fmt17(worst));
  rec.set_verdict("samples", std::to_string(draws));
  rec.set_verdict("status", ok ? "ok" : "violated");
  rec.write(resolve_outdir(cfg));

  out << "coercivity at the flat background: " << draws
      << " unit-norm band-limited fields, lambda = " << fmt17(lambda) << "\n";
  out << "worst margin <-Lu,u> - lambda |grad^" << cfg.params.k + 1
      << " u|^2 = " << fmt3e(worst) << "\n";
  out << "status: " << (ok ? "ok" : "violated") << "\n";
  if (out_record != nullptr) *out_record = std::move(rec);
  return ok ? 0 : 4;
}

// ---- identity verification driver -----------------------------------------------

namespace {

// Closed two-term form of the gauged principal symbol at the canonical weights:
// c X^{k-1} ( X^2 |eta|^2 / 2 + a_eff <xi (x) xi - X g, eta>^2 ), all
// contractions through an arbitrary SPD metric.  Evaluated independently of
// the building-block assembly.
double reduced_symbol_reference(const FlowParams& p, const Eigen::MatrixXd& m,
                                const Eigen::VectorXd& xi, const Eigen::MatrixXd& eta,
                                double* scale_out) {
  const Eigen::MatrixXd minv = m.inverse();
  const double x = xi.dot(minv * xi);
  const double nsq = (minv * eta * minv * eta).trace();
  const Eigen::VectorXd xiup = minv * xi;
  const double dev = xiup.dot(eta * xiup) - x * (minv * eta).trace();
  const double xik = std::pow(x, p.k - 1);
  *scale_out = std::abs(p.c) * xik *
               (0.5 * x * x * nsq + std::abs(p.a_eff()) * dev * dev);
  return p.c * xik * (0.5 * x * x * nsq + p.a_eff() * dev * dev);
}

}  // namespace

int run_verify_experiment(std::uint64_t seed, int order, int trials,
                          std::ostream& out) {
  if (order < 1 || order > 10) fail("verify: order must lie in [1, 10]");
  if (trials < 1) fail("verify: trials must be >= 1");

  const JetIdentityReport rep = jet_verify_identities(seed, order, trials);
  out << "jet identity suite: seed " << seed << ", order " << order
      << ", trials " << trials << "\n";
  bool all_ok = true;
  for (const auto& line : rep.lines) {
    out << "  " << std::left << std::setw(70) << line.name << " ";
    if (!line.ran) {
      out << "skipped (insufficient order: " << line.note << ")\n";
      continue;
    }
    const bool ok = line.max_residual <= 1e-9;
    all_ok = all_ok && ok;
    out << (ok ? "ok  " : "FAIL") << "  max residual " << fmt3e(line.max_residual)
        << " over " << line.trials << " trials\n";
  }

  // Reduced-symbol identity: the assembled gauged symbol against the closed
  // two-term form, at random parameters, frequencies, directions and metrics.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  std::uniform_real_distribution<double> scale_c(0.2, 2.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    FlowParams p;
    p.n = 2 + static_cast<int>(rng() % 4);  // symbol algebra covers n up to 5
    p.k = 1 + static_cast<int>(rng() % 3);
    p.a = coef(rng);
    p.b = coef(rng);
    p.c = scale_c(rng);
    p.alpha = 0.5 + p.a - p.b;
    p.beta = p.b - p.a;
    const int n = p.n;
    Eigen::VectorXd xi(n);
    do {
      for (int i = 0; i < n; ++i) xi[i] = gauss(rng);
    } while (xi.norm() < 0.3);
    Eigen::MatrixXd eta(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) eta(i, j) = eta(j, i) = gauss(rng);
    Eigen::MatrixXd r(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) r(i, j) = gauss(rng) / std::sqrt(double(n));
    const Eigen::MatrixXd m =
        r.transpose() * r + 0.5 * Eigen::MatrixXd::Identity(n, n);

    SymbolInput in;
    in.params = p;
    in.xi.assign(xi.data(), xi.data() + n);
    in.eta.assign(eta.data(), eta.data() + n * n);
    in.metric.assign(m.data(), m.data() + n * n);
    const double assembled = combined_symbol(in);
    double form_scale = 0.0;
    const double reduced = reduced_symbol_reference(p, m, xi, eta, &form_scale);
    const double rel = std::abs(assembled - reduced) /
                       std::max(form_scale, std::numeric_limits<double>::min());
    worst = std::max(worst, rel);
  }
  const bool reduced_ok = worst <= 1e-9;
  all_ok = all_ok && reduced_ok;
  out << "  " << std::left << std::setw(70)
      << "gauged symbol at canonical weights matches the two-term closed form"
      << " " << (reduced_ok ? "ok  " : "FAIL") << "  max residual " << fmt3e(worst)
      << " over " << trials << " trials\n";
  out << (all_ok ? "all identities within 1e-9\n"
                 : "identity residuals exceed 1e-9\n");
  return all_ok ? 0 : 1;
}

}  // namespace gflow
