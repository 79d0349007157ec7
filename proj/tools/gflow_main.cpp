// gflow: command-line front end over the experiment drivers.
//
// Exit codes: symbol 0 = strongly elliptic, 2 = critical, 3 = not elliptic;
// uniqueness/garding 0 = verdict holds, 4 = violated (garding: 3 when the
// symbol is not elliptic); verify 0 = all identities within 1e-9; flow 0 on
// any completed run (halts are recorded, not errors).  Invalid flags or
// configuration exit 1.

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "gflow/experiment.hpp"

namespace {

struct ConfigCli {
  std::string config_path;
  int n = 0, N = 0, k = 0, stride = 0, samples = 0, random_band = 0;
  double a = 0, b = 0, c = 0, shift = 0, dt = 0, dt_safety = 0, horizon = 0;
  double random_amplitude = 0, perturb_amplitude = 0;
  std::uint64_t seed = 0;
  std::string variant, outdir;
  bool allow_non_elliptic = false;
  CLI::Option *o_config, *o_n, *o_N, *o_k, *o_a, *o_b, *o_c, *o_shift;
  CLI::Option *o_seed, *o_dt, *o_dt_safety, *o_horizon, *o_stride, *o_variant;
  CLI::Option *o_outdir, *o_samples, *o_random_amplitude, *o_random_band;
  CLI::Option *o_perturb;
};

void add_config_options(CLI::App* sub, ConfigCli& c) {
  c.o_config = sub->add_option("--config", c.config_path,
                               "configuration file (key = value lines)")
                   ->check(CLI::ExistingFile);
  c.o_n = sub->add_option("--n", c.n, "torus dimension (2-4)");
  c.o_N = sub->add_option("--N", c.N, "grid points per axis (even, >= 8)");
  c.o_k = sub->add_option("--k", c.k, "Laplacian power");
  c.o_a = sub->add_option("--a", c.a, "scalar-curvature weight");
  c.o_b = sub->add_option("--b", c.b, "Hessian weight");
  c.o_c = sub->add_option("--c", c.c, "overall scale (> 0)");
  c.o_shift = sub->add_option("--obstruction-shift", c.shift,
                              "added to a through a_eff = a + shift/c");
  c.o_seed = sub->add_option("--seed", c.seed, "random seed");
  c.o_dt = sub->add_option("--dt", c.dt, "time step (0 = stepper heuristic)");
  c.o_dt_safety = sub->add_option("--dt-safety", c.dt_safety,
                                  "heuristic factor in dt = C / stiffness");
  c.o_horizon = sub->add_option("--horizon", c.horizon, "integration time");
  c.o_stride = sub->add_option("--snapshot-stride", c.stride,
                               "store every m-th step");
  c.o_variant = sub->add_option("--variant", c.variant,
                                "uniqueness variant: dt-halving | identical");
  c.o_outdir = sub->add_option("--outdir", c.outdir,
                               "output directory (GFLOW_OUTDIR wins when set)");
  c.o_samples = sub->add_option("--samples", c.samples, "coercivity draw count");
  c.o_random_amplitude = sub->add_option("--random-amplitude", c.random_amplitude,
                                         "seeded random initial field amplitude");
  c.o_random_band = sub->add_option("--random-band", c.random_band,
                                    "mode cap per axis for random fields");
  c.o_perturb = sub->add_option("--perturb-amplitude", c.perturb_amplitude,
                                "uniqueness perturbed-pair extra amplitude");
  sub->add_flag("--allow-non-elliptic", c.allow_non_elliptic,
                "proceed past the ellipticity gate");
}

gflow::RunConfig build_config(const ConfigCli& c) {
  gflow::RunConfig cfg;
  if (c.o_config->count()) cfg = gflow::load_config(c.config_path);
  if (c.o_n->count()) cfg.n = c.n;
  if (c.o_N->count()) cfg.N = c.N;
  const bool rebuild = c.o_n->count() || c.o_k->count() || c.o_a->count() ||
                       c.o_b->count() || c.o_c->count() || c.o_shift->count();
  if (rebuild) {
    const gflow::FlowParams old = cfg.params;
    cfg.params = gflow::FlowParams::canonical(
        cfg.n, c.o_k->count() ? c.k : old.k, c.o_a->count() ? c.a : old.a,
        c.o_b->count() ? c.b : old.b, c.o_c->count() ? c.c : old.c,
        c.o_shift->count() ? c.shift : old.obstruction_shift);
  }
  if (c.o_seed->count()) cfg.seed = c.seed;
  if (c.o_dt->count()) cfg.dt = c.dt;
  if (c.o_dt_safety->count()) cfg.dt_safety = c.dt_safety;
  if (c.o_horizon->count()) cfg.horizon = c.horizon;
  if (c.o_stride->count()) cfg.snapshot_stride = c.stride;
  if (c.o_variant->count()) cfg.variant = c.variant;
  if (c.o_outdir->count()) cfg.outdir = c.outdir;
  if (c.o_samples->count()) cfg.samples = c.samples;
  if (c.o_random_amplitude->count()) cfg.random_amplitude = c.random_amplitude;
  if (c.o_random_band->count()) cfg.random_band = c.random_band;
  if (c.o_perturb->count()) cfg.perturb_amplitude = c.perturb_amplitude;
  if (c.allow_non_elliptic) cfg.allow_non_elliptic = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"higher-order intrinsic geometric flows on flat periodic tori"};
  app.require_subcommand(1);

  auto* sym = app.add_subcommand("symbol",
                                 "classify the gauged principal symbol");
  int sym_n = 3, sym_k = 1;
  double sym_a = 0.0, sym_b = 0.0, sym_c = 1.0, sym_shift = 0.0;
  double sym_alpha = 0.0, sym_beta = 0.0;
  bool bach = false;
  auto* sym_n_opt = sym->add_option("--n", sym_n, "dimension (2-4; symbol only)");
  auto* sym_k_opt = sym->add_option("--k", sym_k, "Laplacian power");
  auto* sym_a_opt = sym->add_option("--a", sym_a, "scalar-curvature weight");
  auto* sym_b_opt = sym->add_option("--b", sym_b, "Hessian weight");
  auto* sym_c_opt = sym->add_option("--c", sym_c, "overall scale (> 0)");
  auto* sym_shift_opt = sym->add_option("--obstruction-shift", sym_shift,
                                        "added to a through a_eff = a + shift/c");
  auto* sym_alpha_opt = sym->add_option("--alpha", sym_alpha,
                                        "gauge weight override");
  auto* sym_beta_opt = sym->add_option("--beta", sym_beta,
                                       "gauge weight override");
  sym->add_flag("--bach", bach,
                "obstruction preset for even dimension >= 4 (n = 4: Bach)")
      ->excludes(sym_k_opt)
      ->excludes(sym_a_opt)
      ->excludes(sym_b_opt)
      ->excludes(sym_c_opt);

  auto* flow = app.add_subcommand("flow", "integrate one adjusted flow run");
  ConfigCli flow_cli;
  add_config_options(flow, flow_cli);

  auto* uniq = app.add_subcommand(
      "uniqueness", "reconstruction ladder and perturbed-pair energy bound");
  ConfigCli uniq_cli;
  add_config_options(uniq, uniq_cli);

  auto* garding = app.add_subcommand(
      "garding", "coercivity margins of the linearized operator at flat");
  ConfigCli garding_cli;
  add_config_options(garding, garding_cli);

  auto* verify = app.add_subcommand("verify",
                                    "jet and symbol identity residuals");
  std::uint64_t v_seed = 1;
  int v_order = 6, v_trials = 10;
  verify->add_option("--seed", v_seed, "random seed");
  verify->add_option("--order", v_order, "jet truncation order (1-10)");
  verify->add_option("--trials", v_trials, "draws per identity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sym) {
      gflow::FlowParams params;
      if (bach) {
        const int n = sym_n_opt->count() ? sym_n : 4;
        params = gflow::FlowParams::obstruction_preset(n);
        if (sym_shift_opt->count())
          params = gflow::FlowParams::canonical(n, params.k, params.a, params.b,
                                                params.c, sym_shift);
      } else {
        params = gflow::FlowParams::canonical(sym_n, sym_k, sym_a, sym_b, sym_c,
                                              sym_shift);
      }
      if (sym_alpha_opt->count() != sym_beta_opt->count())
        throw std::invalid_argument("alpha and beta must be given together");
      if (sym_alpha_opt->count()) {
        params.alpha = sym_alpha;
        params.beta = sym_beta;
      }
      return gflow::run_symbol_experiment(params, std::cout);
    }
    if (*flow) return gflow::run_flow_experiment(build_config(flow_cli), std::cout);
    if (*uniq)
      return gflow::run_uniqueness_experiment(build_config(uniq_cli), std::cout);
    if (*garding)
      return gflow::run_garding_experiment(build_config(garding_cli), std::cout);
    if (*verify)
      return gflow::run_verify_experiment(v_seed, v_order, v_trials, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
