// command-line front end: subcommand dispatch, config overlay, artifact
// emission (CSV / plot data / run manifest)

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <wind/wind.hpp>

namespace {

using namespace wind;

// every subcommand accepts the same override flags; values stay strings and
// are funneled through apply_option so file keys and flags share one parser
struct FlagSet {
  std::string config, seed, beta, eta, n, T, M, loss, nce_p, grid, out, mode;
  CLI::App* cmd = nullptr;

  void attach(CLI::App* c) {
    cmd = c;
    c->add_option("--config", config, "flat key = value config file");
    c->add_option("--seed", seed, "base seed (u64)");
    c->add_option("--beta", beta, "KL-regularization strength (>= 0)");
    c->add_option("--eta", eta, "step size (> 0)");
    c->add_option("--n", n, "best-of-n sample count (>= 2)");
    c->add_option("--T", T, "iteration / round count (>= 1)");
    c->add_option("--M", M, "sample batch size (>= 1)");
    c->add_option("--loss", loss, "inner loss: sq|kl|nce");
    c->add_option("--nce-p", nce_p, "noise-contrastive reference probability in (0,1)");
    c->add_option("--grid", grid, "beta grid, LO:HI:COUNT or comma list");
    c->add_option("--out", out, "output directory (default $WIND_OUT, else .)");
    c->add_option("--mode", mode, "best-of-n operator: paper|order|mc");
  }

  // config file first, then flags, so a flag beats a file beats the default
  void apply(RunOptions& opt) const {
    if (cmd->count("--config")) apply_config_file(opt, config);
    auto over = [&](const char* name, const std::string& value, const char* key) {
      if (cmd->count(name)) apply_option(opt, key, value, name);
    };
    over("--seed", seed, "seed");
    over("--beta", beta, "beta");
    over("--eta", eta, "eta");
    over("--n", n, "n");
    over("--T", T, "T");
    over("--M", M, "M");
    over("--loss", loss, "loss");
    over("--nce-p", nce_p, "nce_p");
    over("--grid", grid, "grid");
    over("--out", out, "out");
    over("--mode", mode, "mode");
  }
};

std::string resolve_out_dir(const RunOptions& opt) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  const char* env = std::getenv("WIND_OUT");
  if (env && *env) return env;
  return ".";
}

std::string prepare_out_dir(const RunOptions& opt) {
  std::string dir = resolve_out_dir(opt);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

// checksum the emitted files, write `<sub>_manifest.txt`, return the manifest
RunManifest finish_run(const std::string& sub, const RunOptions& opt, const std::string& dir,
                       const std::vector<std::string>& filenames) {
  RunManifest m;
  m.subcommand = sub;
  m.config = opt.resolved();
  m.run_id = make_run_id(m.config);
  for (const auto& name : filenames)
    m.artifacts.emplace_back(name, file_checksum(dir + "/" + name));
  write_manifest(m, dir + "/" + sub + "_manifest.txt");
  return m;
}

void report_artifacts(const std::string& sub, const RunManifest& m, const std::string& dir) {
  std::printf("run_id: %s\n", m.run_id.c_str());
  for (const auto& [name, sum] : m.artifacts)
    std::printf("wrote: %s/%s (%s)\n", dir.c_str(), name.c_str(), sum.c_str());
  std::printf("wrote: %s/%s_manifest.txt\n", dir.c_str(), sub.c_str());
}

// ---------------------------------------------------------------------------
// artifact emitters, shared between the subcommand handlers and selftest
// ---------------------------------------------------------------------------

RunManifest emit_no_mixing(const RunOptions& opt, const std::string& dir,
                           ExperimentResult* out_result = nullptr) {
  ExperimentResult res = run_no_mixing(opt.spec, opt.seed);
  write_trace_csv(res.traces.front(), dir + "/ibon_trace.csv", "iter");
  write_summary_csv(res.summary, dir + "/ibon_summary.csv");
  emit_plot_data(no_mixing_plot(res), dir + "/ibon_plot.dat", /*log_y_hint=*/true);
  if (out_result) *out_result = res;
  return finish_run("ibon", opt, dir, {"ibon_trace.csv", "ibon_summary.csv", "ibon_plot.dat"});
}

RunManifest emit_beta_sweep(const RunOptions& opt, const std::string& dir,
                            ExperimentResult* out_result = nullptr) {
  ExperimentResult res = run_beta_sweep(opt.spec, opt.seed);
  write_stacked_trace_csv(res.traces, dir + "/sweep_beta_trace.csv", "iter", {"beta", "seed"});
  write_summary_csv(res.summary, dir + "/sweep_beta_summary.csv");
  emit_plot_data(sweep_plot(res), dir + "/sweep_beta_plot.dat", /*log_y_hint=*/false);
  if (out_result) *out_result = res;
  return finish_run("sweep-beta", opt, dir,
                    {"sweep_beta_trace.csv", "sweep_beta_summary.csv", "sweep_beta_plot.dat"});
}

RunManifest emit_bound_check(const RunOptions& opt, const std::string& dir,
                             ExperimentResult* out_result = nullptr) {
  ExperimentResult res = run_bound_check(opt.spec, opt.seed);
  write_stacked_trace_csv(res.traces, dir + "/bound_check_trace.csv", "iter", {"beta", "seed"});
  write_summary_csv(res.summary, dir + "/bound_check_summary.csv");
  if (out_result) *out_result = res;
  return finish_run("bound-check", opt, dir, {"bound_check_trace.csv", "bound_check_summary.csv"});
}

RunManifest emit_sampled(const RunOptions& opt, const std::string& dir,
                         ExperimentResult* out_result = nullptr) {
  ExperimentResult res = run_sampled_convergence(opt.spec, opt.seed);
  write_stacked_trace_csv(res.traces, dir + "/wind_sample_trace.csv", "round", {"seed"});
  write_summary_csv(res.summary, dir + "/wind_sample_summary.csv");
  if (out_result) *out_result = res;
  return finish_run("wind-sample", opt, dir, {"wind_sample_trace.csv", "wind_sample_summary.csv"});
}

// the fixed demo instance: one prompt, two responses, rewards (1, 0); its
// regularized equilibrium has a closed form to compare against
PreferenceGame demo_game() {
  Matrix rewards(1, 2);
  rewards(0, 0) = 1.0;
  rewards(0, 1) = 0.0;
  return PreferenceGame(std::move(rewards), {1.0});
}

struct SolveArtifacts {
  EquilibriumReport report;
  RunManifest manifest;
};

SolveArtifacts emit_solve(const std::string& sub, const std::string& file_stem,
                          const RunOptions& opt, const std::string& dir,
                          const PreferenceGame& game) {
  const double beta = opt.spec.grid.front();
  TabularPolicy ref = TabularPolicy::uniform(game.num_prompts(), game.num_responses());
  EquilibriumReport rep =
      wind_exact_solve(game, ref, ref, beta, opt.spec.eta, opt.spec.T, opt.tol_residual);
  write_trace_csv(rep.trace, dir + "/" + file_stem + "_trace.csv", "iter");
  SummaryTable s;
  s.columns = {"beta", "eta", "residual", "duality_gap", "iters", "converged"};
  s.append({beta, opt.spec.eta, rep.residual, rep.duality_gap,
            static_cast<double>(rep.iters_used), rep.converged ? 1.0 : 0.0});
  write_summary_csv(s, dir + "/" + file_stem + "_summary.csv");
  RunManifest m =
      finish_run(sub, opt, dir, {file_stem + "_trace.csv", file_stem + "_summary.csv"});
  return {std::move(rep), std::move(m)};
}

// ---------------------------------------------------------------------------
// subcommand handlers
// ---------------------------------------------------------------------------

int cmd_ibon(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::no_mixing();
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  ExperimentResult res;
  RunManifest m = emit_no_mixing(opt, dir, &res);
  int fi = res.summary.column_index("final_d_l1_ibon");
  int fw = res.summary.column_index("final_d_l1_wind");
  for (const auto& row : res.summary.rows)
    std::printf("seed %.0f: final d_l1 ibon=%s wind=%s\n", row[0], fmt_double(row[fi]).c_str(),
                fmt_double(row[fw]).c_str());
  report_artifacts("ibon", m, dir);
  return 0;
}

int cmd_wind_exact(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::sampled_convergence();  // beta = eta = 1 defaults
  opt.spec.T = 10000;
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  SolveArtifacts art = emit_solve("wind-exact", "wind_exact", opt, dir, demo_game());
  const TabularPolicy& pi = art.report.policy;
  std::printf("policy: %s %s\n", fmt_double(pi.prob(0, 0)).c_str(),
              fmt_double(pi.prob(0, 1)).c_str());
  std::printf("residual: %s\n", fmt_double(art.report.residual).c_str());
  std::printf("duality_gap: %s\n", fmt_double(art.report.duality_gap).c_str());
  report_artifacts("wind-exact", art.manifest, dir);
  if (!art.report.converged) {
    std::fprintf(stderr, "error: no fixed point within %d iterations (residual %s)\n",
                 opt.spec.T, fmt_double(art.report.residual).c_str());
    return 2;
  }
  return 0;
}

int cmd_wind_sample(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::sampled_convergence();
  opt.spec.m_ladder = {4096};
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  ExperimentResult res;
  RunManifest m = emit_sampled(opt, dir, &res);
  int mc = res.summary.column_index("M");
  int kc = res.summary.column_index("median_kl_to_star");
  int dc = res.summary.column_index("median_d_l1_to_star");
  for (const auto& row : res.summary.rows)
    std::printf("M=%.0f: median kl_to_star=%s d_l1_to_star=%s\n", row[mc],
                fmt_double(row[kc]).c_str(), fmt_double(row[dc]).c_str());
  report_artifacts("wind-sample", m, dir);
  return 0;
}

int cmd_sweep_beta(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::beta_sweep();
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  ExperimentResult res;
  RunManifest m = emit_beta_sweep(opt, dir, &res);
  std::vector<PlotSeries> mean = sweep_plot(res);
  for (size_t i = 0; i < mean.front().x.size(); ++i)
    std::printf("beta=%s: mean d_l1_final=%s\n", fmt_double(mean.front().x[i]).c_str(),
                fmt_double(mean.front().y[i]).c_str());
  report_artifacts("sweep-beta", m, dir);
  return 0;
}

int cmd_bound_check(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::bound_check();
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  ExperimentResult res;
  RunManifest m = emit_bound_check(opt, dir, &res);
  int pc = res.summary.column_index("pass");
  int held = 0;
  for (const auto& row : res.summary.rows) held += row[pc] == 1.0 ? 1 : 0;
  std::printf("bound holds on %d/%zu rows\n", held, res.summary.rows.size());
  report_artifacts("bound-check", m, dir);
  if (held != static_cast<int>(res.summary.rows.size())) {
    std::fprintf(stderr, "error: equilibrium-distance bound violated\n");
    return 2;
  }
  return 0;
}

int cmd_nash_gap(const FlagSet& flags) {
  RunOptions opt;
  opt.spec = ExperimentSpec::no_mixing();  // carries the default 20x100 game shape
  opt.spec.grid = {1.0};
  opt.spec.eta = 1.0;
  opt.spec.T = 10000;
  flags.apply(opt);
  opt.finalize();
  std::string dir = prepare_out_dir(opt);
  PreferenceGame game = generate_game(opt.spec, mix_seed(opt.seed, 0));
  SolveArtifacts art = emit_solve("nash-gap", "nash_gap", opt, dir, game);
  std::printf("residual: %s\n", fmt_double(art.report.residual).c_str());
  std::printf("duality_gap: %s\n", fmt_double(art.report.duality_gap).c_str());
  report_artifacts("nash-gap", art.manifest, dir);
  if (!art.report.converged) {
    std::fprintf(stderr, "error: no fixed point within %d iterations\n", opt.spec.T);
    return 2;
  }
  if (art.report.duality_gap < -1e-9 || art.report.duality_gap > 1e-6) {
    std::fprintf(stderr, "error: duality gap %s outside [-1e-9, 1e-6] at a solved point\n",
                 fmt_double(art.report.duality_gap).c_str());
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// selftest: invariant suite plus a tiny pass over every emitted file format
// ---------------------------------------------------------------------------

void expect(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error("selftest failed: " + what);
  std::printf("ok: %s\n", what.c_str());
}

void selftest_invariants() {
  Rng rng(20240901);
  for (int trial = 0; trial < 25; ++trial) {
    int X = 2 + static_cast<int>(rng.next_u64() % 4);
    int Y = 2 + static_cast<int>(rng.next_u64() % 5);
    Matrix rewards(X, Y);
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y) rewards(x, y) = rng.normal();
    std::vector<double> rho(X);
    double zr = 0.0;
    for (double& r : rho) zr += (r = rng.uniform_pos());
    for (double& r : rho) r /= zr;
    PreferenceGame game(rewards, rho);

    bool complement_ok = true;
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y)
        for (int y2 = 0; y2 < Y; ++y2)
          complement_ok = complement_ok && game.pref(x, y, y2) + game.pref(x, y2, y) == 1.0;
    if (!complement_ok) throw std::runtime_error("selftest failed: preference complement");

    TabularPolicy a = TabularPolicy::dirichlet_ones(X, Y, rng);
    TabularPolicy b = TabularPolicy::dirichlet_ones(X, Y, rng);
    double wr_sum = win_rate(a, b, game) + win_rate(b, a, game);
    if (std::abs(wr_sum - 1.0) > 1e-12)
      throw std::runtime_error("selftest failed: win-rate complement");

    TabularPolicy ref = TabularPolicy::uniform(X, Y);
    double gap = duality_gap(a, game, ref, 0.5);
    if (gap < -1e-10) throw std::runtime_error("selftest failed: duality gap negativity");
  }
  expect(true, "25 random games: preference complement, win-rate complement, gap >= 0");

  // closed-form transforms on the three-response example with distinct rewards
  Matrix r3(1, 3);
  r3(0, 0) = 3.0;
  r3(0, 1) = 2.0;
  r3(0, 2) = 1.0;
  PreferenceGame g3(r3, {1.0});
  TabularPolicy u3 = TabularPolicy::uniform(1, 3);
  TabularPolicy power = bon_power_operator(u3, g3, 2);
  TabularPolicy order = bon_exact_operator(u3, g3, 2);
  expect(std::abs(power.prob(0, 0) - 0.5) < 1e-12 &&
             std::abs(power.prob(0, 1) - 1.0 / 3.0) < 1e-12 &&
             std::abs(power.prob(0, 2) - 1.0 / 6.0) < 1e-12,
         "power-form best-of-2 on uniform -> (1/2, 1/3, 1/6)");
  expect(std::abs(order.prob(0, 0) - 5.0 / 9.0) < 1e-12 &&
             std::abs(order.prob(0, 1) - 3.0 / 9.0) < 1e-12 &&
             std::abs(order.prob(0, 2) - 1.0 / 9.0) < 1e-12,
         "order-statistics best-of-2 on uniform -> (5/9, 3/9, 1/9)");

  // two-response equilibrium matches the sigmoid closed form
  const double beta = 1.0;
  EquilibriumReport rep = wind_exact_solve(demo_game(), TabularPolicy::uniform(1, 2),
                                           TabularPolicy::uniform(1, 2), beta, 1.0, 10000, 1e-12);
  double target = 1.0 / (1.0 + std::exp(-1.0 / (2.0 * beta)));
  expect(rep.converged && std::abs(rep.policy.prob(0, 0) - target) < 1e-9,
         "two-response equilibrium matches sigmoid closed form");
  expect(rep.duality_gap >= -1e-10 && rep.duality_gap <= 1e-6,
         "duality gap vanishes at the solved fixed point");
}

RunOptions selftest_tiny(const char* which) {
  RunOptions opt;
  std::string w = which;
  if (w == "ibon") {
    opt.spec = ExperimentSpec::no_mixing();
    opt.spec.num_prompts = 2;
    opt.spec.num_responses = 8;
    opt.spec.seeds = {1, 2};
    opt.spec.T = 12;
  } else if (w == "sweep-beta") {
    opt.spec = ExperimentSpec::beta_sweep();
    opt.spec.num_prompts = 2;
    opt.spec.num_responses = 6;
    opt.spec.seeds = {1, 2};
    opt.spec.grid = {0.01, 0.05, 0.1};
    opt.spec.T = 60;
  } else if (w == "bound-check") {
    opt.spec = ExperimentSpec::bound_check();
    opt.spec.seeds = {1};
    opt.spec.grid = {0.002, 0.005};
    opt.spec.T = 4000;
  } else {
    opt.spec = ExperimentSpec::sampled_convergence();
    opt.spec.seeds = {1, 2};
    opt.spec.T = 4;
    opt.spec.m_ladder = {64, 128};
    opt.spec.inner_steps = 40;
  }
  opt.finalize();
  return opt;
}

int cmd_selftest(const FlagSet& flags) {
  RunOptions base;
  base.spec = ExperimentSpec::no_mixing();
  flags.apply(base);  // only --out / --seed meaningfully apply here
  std::string root = prepare_out_dir(base) + "/selftest";

  selftest_invariants();

  auto subdir = [&](const std::string& name) {
    std::string d = root + "/" + name;
    std::filesystem::create_directories(d);
    return d;
  };

  // every schema once: the four experiments plus the demo solve
  std::string da = subdir("a");
  RunManifest ibon_m = emit_no_mixing(selftest_tiny("ibon"), da);
  RunManifest sweep_m = emit_beta_sweep(selftest_tiny("sweep-beta"), da);
  RunManifest bound_m = emit_bound_check(selftest_tiny("bound-check"), da);
  RunManifest sample_m = emit_sampled(selftest_tiny("wind-sample"), da);
  RunOptions demo = selftest_tiny("ibon");
  demo.spec.grid = {1.0};
  demo.spec.eta = 1.0;
  demo.spec.T = 10000;
  SolveArtifacts solve = emit_solve("wind-exact", "wind_exact", demo, da, demo_game());
  expect(solve.report.converged, "demo solve converges");
  expect(true, "all file formats emitted: trace CSV, summary CSV, plot data, manifest");

  // pinned column headers
  auto header_of = [&](const std::string& name) {
    std::string text = wind::detail::read_text_file(da + "/" + name);
    return text.substr(0, text.find("\r\n"));
  };
  expect(header_of("ibon_trace.csv") == "iter,d_l1_ibon,d_l1_wind",
         "no-mixing trace schema iter,d_l1_ibon,d_l1_wind");
  expect(header_of("sweep_beta_summary.csv") == "beta,d_l1_final,seed",
         "sweep summary schema beta,d_l1_final,seed");
  expect(header_of("wind_sample_trace.csv") == "round,kl_to_star,d_l1_to_star,seed",
         "sampled trace schema round,kl_to_star,d_l1_to_star,seed");
  expect(header_of("bound_check_summary.csv") == "beta,measured,bound,pass,seed",
         "bound summary schema beta,measured,bound,pass,seed");

  // byte-identical artifacts on a rerun with the same seed
  std::string db = subdir("b");
  emit_beta_sweep(selftest_tiny("sweep-beta"), db);
  for (const char* name : {"sweep_beta_trace.csv", "sweep_beta_summary.csv", "sweep_beta_plot.dat"})
    expect(wind::detail::read_text_file(da + "/" + name) ==
               wind::detail::read_text_file(db + "/" + name),
           std::string("rerun byte-identical: ") + name);

  // a run is reconstructible from its manifest alone
  RunManifest back = read_manifest(da + "/sweep-beta_manifest.txt");
  expect(back.subcommand == "sweep-beta" && back.config == sweep_m.config &&
             back.artifacts == sweep_m.artifacts,
         "manifest round-trips through its reader");
  RunOptions rebuilt;
  rebuilt.spec = ExperimentSpec::beta_sweep();
  for (const auto& [k, v] : back.config) apply_option(rebuilt, k, v, "manifest");
  rebuilt.finalize();
  std::string dc = subdir("c");
  emit_beta_sweep(rebuilt, dc);
  for (const auto& [name, sum] : back.artifacts)
    expect(file_checksum(dc + "/" + name) == sum,
           std::string("manifest replay reproduces checksum: ") + name);

  (void)ibon_m;
  (void)bound_m;
  (void)sample_m;
  std::printf("selftest passed (artifacts under %s)\n", root.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wind: win-rate dominance solvers on tabular preference games"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const FlagSet&);
  };
  const Sub subs[] = {
      {"ibon", "iterative best-of-n distillation vs the argmax limit", cmd_ibon},
      {"wind-exact", "exact mirror-descent solve of the built-in demo game", cmd_wind_exact},
      {"wind-sample", "sample-based solver, distance to the exact equilibrium", cmd_wind_sample},
      {"sweep-beta", "regularized comparison of both solvers across a beta grid", cmd_sweep_beta},
      {"bound-check", "equilibrium-distance bound on a designed instance", cmd_bound_check},
      {"nash-gap", "duality gap of the solved equilibrium on a random game", cmd_nash_gap},
      {"selftest", "invariant suite and one pass over every file format", cmd_selftest},
  };

  std::vector<FlagSet> flags(std::size(subs));
  for (size_t i = 0; i < std::size(subs); ++i) {
    CLI::App* c = app.add_subcommand(subs[i].name, subs[i].help);
    flags[i].attach(c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (size_t i = 0; i < std::size(subs); ++i)
      if (flags[i].cmd->parsed()) return subs[i].run(flags[i]);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
