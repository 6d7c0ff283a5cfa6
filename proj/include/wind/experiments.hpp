#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wind/base.hpp"
#include "wind/game.hpp"
#include "wind/sampled.hpp"
#include "wind/solvers.hpp"

namespace wind {

enum class ExperimentKind { kNoMixing, kBetaSweep, kBoundCheck, kSampledConvergence };
enum class InitKind { kUniformRef, kDirichletOnes };

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kNoMixing: return "no-mixing";
    case ExperimentKind::kBetaSweep: return "beta-sweep";
    case ExperimentKind::kBoundCheck: return "bound-check";
    case ExperimentKind::kSampledConvergence: return "sampled-convergence";
  }
  return "?";
}

inline const char* init_name(InitKind k) {
  return k == InitKind::kUniformRef ? "uniform" : "dirichlet";
}

// one fully-resolved experiment description; every run is a pure function of
// (spec, base seed)
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kNoMixing;
  int num_prompts = 20;
  int num_responses = 100;
  std::vector<uint64_t> seeds;     // per-run seed labels, mixed with the base seed
  std::vector<double> grid;        // beta values (a single entry unless sweeping)
  int T = 50;
  double eta = 16.0;
  int n = 2;
  InitKind init = InitKind::kDirichletOnes;
  BonMode bon_mode = BonMode::power_form();
  // sampled-convergence settings
  std::vector<int> m_ladder = {4096};
  LossKind loss = LossKind::kSq;
  double judge_delta = 0.0;
  double nce_p = 0.5;
  int inner_steps = 200;
  std::optional<double> inner_lr;

  static ExperimentSpec no_mixing() {
    ExperimentSpec s;
    s.kind = ExperimentKind::kNoMixing;
    s.seeds = {1, 2, 3, 4, 5};
    s.grid = {0.0};
    s.T = 50;
    s.eta = 16.0;
    // The exact selection operator composes across rounds (round T draws the
    // best of n^T samples), so it reaches the limit within machine precision
    // by round 50 from any interior start. The power-form approximation can
    // stall for thousands of rounds when the random initialization starves
    // the optimal response (its mass escapes only quadratically), so the
    // preset pins the exact operator; the power form remains selectable.
    s.bon_mode = BonMode::order_statistics();
    return s;
  }

  static ExperimentSpec beta_sweep() {
    ExperimentSpec s;
    s.kind = ExperimentKind::kBetaSweep;
    s.seeds = {1, 2, 3};
    s.grid.clear();
    for (int i = 0; i < 10; ++i) s.grid.push_back(0.01 + i * (0.1 - 0.01) / 9.0);
    s.T = 5000;
    s.eta = 1.0;
    return s;
  }

  static ExperimentSpec bound_check() {
    ExperimentSpec s;
    s.kind = ExperimentKind::kBoundCheck;
    s.num_prompts = 2;
    s.num_responses = 3;
    s.seeds = {1, 2, 3, 4, 5};
    s.grid = {0.002, 0.005, 0.01, 0.02};
    s.T = 20000;
    s.eta = 1.0;
    return s;
  }

  static ExperimentSpec sampled_convergence() {
    ExperimentSpec s;
    s.kind = ExperimentKind::kSampledConvergence;
    s.num_prompts = 4;
    s.num_responses = 8;
    s.seeds.clear();
    for (uint64_t i = 1; i <= 20; ++i) s.seeds.push_back(i);
    s.grid = {1.0};
    s.T = 30;
    s.eta = 1.0;
    s.init = InitKind::kUniformRef;
    s.m_ladder = {256, 1024, 4096};
    return s;
  }

  void validate() const {
    if (num_prompts < 1 || num_responses < 1)
      throw std::invalid_argument("ExperimentSpec: game dimensions must be positive");
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: seeds must be nonempty");
    if (grid.empty()) throw std::invalid_argument("ExperimentSpec: grid must be nonempty");
    for (double b : grid)
      if (!(b >= 0.0) || !std::isfinite(b))
        throw std::invalid_argument("ExperimentSpec: grid values must be finite and >= 0");
    if (T < 1) throw std::invalid_argument("ExperimentSpec: T must be >= 1");
    if (!(eta > 0.0)) throw std::invalid_argument("ExperimentSpec: eta must be > 0");
    if (n < 2) throw std::invalid_argument("ExperimentSpec: n must be >= 2");
    if (m_ladder.empty()) throw std::invalid_argument("ExperimentSpec: m_ladder must be nonempty");
    for (int m : m_ladder)
      if (m < 1) throw std::invalid_argument("ExperimentSpec: m_ladder entries must be >= 1");
    if (!(judge_delta >= 0.0 && judge_delta < 0.5))
      throw std::invalid_argument("ExperimentSpec: judge_delta must lie in [0, 1/2)");
    if (!(nce_p > 0.0 && nce_p < 1.0))
      throw std::invalid_argument("ExperimentSpec: nce_p must lie in (0,1)");
    if (inner_steps < 1) throw std::invalid_argument("ExperimentSpec: inner_steps must be >= 1");
    if (inner_lr && !(*inner_lr > 0.0))
      throw std::invalid_argument("ExperimentSpec: inner_lr must be > 0");
  }
};

// plain rectangular summary: named columns over numeric rows
struct SummaryTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void append(std::vector<double> row) {
    if (row.size() != columns.size())
      throw std::invalid_argument("SummaryTable: row width does not match columns");
    rows.push_back(std::move(row));
  }

  int column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("SummaryTable: no column named " + name);
  }
};

struct ExperimentResult {
  std::vector<Trace> traces;
  SummaryTable summary;
  std::map<std::string, std::string> provenance;
};

namespace detail {
// fixed stream tags for deriving independent sub-seeds from one run seed
constexpr uint64_t kGameStream = 0;
constexpr uint64_t kInitStream = 1;
constexpr uint64_t kRoundStream = 2;
constexpr uint64_t kJudgeStream = 3;

inline std::string join_u64(const std::vector<uint64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::string join_double(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt_double(v[i]);
  }
  return s;
}

inline std::string join_int(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::map<std::string, std::string> describe(const ExperimentSpec& spec,
                                                   uint64_t base_seed) {
  std::map<std::string, std::string> m;
  m["experiment"] = experiment_name(spec.kind);
  m["num_prompts"] = std::to_string(spec.num_prompts);
  m["num_responses"] = std::to_string(spec.num_responses);
  m["seeds"] = join_u64(spec.seeds);
  m["grid"] = join_double(spec.grid);
  m["T"] = std::to_string(spec.T);
  m["eta"] = fmt_double(spec.eta);
  m["n"] = std::to_string(spec.n);
  m["init"] = init_name(spec.init);
  m["mode"] = mode_token(spec.bon_mode);
  if (spec.bon_mode.kind == BonMode::Kind::kMonteCarlo)
    m["mc_samples"] = std::to_string(spec.bon_mode.samples);
  m["m_ladder"] = join_int(spec.m_ladder);
  m["loss"] = loss_name(spec.loss);
  m["judge_delta"] = fmt_double(spec.judge_delta);
  m["nce_p"] = fmt_double(spec.nce_p);
  m["inner_steps"] = std::to_string(spec.inner_steps);
  if (spec.inner_lr) m["inner_lr"] = fmt_double(*spec.inner_lr);
  m["base_seed"] = std::to_string(base_seed);
  return m;
}

inline TabularPolicy make_init(InitKind kind, int X, int Y, uint64_t seed) {
  if (kind == InitKind::kUniformRef) return TabularPolicy::uniform(X, Y);
  Rng rng(seed);
  return TabularPolicy::dirichlet_ones(X, Y, rng);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// seeded game with standard-normal rewards and a uniform prompt distribution;
// rejects the probability-zero event of tied rewards within a prompt so that
// optimal sets are singletons
inline PreferenceGame generate_game(const ExperimentSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Matrix rewards(spec.num_prompts, spec.num_responses);
  for (int x = 0; x < spec.num_prompts; ++x)
    for (int y = 0; y < spec.num_responses; ++y) rewards(x, y) = rng.normal();
  std::vector<double> rho(spec.num_prompts, 1.0 / spec.num_prompts);
  PreferenceGame game(std::move(rewards), std::move(rho));
  for (int x = 0; x < game.num_prompts(); ++x)
    if (game.num_groups(x) != game.num_responses())
      throw std::runtime_error("generate_game: tied rewards within a prompt");
  return game;
}

// closed-form limit of the unregularized distillation dynamics: the reference
// restricted to the per-prompt optimal set and renormalized
inline TabularPolicy limit_policy_oracle(const PreferenceGame& game,
                                         const TabularPolicy& pi_ref) {
  detail::check_matches_game(pi_ref, game, "limit_policy_oracle");
  if (!pi_ref.is_interior())
    throw std::invalid_argument("limit_policy_oracle: non-interior reference (log of zero)");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix probs(X, Y, 0.0);
  for (int x = 0; x < X; ++x) {
    double mass = 0.0;
    for (int y : game.optimal_set(x)) mass += pi_ref.prob(x, y);
    for (int y : game.optimal_set(x)) probs(x, y) = pi_ref.prob(x, y) / mass;
  }
  return TabularPolicy::from_probs(probs, 0.0);
}

// unregularized head-to-head: distillation (no mixing) and the mirror step at
// beta = 0 run from a shared random start, each tracked against the
// closed-form limit
inline ExperimentResult run_no_mixing(const ExperimentSpec& spec, uint64_t base_seed) {
  spec.validate();
  if (spec.kind != ExperimentKind::kNoMixing)
    throw std::invalid_argument("run_no_mixing: wrong experiment kind");
  ExperimentResult result;
  result.provenance = detail::describe(spec, base_seed);
  result.summary.columns = {"seed", "final_d_l1_ibon", "final_d_l1_wind"};
  for (uint64_t seed_label : spec.seeds) {
    uint64_t run_seed = mix_seed(base_seed, seed_label);
    PreferenceGame game = generate_game(spec, mix_seed(run_seed, detail::kGameStream));
    TabularPolicy ref = TabularPolicy::uniform(spec.num_prompts, spec.num_responses);
    TabularPolicy oracle = limit_policy_oracle(game, ref);
    TabularPolicy init = detail::make_init(spec.init, spec.num_prompts, spec.num_responses,
                                           mix_seed(run_seed, detail::kInitStream));

    SolverConfig cfg;
    cfg.beta = 0.0;
    cfg.eta = spec.eta;
    cfg.n = spec.n;
    cfg.T = spec.T;
    cfg.alpha1 = 1.0;
    cfg.alpha2 = 0.0;
    cfg.seed = run_seed;
    auto [pi_ibon, tr_ibon] =
        iterative_bon(ref, game, cfg, /*mixing=*/false, spec.bon_mode, &oracle, &init);
    (void)pi_ibon;
    std::vector<double> d_ibon = tr_ibon.column("d_l1_target");

    std::vector<double> d_wind;
    d_wind.reserve(spec.T + 1);
    TabularPolicy pi = init;
    d_wind.push_back(avg_l1(pi, oracle, game.rho()));
    for (int t = 0; t < spec.T; ++t) {
      pi = wind_exact_step(pi, game, ref, 0.0, spec.eta);
      d_wind.push_back(avg_l1(pi, oracle, game.rho()));
    }

    Trace trace({"d_l1_ibon", "d_l1_wind"},
                {{"seed", std::to_string(seed_label)}, {"experiment", "no-mixing"}});
    for (int t = 0; t <= spec.T; ++t) trace.append(t, {d_ibon[t], d_wind[t]});
    result.traces.push_back(std::move(trace));
    result.summary.append(
        {static_cast<double>(seed_label), d_ibon[spec.T], d_wind[spec.T]});
  }
  return result;
}

// regularized head-to-head across a beta grid: distillation with the
// geometric-mixing preset vs the mirror-descent iterate after the same number
// of rounds, from a shared start per seed
inline ExperimentResult run_beta_sweep(const ExperimentSpec& spec, uint64_t base_seed) {
  spec.validate();
  if (spec.kind != ExperimentKind::kBetaSweep)
    throw std::invalid_argument("run_beta_sweep: wrong experiment kind");
  ExperimentResult result;
  result.provenance = detail::describe(spec, base_seed);
  result.summary.columns = {"beta", "d_l1_final", "seed"};
  for (uint64_t seed_label : spec.seeds) {
    uint64_t run_seed = mix_seed(base_seed, seed_label);
    PreferenceGame game = generate_game(spec, mix_seed(run_seed, detail::kGameStream));
    TabularPolicy ref = TabularPolicy::uniform(spec.num_prompts, spec.num_responses);
    TabularPolicy init = detail::make_init(spec.init, spec.num_prompts, spec.num_responses,
                                           mix_seed(run_seed, detail::kInitStream));
    for (double beta : spec.grid) {
      SolverConfig cfg = SolverConfig::mirror_mixing(beta, spec.eta, spec.n);
      cfg.n = spec.n;
      cfg.T = spec.T;
      cfg.seed = run_seed;
      auto [pi_ibon, tr_ibon] = iterative_bon(ref, game, cfg, /*mixing=*/true,
                                              spec.bon_mode, nullptr, &init);
      (void)tr_ibon;
      TabularPolicy pi_wind = init;
      for (int t = 0; t < spec.T; ++t)
        pi_wind = wind_exact_step(pi_wind, game, ref, beta, spec.eta);
      double d = avg_l1(pi_ibon, pi_wind, game.rho());
      Trace trace({"d_l1_final"}, {{"seed", std::to_string(seed_label)},
                                   {"beta", fmt_double(beta)},
                                   {"experiment", "beta-sweep"}});
      trace.append(spec.T, {d});
      result.traces.push_back(std::move(trace));
      result.summary.append({beta, d, static_cast<double>(seed_label)});
    }
  }
  return result;
}

namespace detail {
// reward table with distinct per-prompt rewards plus a reference putting 0.9
// on each prompt's best response; the designed instance for the closeness
// bound
inline std::pair<PreferenceGame, TabularPolicy> designed_bound_instance(const ExperimentSpec& spec,
                                                                        uint64_t seed) {
  PreferenceGame game = generate_game(spec, seed);
  const int X = game.num_prompts(), Y = game.num_responses();
  if (Y < 2) throw std::invalid_argument("designed_bound_instance: need at least 2 responses");
  Matrix probs(X, Y, 0.0);
  for (int x = 0; x < X; ++x) {
    int best = game.optimal_set(x)[0];
    for (int y = 0; y < Y; ++y) probs(x, y) = y == best ? 0.9 : 0.1 / (Y - 1);
  }
  return {std::move(game), TabularPolicy::from_probs(probs)};
}
}  // namespace detail

// closeness of the two regularized limits on the designed instance, compared
// against the exponential bound for each beta in the grid
inline ExperimentResult run_bound_check(const ExperimentSpec& spec, uint64_t base_seed) {
  spec.validate();
  if (spec.kind != ExperimentKind::kBoundCheck)
    throw std::invalid_argument("run_bound_check: wrong experiment kind");
  ExperimentResult result;
  result.provenance = detail::describe(spec, base_seed);
  result.summary.columns = {"beta", "measured", "bound", "pass", "seed"};
  for (uint64_t seed_label : spec.seeds) {
    uint64_t run_seed = mix_seed(base_seed, seed_label);
    auto [game, ref] =
        detail::designed_bound_instance(spec, mix_seed(run_seed, detail::kGameStream));
    double c = c_beta(game, ref);
    for (double beta : spec.grid)
      if (!(beta < c))
        throw std::invalid_argument("run_bound_check: grid beta " + fmt_double(beta) +
                                    " is not below c_beta = " + fmt_double(c));
    TabularPolicy init = detail::make_init(spec.init, spec.num_prompts, spec.num_responses,
                                           mix_seed(run_seed, detail::kInitStream));
    for (double beta : spec.grid) {
      SolverConfig cfg = SolverConfig::mirror_mixing(beta, spec.eta, spec.n);
      cfg.n = spec.n;
      cfg.T = spec.T;
      cfg.seed = run_seed;
      auto [pi_ibon, tr_ibon] = iterative_bon(ref, game, cfg, /*mixing=*/true,
                                              spec.bon_mode, nullptr, &init);
      (void)tr_ibon;
      TabularPolicy pi_wind = init;
      for (int t = 0; t < spec.T; ++t)
        pi_wind = wind_exact_step(pi_wind, game, ref, beta, spec.eta);
      double measured = avg_l1(pi_ibon, pi_wind, game.rho());
      std::vector<double> per_prompt = equilibrium_gap_bound(game, ref, beta);
      double bound = 0.0;
      for (int x = 0; x < game.num_prompts(); ++x) bound += game.rho()[x] * per_prompt[x];
      bool pass = measured <= bound + 1e-9;
      Trace trace({"measured", "bound"}, {{"seed", std::to_string(seed_label)},
                                          {"beta", fmt_double(beta)},
                                          {"experiment", "bound-check"}});
      trace.append(spec.T, {measured, bound});
      result.traces.push_back(std::move(trace));
      result.summary.append(
          {beta, measured, bound, pass ? 1.0 : 0.0, static_cast<double>(seed_label)});
    }
  }
  return result;
}

// sampled-loop convergence toward the exact regularized equilibrium of one
// fixed small game, swept over batch sizes; summarised by medians of the
// final distances across seeds
inline ExperimentResult run_sampled_convergence(const ExperimentSpec& spec, uint64_t base_seed) {
  spec.validate();
  if (spec.kind != ExperimentKind::kSampledConvergence)
    throw std::invalid_argument("run_sampled_convergence: wrong experiment kind");
  if (spec.grid.size() != 1 || !(spec.grid[0] > 0.0))
    throw std::invalid_argument("run_sampled_convergence: grid must hold one positive beta");
  const double beta = spec.grid[0];
  ExperimentResult result;
  result.provenance = detail::describe(spec, base_seed);
  result.summary.columns = {"M", "median_kl_to_star", "median_d_l1_to_star"};

  PreferenceGame game = generate_game(spec, mix_seed(base_seed, detail::kGameStream));
  TabularPolicy ref = TabularPolicy::uniform(spec.num_prompts, spec.num_responses);
  EquilibriumReport eq = wind_exact_solve(game, ref, ref, beta, spec.eta, 200000, 1e-12);
  if (!eq.converged)
    throw std::runtime_error("run_sampled_convergence: exact solve did not converge");
  const TabularPolicy& star = eq.policy;
  Judge judge = spec.judge_delta > 0.0
                    ? Judge::perturbed(spec.judge_delta, mix_seed(base_seed, detail::kJudgeStream))
                    : Judge::exact();
  ParamPolicy policy0 =
      ParamPolicy::tabular(Matrix(spec.num_prompts, spec.num_responses, 0.0));

  for (int M : spec.m_ladder) {
    std::vector<double> final_kl, final_l1;
    for (uint64_t seed_label : spec.seeds) {
      uint64_t run_seed = mix_seed(base_seed, seed_label);
      SolverConfig cfg;
      cfg.beta = beta;
      cfg.eta = spec.eta;
      cfg.T = spec.T;
      cfg.M = M;
      cfg.loss = spec.loss;
      cfg.nce_p = spec.nce_p;
      cfg.inner_steps = spec.inner_steps;
      cfg.inner_lr = spec.inner_lr;
      cfg.seed = mix_seed(run_seed, detail::kRoundStream);
      auto [theta, trace] = wind_sampled(game, judge, policy0, cfg, &star);
      (void)theta;
      final_kl.push_back(trace.last("kl_to_star"));
      final_l1.push_back(trace.last("d_l1_to_star"));
      trace.metadata()["seed"] = std::to_string(seed_label);
      trace.metadata()["M"] = std::to_string(M);
      trace.metadata()["experiment"] = "sampled-convergence";
      result.traces.push_back(std::move(trace));
    }
    result.summary.append({static_cast<double>(M), detail::median(final_kl),
                           detail::median(final_l1)});
  }
  return result;
}

}  // namespace wind
