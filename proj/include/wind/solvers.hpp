#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wind/base.hpp"
#include "wind/game.hpp"

namespace wind {

// how the best-of-n operator is evaluated
struct BonMode {
  enum class Kind { kPowerForm, kOrderStatistics, kMonteCarlo };
  Kind kind = Kind::kPowerForm;
  int samples = 0;

  static BonMode power_form() { return BonMode{Kind::kPowerForm, 0}; }
  static BonMode order_statistics() { return BonMode{Kind::kOrderStatistics, 0}; }
  static BonMode monte_carlo(int samples) {
    if (samples < 1) throw std::invalid_argument("BonMode: samples must be >= 1");
    return BonMode{Kind::kMonteCarlo, samples};
  }
};

// analytic power form of best-of-n: y -> n pi(y|x) (Pbar_x(y,:) pi_x)^(n-1),
// the continuous max-density formula applied to the discrete simplex. Self-ties
// make the raw expression sum above 1, so rows are renormalized; the dynamics
// only use ratios, which renormalization preserves. Computed in log space.
inline TabularPolicy bon_power_operator(const TabularPolicy& pi, const PreferenceGame& game,
                                        int n) {
  detail::check_matches_game(pi, game, "bon_power_operator");
  if (n < 1) throw std::invalid_argument("bon_power_operator: n must be >= 1");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix lnew(X, Y);
  std::vector<double> logw(Y);
  for (int x = 0; x < X; ++x) {
    game.pref_geq_apply_log(x, pi.log_row(x), logw.data());
    for (int y = 0; y < Y; ++y) {
      double lp = pi.log_prob(x, y);
      lnew(x, y) = lp == kNegInf ? kNegInf : lp + (n - 1) * logw[y];
    }
  }
  return TabularPolicy::from_log_unnormalized(std::move(lnew));
}

// exact order-statistics best-of-n: the distribution of the highest-reward
// response among n i.i.d. draws, ties broken uniformly among drawn maximizers.
// For a response in tie group g with group mass q_g and cumulative masses
// F_<g / F_<=g, the selection probability is pi(y) (F_<=g^n - F_<g^n) / q_g.
inline TabularPolicy bon_exact_operator(const TabularPolicy& pi, const PreferenceGame& game,
                                        int n) {
  detail::check_matches_game(pi, game, "bon_exact_operator");
  if (n < 1) throw std::invalid_argument("bon_exact_operator: n must be >= 1");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix lnew(X, Y);
  std::vector<double> lq, lflt, lfle;
  for (int x = 0; x < X; ++x) {
    const auto& ord = game.sorted_order(x);
    const auto& gb = game.group_offsets(x);
    const int G = game.num_groups(x);
    lq.assign(G, kNegInf);
    lflt.assign(G, kNegInf);
    lfle.assign(G, kNegInf);
    double run = kNegInf;
    for (int g = 0; g < G; ++g) {
      lflt[g] = run;
      for (int i = gb[g]; i < gb[g + 1]; ++i)
        lq[g] = logaddexp(lq[g], pi.log_prob(x, ord[i]));
      run = logaddexp(run, lq[g]);
      lfle[g] = run;
    }
    for (int y = 0; y < Y; ++y) {
      double lp = pi.log_prob(x, y);
      if (lp == kNegInf) {
        lnew(x, y) = kNegInf;
        continue;
      }
      int g = game.group_of(x, y);
      // log(F_<=g^n - F_<g^n), evaluated without cancellation
      double logdiff;
      if (lflt[g] == kNegInf) {
        logdiff = n * lfle[g];
      } else {
        double t = static_cast<double>(n) * (lflt[g] - lfle[g]);  // <= 0
        logdiff = n * lfle[g] + std::log1p(-std::exp(t));
      }
      lnew(x, y) = lp - lq[g] + logdiff;
    }
  }
  return TabularPolicy::from_log_unnormalized(std::move(lnew));
}

// empirical best-of-n frequencies over `samples` seeded rounds per prompt,
// uniform tie-break among drawn maximizers
inline TabularPolicy bon_monte_carlo(const TabularPolicy& pi, const PreferenceGame& game,
                                     int n, int samples, uint64_t seed) {
  detail::check_matches_game(pi, game, "bon_monte_carlo");
  if (n < 1) throw std::invalid_argument("bon_monte_carlo: n must be >= 1");
  if (samples < 1) throw std::invalid_argument("bon_monte_carlo: samples must be >= 1");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix freq(X, Y, 0.0);
  Rng rng(seed);
  for (int x = 0; x < X; ++x) {
    Cdf cdf(pi.row_probs(x));
    for (int s = 0; s < samples; ++s) {
      int chosen = -1, ties = 0;
      double best = kNegInf;
      for (int j = 0; j < n; ++j) {
        int y = cdf.sample(rng);
        double r = game.reward(x, y);
        if (r > best) {
          best = r;
          chosen = y;
          ties = 1;
        } else if (r == best) {
          ++ties;
          if (rng.uniform() * ties < 1.0) chosen = y;
        }
      }
      freq(x, chosen) += 1.0;
    }
    for (int y = 0; y < Y; ++y) freq(x, y) /= samples;
  }
  return TabularPolicy::from_probs(freq, 0.0);
}

// the CLI/config token naming each operator variant
inline const char* mode_token(const BonMode& mode) {
  switch (mode.kind) {
    case BonMode::Kind::kPowerForm: return "paper";
    case BonMode::Kind::kOrderStatistics: return "order";
    case BonMode::Kind::kMonteCarlo: return "mc";
  }
  return "?";
}

inline TabularPolicy apply_bon(const TabularPolicy& pi, const PreferenceGame& game, int n,
                               const BonMode& mode, uint64_t seed) {
  switch (mode.kind) {
    case BonMode::Kind::kPowerForm: return bon_power_operator(pi, game, n);
    case BonMode::Kind::kOrderStatistics: return bon_exact_operator(pi, game, n);
    case BonMode::Kind::kMonteCarlo: return bon_monte_carlo(pi, game, n, mode.samples, seed);
  }
  throw std::invalid_argument("apply_bon: unknown mode");
}

// iterative best-of-n distillation. Without mixing the next iterate is the
// operator output itself; with mixing it is the geometric mixture
//   pi_{t+1} proportional to (pi_t^bon)^a1 (pi_t)^a2 (pi_ref)^(1-a1-a2)
// computed as a convex combination of logits. The trace records, for each
// iterate 0..T, distance and KL to `target` when one is given.
inline std::pair<TabularPolicy, Trace> iterative_bon(const TabularPolicy& pi_ref,
                                                     const PreferenceGame& game,
                                                     const SolverConfig& cfg, bool mixing,
                                                     const BonMode& mode,
                                                     const TabularPolicy* target = nullptr,
                                                     const TabularPolicy* pi0 = nullptr) {
  cfg.validate();
  detail::check_matches_game(pi_ref, game, "iterative_bon");
  if (mixing && !pi_ref.is_interior())
    throw std::invalid_argument("iterative_bon: mixing requires an interior reference (log of zero)");
  if (target) detail::check_same_shape(pi_ref, *target, "iterative_bon");
  if (pi0) detail::check_same_shape(pi_ref, *pi0, "iterative_bon");

  const int X = game.num_prompts(), Y = game.num_responses();
  TabularPolicy pi = pi0 ? *pi0 : pi_ref;
  std::vector<std::string> names;
  if (target) names = {"d_l1_target", "kl_target"};
  Trace trace(names);
  auto record = [&](int64_t t) {
    if (!target) return;
    trace.append(t, {avg_l1(pi, *target, game.rho()), kl_policies(*target, pi, game.rho())});
  };
  const double a1 = cfg.alpha1, a2 = mixing ? cfg.alpha2 : 0.0;
  const double a3 = std::max(0.0, 1.0 - cfg.alpha1 - cfg.alpha2);
  record(0);
  for (int t = 0; t < cfg.T; ++t) {
    TabularPolicy bon = apply_bon(pi, game, cfg.n, mode, mix_seed(cfg.seed, t));
    if (!mixing) {
      pi = std::move(bon);
    } else {
      Matrix lnew(X, Y);
      for (int x = 0; x < X; ++x) {
        for (int y = 0; y < Y; ++y) {
          // a weight of exactly zero removes its factor from the geometric
          // mixture; multiplying through would turn log(0) into NaN
          double v = 0.0;
          if (a1 != 0.0) v += a1 * bon.log_prob(x, y);
          if (a2 != 0.0) v += a2 * pi.log_prob(x, y);
          if (a3 > 0.0) v += a3 * pi_ref.log_prob(x, y);
          lnew(x, y) = v;
        }
      }
      pi = TabularPolicy::from_log_unnormalized(std::move(lnew));
    }
    record(t + 1);
  }
  return {std::move(pi), std::move(trace)};
}

// one proximal step on the regularized win-rate game, solved in closed form:
//   pi' proportional to pi^(1/(1+beta eta)) ref^(beta eta/(1+beta eta))
//                       exp(eta/(1+beta eta) P_x pi_x)
// beta = 0 is accepted and drops the reference term
inline TabularPolicy wind_exact_step(const TabularPolicy& pi, const PreferenceGame& game,
                                     const TabularPolicy& pi_ref, double beta, double eta) {
  detail::check_matches_game(pi, game, "wind_exact_step");
  detail::check_same_shape(pi, pi_ref, "wind_exact_step");
  if (beta < 0.0) throw std::invalid_argument("wind_exact_step: beta must be >= 0");
  if (!(eta > 0.0)) throw std::invalid_argument("wind_exact_step: eta must be > 0");
  if (!pi.is_interior())
    throw std::invalid_argument("wind_exact_step: non-interior policy (log of zero)");
  const double be = beta * eta;
  if (be > 0.0 && !pi_ref.is_interior())
    throw std::invalid_argument("wind_exact_step: non-interior reference (log of zero)");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix lnew(X, Y);
  std::vector<double> p(Y), v(Y);
  for (int x = 0; x < X; ++x) {
    pi.row_probs(x, p.data());
    game.pref_apply(x, p.data(), v.data());
    for (int y = 0; y < Y; ++y) {
      double num = pi.log_prob(x, y) + eta * v[y];
      if (be > 0.0) num += be * pi_ref.log_prob(x, y);
      lnew(x, y) = num / (1.0 + be);
    }
  }
  return TabularPolicy::from_log_unnormalized(std::move(lnew));
}

// exact maximizer of pi' -> pi'^T P_x pi_x - beta KL(pi'||ref) per prompt:
// proportional to ref * exp(P_x pi_x / beta)
inline TabularPolicy best_response(const TabularPolicy& pi, const PreferenceGame& game,
                                   const TabularPolicy& pi_ref, double beta) {
  detail::check_matches_game(pi, game, "best_response");
  detail::check_same_shape(pi, pi_ref, "best_response");
  if (!(beta > 0.0))
    throw std::invalid_argument(
        "best_response: beta must be > 0; use greedy_best_response for the unregularized argmax");
  if (!pi_ref.is_interior())
    throw std::invalid_argument("best_response: non-interior reference (log of zero)");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix lnew(X, Y);
  std::vector<double> p(Y), v(Y);
  for (int x = 0; x < X; ++x) {
    pi.row_probs(x, p.data());
    game.pref_apply(x, p.data(), v.data());
    for (int y = 0; y < Y; ++y) lnew(x, y) = pi_ref.log_prob(x, y) + v[y] / beta;
  }
  return TabularPolicy::from_log_unnormalized(std::move(lnew));
}

// unregularized best response: uniform over argmax_y (P_x pi_x)(y)
inline TabularPolicy greedy_best_response(const TabularPolicy& pi, const PreferenceGame& game) {
  detail::check_matches_game(pi, game, "greedy_best_response");
  const int X = game.num_prompts(), Y = game.num_responses();
  Matrix probs(X, Y, 0.0);
  std::vector<double> p(Y), v(Y);
  for (int x = 0; x < X; ++x) {
    pi.row_probs(x, p.data());
    game.pref_apply(x, p.data(), v.data());
    double best = kNegInf;
    for (int y = 0; y < Y; ++y) best = std::max(best, v[y]);
    int ties = 0;
    for (int y = 0; y < Y; ++y)
      if (v[y] == best) ++ties;
    for (int y = 0; y < Y; ++y)
      if (v[y] == best) probs(x, y) = 1.0 / ties;
  }
  return TabularPolicy::from_probs(probs, 0.0);
}

// l1 distance between pi and its best response; zero exactly at the
// regularized fixed point
inline double fixed_point_residual(const TabularPolicy& pi, const PreferenceGame& game,
                                   const TabularPolicy& pi_ref, double beta) {
  return avg_l1(pi, best_response(pi, game, pi_ref, beta), game.rho());
}

namespace detail {
inline double kl_row(const TabularPolicy& a, const TabularPolicy& b, int x) {
  double acc = 0.0;
  for (int y = 0; y < a.num_responses(); ++y) {
    double lp = a.log_prob(x, y);
    if (lp == kNegInf) continue;
    double lq = b.log_prob(x, y);
    if (lq == kNegInf) return kPosInf;
    acc += std::exp(lp) * (lp - lq);
  }
  return std::max(acc, 0.0);
}
}  // namespace detail

// exploitability of pi in the regularized win-rate game: the best-response
// payoff against pi minus pi's own self-play payoff (which is 1/2 minus its
// own KL penalty); nonnegative, zero exactly at the equilibrium. beta = 0
// falls back to the greedy best response and the gap max_pi' P(pi'>pi) - 1/2.
inline double duality_gap(const TabularPolicy& pi, const PreferenceGame& game,
                          const TabularPolicy& pi_ref, double beta) {
  detail::check_matches_game(pi, game, "duality_gap");
  if (beta < 0.0) throw std::invalid_argument("duality_gap: beta must be >= 0");
  const int Y = game.num_responses();
  TabularPolicy br = beta > 0.0 ? best_response(pi, game, pi_ref, beta)
                                : greedy_best_response(pi, game);
  std::vector<double> p(Y), v(Y);
  double total = 0.0;
  for (int x = 0; x < game.num_prompts(); ++x) {
    pi.row_probs(x, p.data());
    game.pref_apply(x, p.data(), v.data());
    double payoff = 0.0;
    for (int y = 0; y < Y; ++y) payoff += br.prob(x, y) * v[y];
    if (beta > 0.0)
      payoff += beta * (detail::kl_row(pi, pi_ref, x) - detail::kl_row(br, pi_ref, x));
    total += game.rho()[x] * payoff;
  }
  return total - 0.5;
}

// reference-dependent threshold below which the regularized equilibrium is
// exponentially close to the unregularized limit: min over x and suboptimal y
// of (mass ref puts on the optimal set) / (4 max{log ref(y)/max_opt ref, 0});
// +inf when no ratio exceeds 1
inline double c_beta(const PreferenceGame& game, const TabularPolicy& pi_ref) {
  detail::check_matches_game(pi_ref, game, "c_beta");
  if (!pi_ref.is_interior())
    throw std::invalid_argument("c_beta: non-interior reference (log of zero)");
  double best = kPosInf;
  for (int x = 0; x < game.num_prompts(); ++x) {
    const auto& opt = game.optimal_set(x);
    double opt_mass = 0.0, max_opt_log = kNegInf;
    for (int y : opt) {
      opt_mass += pi_ref.prob(x, y);
      max_opt_log = std::max(max_opt_log, pi_ref.log_prob(x, y));
    }
    size_t k = 0;
    for (int y = 0; y < game.num_responses(); ++y) {
      if (k < opt.size() && opt[k] == y) {
        ++k;
        continue;
      }
      double d = pi_ref.log_prob(x, y) - max_opt_log;
      if (d <= 0.0) continue;  // this pair contributes +inf
      best = std::min(best, opt_mass / (4.0 * d));
    }
  }
  return best;
}

// per-prompt bound on the distance between the regularized and unregularized
// limits: 4 (|Y| - |Y*(x)|) exp(-ref-mass-on-Y*(x) / (4 beta))
inline std::vector<double> equilibrium_gap_bound(const PreferenceGame& game,
                                                 const TabularPolicy& pi_ref, double beta) {
  detail::check_matches_game(pi_ref, game, "equilibrium_gap_bound");
  if (!(beta > 0.0)) throw std::invalid_argument("equilibrium_gap_bound: beta must be > 0");
  std::vector<double> out(game.num_prompts());
  for (int x = 0; x < game.num_prompts(); ++x) {
    const auto& opt = game.optimal_set(x);
    double opt_mass = 0.0;
    for (int y : opt) opt_mass += pi_ref.prob(x, y);
    double slack = static_cast<double>(game.num_responses() - static_cast<int>(opt.size()));
    out[x] = 4.0 * slack * std::exp(-opt_mass / (4.0 * beta));
  }
  return out;
}

struct EquilibriumReport {
  TabularPolicy policy;
  Trace trace;
  double residual = 0.0;
  double duality_gap = 0.0;
  int iters_used = 0;
  bool converged = false;
};

// iterate wind_exact_step until the fixed-point residual drops to tol or T
// steps have been taken. The trace records KL(reference || iterate) per
// iterate when a reference is given, and the residual otherwise. Passing a
// reference with tol <= 0 skips the per-iteration residual entirely and
// replays exactly T steps (the residual is still computed once at the end).
inline EquilibriumReport wind_exact_solve(const PreferenceGame& game, const TabularPolicy& pi_ref,
                                          const TabularPolicy& pi0, double beta, double eta,
                                          int T, double tol,
                                          const TabularPolicy* reference = nullptr) {
  if (!(beta > 0.0)) throw std::invalid_argument("wind_exact_solve: beta must be > 0");
  if (!(eta > 0.0)) throw std::invalid_argument("wind_exact_solve: eta must be > 0");
  if (T < 0) throw std::invalid_argument("wind_exact_solve: T must be >= 0");
  detail::check_matches_game(pi0, game, "wind_exact_solve");
  detail::check_same_shape(pi0, pi_ref, "wind_exact_solve");
  if (reference) detail::check_same_shape(pi0, *reference, "wind_exact_solve");

  const bool need_residual = tol > 0.0 || reference == nullptr;
  Trace trace({reference ? "kl_star" : "residual"});

  TabularPolicy pi = pi0;
  int iters = 0;
  bool converged = false;
  double res = kPosInf;
  for (;;) {
    if (need_residual) res = fixed_point_residual(pi, game, pi_ref, beta);
    trace.append(iters, {reference ? kl_policies(*reference, pi, game.rho()) : res});
    if (need_residual && res <= tol) {
      converged = true;
      break;
    }
    if (iters >= T) break;
    pi = wind_exact_step(pi, game, pi_ref, beta, eta);
    ++iters;
  }
  if (!need_residual) res = fixed_point_residual(pi, game, pi_ref, beta);
  double gap = duality_gap(pi, game, pi_ref, beta);
  return EquilibriumReport{std::move(pi), std::move(trace), res, gap, iters, converged};
}

}  // namespace wind
