#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "wind/base.hpp"

namespace wind {

// linear-space floor below which an entry is treated as zero when a policy is
// built from probabilities; stored policies live in log space
inline constexpr double kInteriorFloor = 1e-300;

// per-prompt distributions over responses, stored as log-probabilities and
// normalized with log-sum-exp
class TabularPolicy {
 public:
  static TabularPolicy uniform(int num_prompts, int num_responses) {
    if (num_prompts < 1 || num_responses < 1)
      throw std::invalid_argument("TabularPolicy: empty prompt or response set");
    Matrix lp(num_prompts, num_responses, -std::log(static_cast<double>(num_responses)));
    return TabularPolicy(std::move(lp));
  }

  static TabularPolicy from_probs(const Matrix& probs, double floor = kInteriorFloor) {
    if (probs.rows() < 1 || probs.cols() < 1)
      throw std::invalid_argument("TabularPolicy: empty prompt or response set");
    Matrix lp(probs.rows(), probs.cols());
    for (int x = 0; x < probs.rows(); ++x) {
      double sum = 0.0;
      for (int y = 0; y < probs.cols(); ++y) {
        double p = probs(x, y);
        if (!std::isfinite(p) || p < 0.0)
          throw std::invalid_argument("TabularPolicy: probabilities must be finite and >= 0");
        sum += p;
        lp(x, y) = p < floor ? kNegInf : std::log(p);
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("TabularPolicy: row does not sum to 1");
    }
    TabularPolicy out(std::move(lp));
    out.normalize_rows();
    return out;
  }

  // finite logits only; rows are normalized in place
  static TabularPolicy from_logits(Matrix logits) {
    if (logits.rows() < 1 || logits.cols() < 1)
      throw std::invalid_argument("TabularPolicy: empty prompt or response set");
    if (!all_finite(logits.data().data(), logits.data().size()))
      throw std::invalid_argument("TabularPolicy: logits must be finite");
    TabularPolicy out(std::move(logits));
    out.normalize_rows();
    return out;
  }

  // uniform draw from the simplex: normalized unit-rate exponentials
  static TabularPolicy dirichlet_ones(int num_prompts, int num_responses, Rng& rng) {
    Matrix lp(num_prompts, num_responses);
    for (int x = 0; x < num_prompts; ++x) {
      for (int y = 0; y < num_responses; ++y) lp(x, y) = std::log(rng.exponential());
    }
    TabularPolicy out(std::move(lp));
    out.normalize_rows();
    return out;
  }

  int num_prompts() const { return log_probs_.rows(); }
  int num_responses() const { return log_probs_.cols(); }
  double log_prob(int x, int y) const { return log_probs_(x, y); }
  double prob(int x, int y) const { return std::exp(log_probs_(x, y)); }
  const double* log_row(int x) const { return log_probs_.row(x); }
  const Matrix& log_probs() const { return log_probs_; }

  void row_probs(int x, double* out) const {
    for (int y = 0; y < num_responses(); ++y) out[y] = std::exp(log_probs_(x, y));
  }
  std::vector<double> row_probs(int x) const {
    std::vector<double> out(num_responses());
    row_probs(x, out.data());
    return out;
  }

  // no exact zeros anywhere (every log-probability finite)
  bool is_interior() const {
    for (double v : log_probs_.data())
      if (v == kNegInf) return false;
    return true;
  }

  bool same_shape(const TabularPolicy& o) const {
    return num_prompts() == o.num_prompts() && num_responses() == o.num_responses();
  }

  // construct directly from log space; rows are renormalized
  static TabularPolicy from_log_unnormalized(Matrix lp) {
    TabularPolicy out(std::move(lp));
    out.normalize_rows();
    return out;
  }

 private:
  explicit TabularPolicy(Matrix lp) : log_probs_(std::move(lp)) {}

  void normalize_rows() {
    for (int x = 0; x < log_probs_.rows(); ++x) {
      double z = logsumexp(log_probs_.row(x), log_probs_.cols());
      if (z == kNegInf || !std::isfinite(z))
        throw std::invalid_argument("TabularPolicy: row has no mass");
      for (int y = 0; y < log_probs_.cols(); ++y) log_probs_(x, y) -= z;
    }
  }

  Matrix log_probs_;
};

// preference tables induced by a reward: strict comparison P (win 1, tie 1/2,
// loss 0) and weak comparison Pbar (win-or-tie 1, loss 0), with ties decided
// by exact float equality
class PreferenceGame {
 public:
  PreferenceGame(Matrix rewards, std::vector<double> rho)
      : rewards_(std::move(rewards)), rho_(std::move(rho)) {
    const int X = rewards_.rows(), Y = rewards_.cols();
    if (X < 1) throw std::invalid_argument("PreferenceGame: empty prompt set");
    if (Y < 1) throw std::invalid_argument("PreferenceGame: empty response set");
    if (static_cast<int>(rho_.size()) != X)
      throw std::invalid_argument("PreferenceGame: rho length != num prompts");
    double sum = 0.0;
    for (double r : rho_) {
      if (!std::isfinite(r) || r <= 0.0)
        throw std::invalid_argument("PreferenceGame: rho must have full support (every entry > 0)");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("PreferenceGame: rho does not sum to 1");
    if (!all_finite(rewards_.data().data(), rewards_.data().size()))
      throw std::invalid_argument("PreferenceGame: rewards must be finite");

    pref_ = Tensor3(X, Y, Y);
    pref_geq_ = Tensor3(X, Y, Y);
    order_.resize(X);
    group_of_.resize(X);
    group_begin_.resize(X);
    opt_sets_.resize(X);
    for (int x = 0; x < X; ++x) {
      for (int y = 0; y < Y; ++y) {
        for (int yp = 0; yp < Y; ++yp) {
          double a = rewards_(x, y), b = rewards_(x, yp);
          pref_(x, y, yp) = a > b ? 1.0 : (a == b ? 0.5 : 0.0);
          pref_geq_(x, y, yp) = a >= b ? 1.0 : 0.0;
        }
      }
      // responses sorted by reward ascending, grouped by exact ties
      order_[x].resize(Y);
      std::iota(order_[x].begin(), order_[x].end(), 0);
      std::stable_sort(order_[x].begin(), order_[x].end(),
                       [&](int a, int b) { return rewards_(x, a) < rewards_(x, b); });
      group_of_[x].assign(Y, 0);
      group_begin_[x].push_back(0);
      for (int i = 1; i < Y; ++i) {
        if (rewards_(x, order_[x][i]) != rewards_(x, order_[x][i - 1]))
          group_begin_[x].push_back(i);
      }
      group_begin_[x].push_back(Y);
      for (size_t g = 0; g + 1 < group_begin_[x].size(); ++g) {
        for (int i = group_begin_[x][g]; i < group_begin_[x][g + 1]; ++i)
          group_of_[x][order_[x][i]] = static_cast<int>(g);
      }
      // argmax responses = top group, reported ascending
      int gtop = static_cast<int>(group_begin_[x].size()) - 2;
      opt_sets_[x].assign(order_[x].begin() + group_begin_[x][gtop], order_[x].end());
      std::sort(opt_sets_[x].begin(), opt_sets_[x].end());
    }
  }

  int num_prompts() const { return rewards_.rows(); }
  int num_responses() const { return rewards_.cols(); }
  const std::vector<double>& rho() const { return rho_; }
  double reward(int x, int y) const { return rewards_(x, y); }
  const Matrix& rewards() const { return rewards_; }
  double pref(int x, int y, int yp) const { return pref_(x, y, yp); }
  double pref_geq(int x, int y, int yp) const { return pref_geq_(x, y, yp); }
  const std::vector<int>& optimal_set(int x) const { return opt_sets_[x]; }
  int num_groups(int x) const { return static_cast<int>(group_begin_[x].size()) - 1; }
  // responses sorted by reward ascending, and offsets of the exact-tie groups
  const std::vector<int>& sorted_order(int x) const { return order_[x]; }
  const std::vector<int>& group_offsets(int x) const { return group_begin_[x]; }
  int group_of(int x, int y) const { return group_of_[x][y]; }

  // out[y] = sum_y' P_x(y,y') p[y'] = mass strictly below y's level + half the
  // mass at y's level; O(|Y|) via the reward-sorted groups
  void pref_apply(int x, const double* p, double* out) const {
    const auto& ord = order_[x];
    const auto& gb = group_begin_[x];
    const int G = num_groups(x);
    double below = 0.0;
    for (int g = 0; g < G; ++g) {
      double at = 0.0;
      for (int i = gb[g]; i < gb[g + 1]; ++i) at += p[ord[i]];
      double val = below + 0.5 * at;
      for (int i = gb[g]; i < gb[g + 1]; ++i) out[ord[i]] = val;
      below += at;
    }
  }

  // out[y] = sum_y' Pbar_x(y,y') p[y'] = mass at or below y's level
  void pref_geq_apply(int x, const double* p, double* out) const {
    const auto& ord = order_[x];
    const auto& gb = group_begin_[x];
    const int G = num_groups(x);
    double upto = 0.0;
    for (int g = 0; g < G; ++g) {
      for (int i = gb[g]; i < gb[g + 1]; ++i) upto += p[ord[i]];
      for (int i = gb[g]; i < gb[g + 1]; ++i) out[ord[i]] = upto;
    }
  }

  // out[y] = log sum_y' Pbar_x(y,y') exp(lp[y']), a prefix log-sum-exp over
  // ascending reward groups; exact even when linear-space mass underflows
  void pref_geq_apply_log(int x, const double* lp, double* out) const {
    const auto& ord = order_[x];
    const auto& gb = group_begin_[x];
    const int G = num_groups(x);
    double upto = kNegInf;
    for (int g = 0; g < G; ++g) {
      for (int i = gb[g]; i < gb[g + 1]; ++i) upto = logaddexp(upto, lp[ord[i]]);
      for (int i = gb[g]; i < gb[g + 1]; ++i) out[ord[i]] = upto;
    }
  }

 private:
  Matrix rewards_;
  std::vector<double> rho_;
  Tensor3 pref_, pref_geq_;
  std::vector<std::vector<int>> order_;
  std::vector<std::vector<int>> group_of_;
  std::vector<std::vector<int>> group_begin_;
  std::vector<std::vector<int>> opt_sets_;
};

inline PreferenceGame preference_from_rewards(Matrix rewards, std::vector<double> rho) {
  return PreferenceGame(std::move(rewards), std::move(rho));
}

namespace detail {
inline void check_same_shape(const TabularPolicy& a, const TabularPolicy& b,
                             const char* where) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
}
inline void check_matches_game(const TabularPolicy& a, const PreferenceGame& g,
                               const char* where) {
  if (a.num_prompts() != g.num_prompts() || a.num_responses() != g.num_responses())
    throw std::invalid_argument(std::string(where) + ": policy shape does not match game");
}
}  // namespace detail

// expected preference of pi's response over pi2's: E_x pi_x' P_x pi2_x
inline double win_rate(const TabularPolicy& pi, const TabularPolicy& pi2,
                       const PreferenceGame& game) {
  detail::check_same_shape(pi, pi2, "win_rate");
  detail::check_matches_game(pi, game, "win_rate");
  const int Y = game.num_responses();
  std::vector<double> q(Y), v(Y);
  double total = 0.0;
  for (int x = 0; x < game.num_prompts(); ++x) {
    pi2.row_probs(x, q.data());
    game.pref_apply(x, q.data(), v.data());
    double acc = 0.0;
    for (int y = 0; y < Y; ++y) acc += pi.prob(x, y) * v[y];
    total += game.rho()[x] * acc;
  }
  return total;
}

// E_x KL(pi_x || pi2_x); +inf on an absolute-continuity failure, never an error
inline double kl_policies(const TabularPolicy& pi, const TabularPolicy& pi2,
                          const std::vector<double>& rho) {
  detail::check_same_shape(pi, pi2, "kl_policies");
  if (static_cast<int>(rho.size()) != pi.num_prompts())
    throw std::invalid_argument("kl_policies: rho length mismatch");
  double total = 0.0;
  for (int x = 0; x < pi.num_prompts(); ++x) {
    double acc = 0.0;
    for (int y = 0; y < pi.num_responses(); ++y) {
      double lp = pi.log_prob(x, y);
      if (lp == kNegInf) continue;  // 0 log 0 = 0
      double lq = pi2.log_prob(x, y);
      if (lq == kNegInf) return kPosInf;
      acc += std::exp(lp) * (lp - lq);
    }
    total += rho[x] * acc;
  }
  return std::max(total, 0.0);
}

// E_x || pi_x - pi2_x ||_1
inline double avg_l1(const TabularPolicy& pi, const TabularPolicy& pi2,
                     const std::vector<double>& rho) {
  detail::check_same_shape(pi, pi2, "avg_l1");
  if (static_cast<int>(rho.size()) != pi.num_prompts())
    throw std::invalid_argument("avg_l1: rho length mismatch");
  double total = 0.0;
  for (int x = 0; x < pi.num_prompts(); ++x) {
    double acc = 0.0;
    for (int y = 0; y < pi.num_responses(); ++y)
      acc += std::abs(pi.prob(x, y) - pi2.prob(x, y));
    total += rho[x] * acc;
  }
  return total;
}

// KL-regularized win rate of pi against the reference
inline double wr_objective(const TabularPolicy& pi, const PreferenceGame& game,
                           const TabularPolicy& pi_ref, double beta) {
  if (beta < 0.0) throw std::invalid_argument("wr_objective: beta must be >= 0");
  return win_rate(pi, pi_ref, game) - beta * kl_policies(pi, pi_ref, game.rho());
}

// payoff of the log-win-rate game:
//   E_{x, y~pi} log( E_{y'~pi2} Pbar_x(y,y') ) - beta KL(pi || pi_ref)
// -inf when some pi-supported y has zero weak-win mass against pi2
inline double log_win_objective(const TabularPolicy& pi, const TabularPolicy& pi2,
                                const PreferenceGame& game, const TabularPolicy& pi_ref,
                                double beta) {
  detail::check_same_shape(pi, pi2, "log_win_objective");
  detail::check_same_shape(pi, pi_ref, "log_win_objective");
  detail::check_matches_game(pi, game, "log_win_objective");
  const int Y = game.num_responses();
  std::vector<double> logw(Y);
  double total = 0.0;
  for (int x = 0; x < game.num_prompts(); ++x) {
    game.pref_geq_apply_log(x, pi2.log_row(x), logw.data());
    double acc = 0.0;
    for (int y = 0; y < Y; ++y) {
      double lp = pi.log_prob(x, y);
      if (lp == kNegInf) continue;
      if (logw[y] == kNegInf) return kNegInf;
      acc += std::exp(lp) * logw[y];
    }
    total += game.rho()[x] * acc;
  }
  double kl = kl_policies(pi, pi_ref, game.rho());
  if (kl == kPosInf) return kNegInf;
  return total - beta * kl;
}

enum class LossKind { kSq, kKl, kNce };

inline std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::kSq: return "sq";
    case LossKind::kKl: return "kl";
    case LossKind::kNce: return "nce";
  }
  return "?";
}

// every solver hyperparameter in one bag; validate() names the offending field
struct SolverConfig {
  double beta = 0.0;
  double eta = 1.0;
  int n = 2;
  double alpha1 = 1.0;  // geometric-mixture weight on the BoN-transformed policy
  double alpha2 = 0.0;  // weight on the current policy (rest goes to the reference)
  int T = 10000;
  int M = 4096;
  LossKind loss = LossKind::kSq;
  double nce_p = 0.5;
  uint64_t seed = 1;
  double tol_residual = 1e-10;
  int inner_steps = 200;
  std::optional<double> inner_lr;  // unset: 0.5 for tabular logits, 0.1 for linear features

  void validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta))
      throw std::invalid_argument("SolverConfig: beta must be >= 0");
    if (!(eta > 0.0) || !std::isfinite(eta))
      throw std::invalid_argument("SolverConfig: eta must be > 0");
    if (n < 1) throw std::invalid_argument("SolverConfig: n must be >= 1");
    if (!(alpha1 > 0.0) || alpha1 > 1.0)
      throw std::invalid_argument("SolverConfig: alpha1 must be in (0,1]");
    if (alpha2 < 0.0 || alpha2 > 1.0)
      throw std::invalid_argument("SolverConfig: alpha2 must be in [0,1]");
    if (alpha1 + alpha2 > 1.0 + 1e-12)
      throw std::invalid_argument("SolverConfig: alpha1 + alpha2 must be <= 1");
    if (T < 0) throw std::invalid_argument("SolverConfig: T must be >= 0");
    if (M < 1) throw std::invalid_argument("SolverConfig: M must be >= 1");
    if (!(nce_p > 0.0 && nce_p < 1.0))
      throw std::invalid_argument("SolverConfig: nce_p must be in (0,1)");
    if (!(tol_residual > 0.0))
      throw std::invalid_argument("SolverConfig: tol_residual must be > 0");
    if (inner_steps < 1) throw std::invalid_argument("SolverConfig: inner_steps must be >= 1");
    if (inner_lr && !(*inner_lr > 0.0))
      throw std::invalid_argument("SolverConfig: inner_lr must be > 0");
  }

  // mixing rates that make the geometric BoN mixture a KL-regularized mirror
  // step of rate eta: alpha1 = eta/((1+beta*eta)(n-1)),
  // alpha2 = (n-1-eta)/((1+beta*eta)(n-1)); needs eta <= n-1 so alpha2 >= 0
  static SolverConfig mirror_mixing(double beta, double eta, int n) {
    if (n < 2) throw std::invalid_argument("SolverConfig: mixing preset needs n >= 2");
    if (!(eta > 0.0)) throw std::invalid_argument("SolverConfig: eta must be > 0");
    if (beta < 0.0) throw std::invalid_argument("SolverConfig: beta must be >= 0");
    if (eta > static_cast<double>(n - 1))
      throw std::invalid_argument("SolverConfig: mixing preset needs eta <= n-1");
    SolverConfig cfg;
    cfg.beta = beta;
    cfg.eta = eta;
    cfg.n = n;
    double denom = (1.0 + beta * eta) * static_cast<double>(n - 1);
    cfg.alpha1 = eta / denom;
    cfg.alpha2 = (static_cast<double>(n - 1) - eta) / denom;
    cfg.validate();
    return cfg;
  }
};

// per-iteration metric records with a fixed column set
class Trace {
 public:
  Trace() = default;
  explicit Trace(std::vector<std::string> metric_names,
                 std::map<std::string, std::string> metadata = {})
      : metric_names_(std::move(metric_names)), metadata_(std::move(metadata)) {}

  struct Row {
    int64_t iter;
    std::vector<double> values;
  };

  void append(int64_t iter, std::vector<double> values) {
    if (values.size() != metric_names_.size())
      throw std::invalid_argument("Trace: value count does not match metric names");
    if (!rows_.empty() && iter <= rows_.back().iter)
      throw std::invalid_argument("Trace: iter must be strictly increasing");
    rows_.push_back(Row{iter, std::move(values)});
  }

  const std::vector<std::string>& metric_names() const { return metric_names_; }
  const std::vector<Row>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  int metric_index(const std::string& name) const {
    for (size_t i = 0; i < metric_names_.size(); ++i)
      if (metric_names_[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("Trace: no metric named " + name);
  }

  std::vector<double> column(const std::string& name) const {
    int j = metric_index(name);
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r.values[j]);
    return out;
  }

  double last(const std::string& name) const {
    if (rows_.empty()) throw std::invalid_argument("Trace: empty");
    return rows_.back().values[metric_index(name)];
  }

 private:
  std::vector<std::string> metric_names_;
  std::map<std::string, std::string> metadata_;
  std::vector<Row> rows_;
};

}  // namespace wind
