#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wind/base.hpp"
#include "wind/game.hpp"

namespace wind {

// policy with explicit parameters: either a full logit table or linear
// features phi(x,y)^T theta; the induced policy is the row-wise softmax
class ParamPolicy {
 public:
  enum class Kind { kTabularLogit, kLinearFeature };

  static ParamPolicy tabular(Matrix logits) {
    if (!all_finite(logits.data().data(), logits.data().size()))
      throw std::invalid_argument("ParamPolicy: logits must be finite");
    ParamPolicy p(Kind::kTabularLogit, logits.rows(), logits.cols(),
                  static_cast<int>(logits.data().size()));
    p.params_ = std::move(logits.data());
    return p;
  }

  static ParamPolicy linear(Tensor3 features, std::vector<double> theta) {
    if (features.dim2() != static_cast<int>(theta.size()))
      throw std::invalid_argument("ParamPolicy: theta length must match feature dimension");
    if (!all_finite(features.data().data(), features.data().size()) ||
        !all_finite(theta.data(), theta.size()))
      throw std::invalid_argument("ParamPolicy: features and theta must be finite");
    ParamPolicy p(Kind::kLinearFeature, features.dim0(), features.dim1(), features.dim2());
    p.features_ = std::move(features);
    p.params_ = std::move(theta);
    return p;
  }

  Kind kind() const { return kind_; }
  int num_prompts() const { return num_prompts_; }
  int num_responses() const { return num_responses_; }
  // number of free parameters: |X|*|Y| logits, or the feature dimension d
  int dim() const { return static_cast<int>(params_.size()); }

  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  const Tensor3& features() const { return features_; }

  // the pre-softmax score phi_theta(y|x)
  double logit(int x, int y) const {
    if (kind_ == Kind::kTabularLogit) return params_[static_cast<size_t>(x) * num_responses_ + y];
    const double* f = feature_row(x, y);
    double acc = 0.0;
    for (size_t k = 0; k < params_.size(); ++k) acc += f[k] * params_[k];
    return acc;
  }

  // accumulate coeff * d logit(x,y) / d params into grad
  void accumulate_logit_grad(int x, int y, double coeff, std::vector<double>& grad) const {
    if (kind_ == Kind::kTabularLogit) {
      grad[static_cast<size_t>(x) * num_responses_ + y] += coeff;
      return;
    }
    const double* f = feature_row(x, y);
    for (size_t k = 0; k < grad.size(); ++k) grad[k] += coeff * f[k];
  }

  // row-wise softmax of the current logits
  TabularPolicy to_policy() const {
    Matrix logits(num_prompts_, num_responses_);
    for (int x = 0; x < num_prompts_; ++x)
      for (int y = 0; y < num_responses_; ++y) logits(x, y) = logit(x, y);
    return TabularPolicy::from_logits(std::move(logits));
  }

 private:
  ParamPolicy(Kind kind, int X, int Y, int dim)
      : kind_(kind), num_prompts_(X), num_responses_(Y) {
    if (X < 1 || Y < 1 || dim < 1)
      throw std::invalid_argument("ParamPolicy: empty parameterization");
  }

  const double* feature_row(int x, int y) const {
    return features_.data().data() +
           (static_cast<size_t>(x) * num_responses_ + y) * params_.size();
  }

  Kind kind_;
  int num_prompts_, num_responses_;
  Tensor3 features_;  // empty unless kLinearFeature
  std::vector<double> params_;
};

// preference oracle queried during sampling: either the game's own matrix or
// a deterministically perturbed copy with sup-error exactly delta before
// clipping to [0,1] (so |phat - P| <= delta always holds)
class Judge {
 public:
  static Judge exact() { return Judge(0.0, 0); }
  static Judge perturbed(double delta, uint64_t seed) {
    if (!(delta >= 0.0 && delta < 0.5))
      throw std::invalid_argument("Judge: delta must lie in [0, 1/2)");
    return Judge(delta, seed);
  }

  double delta() const { return delta_; }

  double phat(const PreferenceGame& game, int x, int y, int y2) const {
    double p = game.pref(x, y, y2);
    if (delta_ == 0.0) return p;
    uint64_t key = (static_cast<uint64_t>(static_cast<uint32_t>(x)) << 42) ^
                   (static_cast<uint64_t>(static_cast<uint32_t>(y)) << 21) ^
                   static_cast<uint64_t>(static_cast<uint32_t>(y2));
    double sign = (splitmix64(seed_ ^ splitmix64(key)) & 1u) ? 1.0 : -1.0;
    return std::min(1.0, std::max(0.0, p + delta_ * sign));
  }

 private:
  Judge(double delta, uint64_t seed) : delta_(delta), seed_(seed) {}
  double delta_;
  uint64_t seed_;
};

// one round's worth of comparison data: prompts, response pairs, the judge
// value recorded at sampling time, and the Bernoulli draws the KL/NCE losses
// consume
struct SampleBatch {
  std::vector<int> x, y, y2;
  std::vector<double> phat;  // judge value for (x, y, y2) at sampling time
  std::vector<uint8_t> v;    // v ~ Ber(phat)
  std::vector<uint8_t> v2;   // v' ~ Ber(p), the noise draws
  uint64_t seed = 0;

  int size() const { return static_cast<int>(x.size()); }
};

// draw M tuples (x ~ rho, y ~ pi(.|x), y' ~ pi(.|x)) with their judge values
// and Bernoulli marks; fully determined by seed
inline SampleBatch sample_batch(const ParamPolicy& policy, const PreferenceGame& game,
                                const Judge& judge, int M, double p, uint64_t seed) {
  if (M < 1) throw std::invalid_argument("sample_batch: M must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("sample_batch: p must lie in (0,1)");
  if (policy.num_prompts() != game.num_prompts() ||
      policy.num_responses() != game.num_responses())
    throw std::invalid_argument("sample_batch: policy shape does not match game");
  TabularPolicy pol = policy.to_policy();
  Cdf prompt_cdf(game.rho());
  std::vector<Cdf> row_cdf;
  row_cdf.reserve(game.num_prompts());
  for (int x = 0; x < game.num_prompts(); ++x) row_cdf.emplace_back(pol.row_probs(x));

  SampleBatch b;
  b.seed = seed;
  b.x.resize(M);
  b.y.resize(M);
  b.y2.resize(M);
  b.phat.resize(M);
  b.v.resize(M);
  b.v2.resize(M);
  Rng rng(seed);
  for (int i = 0; i < M; ++i) {
    int xi = prompt_cdf.sample(rng);
    int yi = row_cdf[xi].sample(rng);
    int y2i = row_cdf[xi].sample(rng);
    double ph = judge.phat(game, xi, yi, y2i);
    b.x[i] = xi;
    b.y[i] = yi;
    b.y2[i] = y2i;
    b.phat[i] = ph;
    b.v[i] = rng.bernoulli(ph) ? 1 : 0;
    b.v2[i] = rng.bernoulli(p) ? 1 : 0;
  }
  return b;
}

// frozen inputs of one round's regression problem: the step sizes, snapshots
// of the current and reference parameterizations, and the per-prompt offset
// Z_t (zero by default; any constant is absorbed by the softmax)
struct ProxyParams {
  double beta;
  double eta;
  ParamPolicy theta_t;
  ParamPolicy theta_ref;
  std::vector<double> z_t;

  ProxyParams(double beta_in, double eta_in, ParamPolicy t, ParamPolicy ref,
              std::vector<double> z = {})
      : beta(beta_in), eta(eta_in), theta_t(std::move(t)), theta_ref(std::move(ref)),
        z_t(std::move(z)) {
    if (beta < 0.0) throw std::invalid_argument("ProxyParams: beta must be >= 0");
    if (!(eta > 0.0)) throw std::invalid_argument("ProxyParams: eta must be > 0");
    if (theta_t.num_prompts() != theta_ref.num_prompts() ||
        theta_t.num_responses() != theta_ref.num_responses())
      throw std::invalid_argument("ProxyParams: snapshot shapes differ");
    if (z_t.empty()) z_t.assign(theta_t.num_prompts(), 0.0);
    if (static_cast<int>(z_t.size()) != theta_t.num_prompts())
      throw std::invalid_argument("ProxyParams: z_t length must match prompt count");
    if (!all_finite(z_t.data(), z_t.size()))
      throw std::invalid_argument("ProxyParams: z_t must be finite");
  }

  // regression target given the judge value for (y, y'):
  //   (phi_t + beta eta phi_ref + eta phat) / (1 + beta eta) + Z_t(x)
  double target(int x, int y, double phat_val) const {
    double be = beta * eta;
    return (theta_t.logit(x, y) + be * theta_ref.logit(x, y) + eta * phat_val) / (1.0 + be) +
           z_t[x];
  }

  // implied win-probability estimate of a candidate parameterization:
  //   zeta = ((1+be)/eta) phi_theta - (1/eta) phi_t - beta phi_ref - ((1+be)/eta) Z_t
  // (solving the target equation for phat)
  double zeta(const ParamPolicy& theta, int x, int y) const {
    double be = beta * eta;
    return ((1.0 + be) / eta) * theta.logit(x, y) - theta_t.logit(x, y) / eta -
           beta * theta_ref.logit(x, y) - ((1.0 + be) / eta) * z_t[x];
  }
};

inline double proxy_target(const ProxyParams& pp, const PreferenceGame& game, const Judge& judge,
                           int x, int y, int y2) {
  return pp.target(x, y, judge.phat(game, x, y, y2));
}

struct RiskEval {
  double value = 0.0;
  std::vector<double> grad;
};

// mean squared error between the candidate's scores and the round's
// regression targets
inline RiskEval risk_sq(const ParamPolicy& theta, const SampleBatch& batch,
                        const ProxyParams& pp) {
  if (batch.size() == 0) throw std::invalid_argument("risk_sq: empty batch");
  const int M = batch.size();
  RiskEval out;
  out.grad.assign(theta.dim(), 0.0);
  for (int i = 0; i < M; ++i) {
    double t = pp.target(batch.x[i], batch.y[i], batch.phat[i]);
    double f = theta.logit(batch.x[i], batch.y[i]);
    double d = f - t;
    out.value += d * d / M;
    theta.accumulate_logit_grad(batch.x[i], batch.y[i], 2.0 * d / M, out.grad);
  }
  return out;
}

namespace detail {
constexpr double kZetaEps = 1e-6;
}

// Bernoulli cross-entropy of the v marks against the candidate's implied win
// probability zeta, clamped to [eps, 1-eps]; clamped samples contribute no
// gradient
inline RiskEval risk_kl(const ParamPolicy& theta, const SampleBatch& batch,
                        const ProxyParams& pp) {
  if (batch.size() == 0) throw std::invalid_argument("risk_kl: empty batch");
  const int M = batch.size();
  const double eps = detail::kZetaEps;
  RiskEval out;
  out.grad.assign(theta.dim(), 0.0);
  const double dz_df = (1.0 + pp.beta * pp.eta) / pp.eta;
  for (int i = 0; i < M; ++i) {
    double z = pp.zeta(theta, batch.x[i], batch.y[i]);
    bool clamped = z < eps || z > 1.0 - eps;
    z = std::min(1.0 - eps, std::max(eps, z));
    double dloss_dz;
    if (batch.v[i]) {
      out.value -= std::log(z) / M;
      dloss_dz = -1.0 / (z * M);
    } else {
      out.value -= std::log1p(-z) / M;
      dloss_dz = 1.0 / ((1.0 - z) * M);
    }
    if (!clamped)
      theta.accumulate_logit_grad(batch.x[i], batch.y[i], dloss_dz * dz_df, out.grad);
  }
  return out;
}

// noise-contrastive loss: the v mark plays the data draw and v' the noise
// draw at level p; zeta is clamped below at eps, clamped samples contribute
// no gradient
inline RiskEval risk_nce(const ParamPolicy& theta, const SampleBatch& batch,
                         const ProxyParams& pp, double p) {
  if (batch.size() == 0) throw std::invalid_argument("risk_nce: empty batch");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("risk_nce: p must lie in (0,1)");
  const int M = batch.size();
  const double eps = detail::kZetaEps;
  RiskEval out;
  out.grad.assign(theta.dim(), 0.0);
  const double dz_df = (1.0 + pp.beta * pp.eta) / pp.eta;
  for (int i = 0; i < M; ++i) {
    double z = pp.zeta(theta, batch.x[i], batch.y[i]);
    bool clamped = z < eps;
    z = std::max(eps, z);
    double a = (batch.v[i] ? 1.0 : 0.0) + (batch.v2[i] ? 0.0 : 1.0);
    double b = (batch.v[i] ? 0.0 : 1.0) + (batch.v2[i] ? 1.0 : 0.0);
    out.value -= (a * std::log(z / (z + p)) + b * std::log(p / (z + p))) / M;
    if (!clamped) {
      double dloss_dz = (-a / z + (a + b) / (z + p)) / M;
      theta.accumulate_logit_grad(batch.x[i], batch.y[i], dloss_dz * dz_df, out.grad);
    }
  }
  return out;
}

using RiskFn = std::function<RiskEval(const ParamPolicy&)>;

// plain gradient descent from theta_init; evaluates the start point and each
// of `steps` updates, returning the iterate with the lowest observed risk (so
// the result is never worse than the start)
inline ParamPolicy inner_minimize(const RiskFn& risk, const ParamPolicy& theta_init, int steps,
                                  double lr) {
  if (steps < 1) throw std::invalid_argument("inner_minimize: steps must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("inner_minimize: lr must be > 0");
  ParamPolicy theta = theta_init;
  std::vector<double> best_params = theta.params();
  double best_value = kPosInf;
  for (int s = 0; s <= steps; ++s) {
    RiskEval e = risk(theta);
    if (!std::isfinite(e.value) || !all_finite(e.grad.data(), e.grad.size()))
      throw std::runtime_error("inner_minimize: non-finite risk at step " + std::to_string(s));
    if (e.value < best_value) {
      best_value = e.value;
      best_params = theta.params();
    }
    if (s == steps) break;
    auto& w = theta.mutable_params();
    for (size_t k = 0; k < w.size(); ++k) w[k] -= lr * e.grad[k];
  }
  ParamPolicy out = theta_init;
  out.mutable_params() = std::move(best_params);
  return out;
}

inline double default_inner_lr(const ParamPolicy& policy) {
  return policy.kind() == ParamPolicy::Kind::kTabularLogit ? 0.5 : 0.1;
}

// sampled distillation loop: per round, draw a fresh batch from the current
// policy, freeze it into the round's regression problem, and descend the
// configured risk. The trace records distance to `reference` per round when
// one is given.
inline std::pair<ParamPolicy, Trace> wind_sampled(const PreferenceGame& game, const Judge& judge,
                                                  const ParamPolicy& policy0,
                                                  const SolverConfig& cfg,
                                                  const TabularPolicy* reference = nullptr) {
  cfg.validate();
  if (policy0.num_prompts() != game.num_prompts() ||
      policy0.num_responses() != game.num_responses())
    throw std::invalid_argument("wind_sampled: policy shape does not match game");
  if (reference && (reference->num_prompts() != game.num_prompts() ||
                    reference->num_responses() != game.num_responses()))
    throw std::invalid_argument("wind_sampled: reference shape does not match game");

  // The cross-entropy and noise-contrastive risks are steep on the
  // probability scale: a score step of size s moves zeta by s*(1+beta*eta)/eta,
  // so the squared-loss default rate would overshoot the unit interval onto
  // the clamps (where no gradient flows). Shrink the default accordingly;
  // an explicit inner_lr always wins.
  double lr = cfg.inner_lr ? *cfg.inner_lr : default_inner_lr(policy0);
  if (!cfg.inner_lr && cfg.loss != LossKind::kSq) {
    const double dz_df = (1.0 + cfg.beta * cfg.eta) / cfg.eta;
    lr /= 2.0 * dz_df * dz_df;
  }
  std::vector<std::string> names;
  if (reference) names = {"kl_to_star", "d_l1_to_star"};
  Trace trace(names);
  trace.metadata()["loss"] = loss_name(cfg.loss);

  // The cross-entropy and noise-contrastive risks read zeta as a probability,
  // and zeta(theta_t) at the start of a round is beta*(phi_t - phi_ref) —
  // exactly 0 in round one — so an uncentered proxy would start every descent
  // on the lower clamp, where no gradient flows. Centering with
  // Z_t = -eta/(2(1+beta*eta)) maps the uninformative judge value 1/2 to the
  // pure carry-over blend of snapshot and reference, which places the
  // start-of-round zeta at exactly 1/2; the fitted policy is invariant to
  // this per-prompt shift.
  std::vector<double> z_center;
  if (cfg.loss != LossKind::kSq)
    z_center.assign(game.num_prompts(), -cfg.eta / (2.0 * (1.0 + cfg.beta * cfg.eta)));

  ParamPolicy theta = policy0;
  auto record = [&](int64_t t) {
    if (!reference) return;
    TabularPolicy pol = theta.to_policy();
    trace.append(t, {kl_policies(*reference, pol, game.rho()),
                     avg_l1(pol, *reference, game.rho())});
  };
  record(0);
  for (int t = 0; t < cfg.T; ++t) {
    SampleBatch batch =
        sample_batch(theta, game, judge, cfg.M, cfg.nce_p, mix_seed(cfg.seed, t));
    ProxyParams pp(cfg.beta, cfg.eta, theta, policy0, z_center);
    RiskFn risk;
    switch (cfg.loss) {
      case LossKind::kSq:
        risk = [&](const ParamPolicy& th) { return risk_sq(th, batch, pp); };
        break;
      case LossKind::kKl:
        risk = [&](const ParamPolicy& th) { return risk_kl(th, batch, pp); };
        break;
      case LossKind::kNce:
        risk = [&](const ParamPolicy& th) { return risk_nce(th, batch, pp, cfg.nce_p); };
        break;
    }
    theta = inner_minimize(risk, theta, cfg.inner_steps, lr);
    record(t + 1);
  }
  return {std::move(theta), std::move(trace)};
}

// exact conditional mean of the regression target under y' ~ pi_theta_t:
//   psi(x,y) = sum_y' pi_t(y'|x) * target(x, y, phat(x,y,y'))
// the population least-squares solution over tabular scores
inline Matrix conditional_mean_oracle(const PreferenceGame& game, const ProxyParams& pp,
                                      const Judge& judge) {
  if (pp.theta_t.num_prompts() != game.num_prompts() ||
      pp.theta_t.num_responses() != game.num_responses())
    throw std::invalid_argument("conditional_mean_oracle: snapshot shape does not match game");
  const int X = game.num_prompts(), Y = game.num_responses();
  TabularPolicy pol = pp.theta_t.to_policy();
  Matrix psi(X, Y);
  for (int x = 0; x < X; ++x) {
    for (int y = 0; y < Y; ++y) {
      double acc = 0.0;
      for (int y2 = 0; y2 < Y; ++y2)
        acc += pol.prob(x, y2) * pp.target(x, y, judge.phat(game, x, y, y2));
      psi(x, y) = acc;
    }
  }
  return psi;
}

// population squared risk of an arbitrary score table under x ~ rho,
// y and y' ~ pi_theta_t, evaluated by exhaustive summation
inline double population_sq_risk(const PreferenceGame& game, const ProxyParams& pp,
                                 const Judge& judge, const Matrix& table) {
  if (table.rows() != game.num_prompts() || table.cols() != game.num_responses())
    throw std::invalid_argument("population_sq_risk: table shape does not match game");
  const int X = game.num_prompts(), Y = game.num_responses();
  TabularPolicy pol = pp.theta_t.to_policy();
  double risk = 0.0;
  for (int x = 0; x < X; ++x) {
    double acc = 0.0;
    for (int y = 0; y < Y; ++y) {
      double py = pol.prob(x, y);
      if (py == 0.0) continue;
      for (int y2 = 0; y2 < Y; ++y2) {
        double w = py * pol.prob(x, y2);
        if (w == 0.0) continue;
        double d = pp.target(x, y, judge.phat(game, x, y, y2)) - table(x, y);
        acc += w * d * d;
      }
    }
    risk += game.rho()[x] * acc;
  }
  return risk;
}

}  // namespace wind
