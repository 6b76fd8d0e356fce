// Variance schedule, forward diffusion, the noise-prediction loss and the
// ancestral denoising sampler. Nothing here knows how the noise estimator is
// implemented; estimators are plain callables `(obs, a_tau, tau) -> Vec`.
#pragma once

#include "tacdiff/core.hpp"

#include <random>
#include <string>
#include <vector>

namespace tacdiff {

/// Precomputed per-step schedule terms. Steps are numbered 1..T; the
/// accessors take that 1-based index and the vectors are stored 0-based.
struct VarianceSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  void check_step(int tau) const {
    if (tau < 1 || tau > T) {
      throw RangeError("diffusion step " + std::to_string(tau) + " outside [1, " +
                       std::to_string(T) + "]");
    }
  }
  double beta_at(int tau) const { check_step(tau); return beta[tau - 1]; }
  double alpha_at(int tau) const { check_step(tau); return alpha[tau - 1]; }
  double alpha_bar_at(int tau) const { check_step(tau); return alpha_bar[tau - 1]; }
  double sigma_at(int tau) const { check_step(tau); return sigma[tau - 1]; }
};

/// Linear beta ramp from beta_start (step 1) to beta_end (step T).
inline VarianceSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw RangeError("diffusion horizon must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw RangeError("beta range must satisfy 0 < beta_start <= beta_end < 1");
  }
  VarianceSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    double b = beta_start + (beta_end - beta_start) * frac;
    if (i == T - 1 && T > 1) b = beta_end;
    s.beta[i] = b;
    s.alpha[i] = 1.0 - b;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(b);
  }
  return s;
}

struct DiffusedAction {
  Vec value;
  int tau = 0;
};

/// One forward noising step a_{tau-1} -> a_tau.
inline DiffusedAction diffuse_step(const DiffusedAction& a_prev, const Vec& eps, int tau,
                                   const VarianceSchedule& sched) {
  sched.check_step(tau);
  if (a_prev.tau != tau - 1) {
    throw RangeError("diffuse_step: input is at step " + std::to_string(a_prev.tau) +
                     ", expected " + std::to_string(tau - 1));
  }
  require_dim(eps.size(), a_prev.value.size(), "diffuse_step noise");
  const double a = sched.alpha[tau - 1];
  const double b = sched.beta[tau - 1];
  return {std::sqrt(a) * a_prev.value + std::sqrt(b) * eps, tau};
}

/// Single-shot sample of q(a_tau | a_0).
inline DiffusedAction diffuse_closed_form(const Vec& a0, const Vec& eps, int tau,
                                          const VarianceSchedule& sched) {
  sched.check_step(tau);
  require_dim(eps.size(), a0.size(), "diffuse_closed_form noise");
  const double ab = sched.alpha_bar[tau - 1];
  return {std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps, tau};
}

/// Squared error between the estimator's noise prediction and the drawn noise.
template <typename Net>
double training_loss(const Vec& obs, const Vec& a0, int tau, const Vec& eps, Net&& net,
                     const VarianceSchedule& sched) {
  const DiffusedAction a_tau = diffuse_closed_form(a0, eps, tau, sched);
  const Vec eps_hat = net(obs, a_tau.value, tau);
  require_dim(eps_hat.size(), eps.size(), "noise estimator output");
  return (eps_hat - eps).squaredNorm();
}

/// Reverse step a_tau -> a_{tau-1}. With `final_step_noise` false the
/// sigma*eps term is dropped at tau == 1.
inline DiffusedAction denoise_step(const DiffusedAction& a_tau, const Vec& eps_hat,
                                   const Vec& eps, int tau, const VarianceSchedule& sched,
                                   bool final_step_noise = false) {
  sched.check_step(tau);
  require_dim(eps_hat.size(), a_tau.value.size(), "denoise_step estimate");
  require_dim(eps.size(), a_tau.value.size(), "denoise_step noise");
  const double a = sched.alpha[tau - 1];
  const double ab = sched.alpha_bar[tau - 1];
  const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
  Vec out = (a_tau.value - coef * eps_hat) / std::sqrt(a);
  if (tau > 1 || final_step_noise) out += sched.sigma[tau - 1] * eps;
  return {std::move(out), tau - 1};
}

struct SamplerOptions {
  bool final_step_noise = false;
};

/// Ancestral sampling from a_T ~ N(0, I) down to a_0. Returns the result in
/// the estimator's (normalized) action space. If `trace` is non-null it
/// receives T + 1 states ordered a_T, ..., a_0.
template <typename Net, typename Rng>
Vec sample(const Vec& obs, Net&& net, const VarianceSchedule& sched, Eigen::Index action_dim,
           Rng& rng, const SamplerOptions& opts = {}, std::vector<DiffusedAction>* trace = nullptr) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DiffusedAction a{Vec(action_dim), sched.T};
  for (Eigen::Index i = 0; i < action_dim; ++i) a.value[i] = normal(rng);
  if (trace) {
    trace->clear();
    trace->reserve(sched.T + 1);
    trace->push_back(a);
  }
  Vec eps(action_dim);
  for (int tau = sched.T; tau >= 1; --tau) {
    const Vec eps_hat = net(obs, a.value, tau);
    for (Eigen::Index i = 0; i < action_dim; ++i) eps(i) = normal(rng);
    a = denoise_step(a, eps_hat, eps, tau, sched, opts.final_step_noise);
    if (!a.value.allFinite()) {
      throw NonFiniteError("sample: non-finite state after denoising step " + std::to_string(tau));
    }
    if (trace) trace->push_back(a);
  }
  return a.value;
}

}  // namespace tacdiff
