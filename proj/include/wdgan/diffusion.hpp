#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wdgan/noise.hpp"
#include "wdgan/tensor.hpp"
#include "wdgan/wavelet.hpp"

namespace wdgan {

inline constexpr int kMaxTimesteps = 8;

// Few-step variance-preserving schedule. All per-step arrays are indexed by
// t - 1 for t in [1, T]; alpha_bar(0) is 1 by definition.
class DiffusionSchedule {
 public:
  // Build from an explicit beta array (this is what checkpoints store).
  static DiffusionSchedule from_betas(std::vector<double> betas) {
    const int T = static_cast<int>(betas.size());
    if (T < 1 || T > kMaxTimesteps)
      throw ConfigError("diffusion: T=" + std::to_string(T) + " outside [1, " +
                        std::to_string(kMaxTimesteps) + "]");
    DiffusionSchedule s;
    s.beta_ = std::move(betas);
    double ab = 1.0;
    for (int i = 0; i < T; ++i) {
      const double b = s.beta_[i];
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("diffusion: beta outside (0, 1)");
      const double ab_prev = ab;
      ab *= 1.0 - b;
      s.alpha_.push_back(1.0 - b);
      s.alpha_bar_.push_back(ab);
      s.coef_x0_.push_back(std::sqrt(ab_prev) * b / (1.0 - ab));
      s.coef_xt_.push_back(std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab));
      s.var_.push_back((1.0 - ab_prev) / (1.0 - ab) * b);
    }
    return s;
  }

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }
  double posterior_mean_coef_x0(int t) const { return coef_x0_[index(t)]; }
  double posterior_mean_coef_xt(int t) const { return coef_xt_[index(t)]; }
  double posterior_var(int t) const { return var_[index(t)]; }
  const std::vector<double>& betas() const { return beta_; }

  void check_t(int t) const { (void)index(t); }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > T())
      throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_, coef_x0_, coef_xt_, var_;
};

// Discretized VP-SDE: beta_i = 1 - exp(-beta_min/T - (beta_max - beta_min)(2i - 1)/(2T^2)).
inline DiffusionSchedule make_schedule(int T, double beta_min = 0.1, double beta_max = 20.0) {
  if (T < 1 || T > kMaxTimesteps)
    throw ConfigError("diffusion: T=" + std::to_string(T) + " outside [1, " + std::to_string(kMaxTimesteps) + "]");
  if (!(beta_min > 0.0)) throw ConfigError("diffusion: beta_min must be positive");
  if (!(beta_min < beta_max)) throw ConfigError("diffusion: beta_min must be below beta_max");
  std::vector<double> betas;
  const double Td = T;
  for (int i = 1; i <= T; ++i)
    betas.push_back(1.0 - std::exp(-beta_min / Td - (beta_max - beta_min) * (2.0 * i - 1.0) / (2.0 * Td * Td)));
  return DiffusionSchedule::from_betas(std::move(betas));
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const DiffusionSchedule& sched) {
  sched.check_t(t);
  x0.check_same(noise, "q_sample");
  const double a = std::sqrt(sched.alpha_bar(t)), s = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * noise[i];
  return out;
}

inline Tensor q_sample(const WaveletPacket& x0, int t, const Tensor& noise, const DiffusionSchedule& sched) {
  return q_sample(x0.data, t, noise, sched);
}

// One forward kernel step x_{t-1} -> x_t.
inline Tensor q_step(const Tensor& x_prev, int t, const Tensor& noise, const DiffusionSchedule& sched) {
  x_prev.check_same(noise, "q_step");
  const double a = std::sqrt(sched.alpha(t)), s = std::sqrt(sched.beta(t));
  Tensor out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + s * noise[i];
  return out;
}

struct Posterior {
  Tensor mean;
  double var = 0.0;
};

// q(x_{t-1} | x_t, x0 = x0_hat)
inline Posterior posterior_params(const Tensor& x0_hat, const Tensor& x_t, int t, const DiffusionSchedule& sched) {
  sched.check_t(t);
  x0_hat.check_same(x_t, "posterior_params");
  const double c0 = sched.posterior_mean_coef_x0(t), c1 = sched.posterior_mean_coef_xt(t);
  Posterior p{Tensor(x_t.shape()), sched.posterior_var(t)};
  for (std::size_t i = 0; i < x_t.size(); ++i) p.mean[i] = c0 * x0_hat[i] + c1 * x_t[i];
  return p;
}

struct StepResult {
  Tensor x_prev;
  Tensor x0_hat;
};

// A generator is any callable (x_t, x_lr, t) -> x0 prediction of x_t's shape.
template <typename Gen>
StepResult p_sample_step(Gen&& gen, const Tensor& x_t, const Tensor& x_lr, int t, const DiffusionSchedule& sched,
                         NoiseState& noise) {
  sched.check_t(t);
  Tensor x0_hat = gen(x_t, x_lr, t);
  if (x0_hat.shape() != x_t.shape())
    throw ModelContractError("generator returned " + to_string(x0_hat.shape()) + " for input " +
                             to_string(x_t.shape()));
  if (t == 1) return {x0_hat, x0_hat};
  auto post = posterior_params(x0_hat, x_t, t, sched);
  const Tensor z = noise.normal(x_t.shape());
  const double sd = std::sqrt(post.var);
  for (std::size_t i = 0; i < z.size(); ++i) post.mean[i] += sd * z[i];
  return {std::move(post.mean), std::move(x0_hat)};
}

// Full reverse trajectory from x_T ~ N(0, I) down to the final x0 prediction.
template <typename Gen>
WaveletPacket sample(Gen&& gen, const WaveletPacket& x_lr, const DiffusionSchedule& sched, NoiseState& noise) {
  Tensor x = noise.normal(x_lr.data.shape());
  Tensor x0_hat;
  for (int t = sched.T(); t >= 1; --t) {
    auto step = p_sample_step(gen, x, x_lr.data, t, sched, noise);
    x = std::move(step.x_prev);
    x0_hat = std::move(step.x0_hat);
  }
  return WaveletPacket{std::move(x0_hat), x_lr.source_channels, true};
}

}  // namespace wdgan
