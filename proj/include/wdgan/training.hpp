#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wdgan/autograd.hpp"
#include "wdgan/diffusion.hpp"
#include "wdgan/networks.hpp"
#include "wdgan/noise.hpp"
#include "wdgan/ops.hpp"
#include "wdgan/wavelet.hpp"

namespace wdgan {

struct TrainConfig {
  double lr_gen = 2e-4;
  double lr_disc = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  double ema_decay = 0.9999;
  int batch_size = 64;
  int iterations = 25000;
  double lambda_rec = 1.0;
  double r1_gamma = 1.0;
  int lazy_reg_interval = 10;
  // Use -log D(real) + log D(fake) as printed instead of the bounded form.
  bool literal_d_loss = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr_gen > 0 && lr_disc > 0)) throw ConfigError("train: learning rates must be positive");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1))
      throw ConfigError("train: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train: adam_eps must be positive");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("train: ema_decay must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (!(lambda_rec >= 0)) throw ConfigError("train: lambda_rec must be >= 0");
    if (!(r1_gamma >= 0)) throw ConfigError("train: r1_gamma must be >= 0");
    if (lazy_reg_interval < 1) throw ConfigError("train: lazy_reg_interval must be >= 1");
  }
};

// ---- losses -----------------------------------------------------------------

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

// softplus(-real) + softplus(fake) == -log D(real) - log(1 - D(fake))
inline double d_loss(double real_logit, double fake_logit) {
  require_finite(real_logit, "d_loss");
  require_finite(fake_logit, "d_loss");
  return softplus(-real_logit) + softplus(fake_logit);
}

// softplus(-fake) == -log D(fake)
inline double g_adv_loss(double fake_logit) {
  require_finite(fake_logit, "g_adv_loss");
  return softplus(-fake_logit);
}

inline double total_g_loss(double adv, double rec, double lambda_rec) { return adv + lambda_rec * rec; }

inline double rec_loss(const Tensor& x0_hat, const Tensor& x0) {
  x0_hat.check_same(x0, "rec_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) s += std::abs(x0_hat[i] - x0[i]);
  return s / static_cast<double>(x0.size());
}

namespace loss {

inline ag::Var d_loss(const ag::Var& real_logits, const ag::Var& fake_logits, bool literal = false) {
  auto real_term = ops::mean(ops::softplus(ops::scale(real_logits, -1.0)));
  if (literal) return ops::sub(real_term, ops::mean(ops::softplus(ops::scale(fake_logits, -1.0))));
  return ops::add(real_term, ops::mean(ops::softplus(fake_logits)));
}

inline ag::Var g_adv_loss(const ag::Var& fake_logits) { return ops::mean(ops::softplus(ops::scale(fake_logits, -1.0))); }

inline ag::Var rec_loss(const ag::Var& x0_hat, const ag::Var& x0) { return ops::mean_abs_diff(x0_hat, x0); }

inline ag::Var total_g_loss(const ag::Var& adv, const ag::Var& rec, double lambda_rec) {
  return ops::add(adv, ops::scale(rec, lambda_rec));
}

}  // namespace loss

// ---- R1 --------------------------------------------------------------------

struct R1Result {
  double penalty = 0.0;
  Tensor input_grad;  // ∇_x sum_i D(x_i), same shape as the real input
};

// (gamma/2) · mean_i ||∇_{x_i} D(x_i)||² at the real inputs.
//
// `disc` maps an input Var to per-sample logits. The parameter gradient of the
// penalty, gamma/N · sum_i (∂g_i/∂θ)ᵀ g_i, is a mixed second derivative; it is
// formed as a central difference of first-order parameter gradients along the
// input direction g: ∇_θ [D(x + εg) - D(x - εg)] / 2ε. Only done when
// `params` is given; those gradients are zeroed first and then hold the
// penalty's contribution.
template <typename DiscFn>
R1Result r1_penalty(DiscFn&& disc, const Tensor& real_inputs, double gamma, ParamStore* params = nullptr) {
  if (!ag::GradMode::enabled()) throw ConfigError("r1_penalty: gradient tracking is disabled");
  if (params) params->zero_grad();
  auto x = ag::leaf(real_inputs);
  auto logits = disc(x);
  const auto N = logits.value().size();
  R1Result r;
  if (logits.requires_grad()) ag::backward(ops::sum(logits));
  r.input_grad = x.grad();
  r.penalty = 0.5 * gamma * sum_squares(r.input_grad) / static_cast<double>(N);
  if (!params) return r;
  params->zero_grad();
  const double gmax = max_abs(r.input_grad);
  if (gamma == 0.0 || gmax == 0.0) return r;
  const double eps = 1e-4 / gmax;
  Tensor plus = real_inputs, minus = real_inputs;
  for (std::size_t i = 0; i < plus.size(); ++i) {
    plus[i] += eps * r.input_grad[i];
    minus[i] -= eps * r.input_grad[i];
  }
  auto sp = ops::sum(disc(ag::constant(std::move(plus))));
  auto sm = ops::sum(disc(ag::constant(std::move(minus))));
  ag::backward(ops::scale(ops::sub(sp, sm), gamma / (2.0 * eps * static_cast<double>(N))));
  return r;
}

// ---- optimizer / EMA ---------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t steps = 0;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& params, AdamState& st) const {
    auto& es = params.entries();
    if (st.m.empty()) {
      for (const auto& e : es) {
        st.m.emplace_back(e.var.value().shape());
        st.v.emplace_back(e.var.value().shape());
      }
    }
    if (st.m.size() != es.size()) throw ShapeError("adam: state does not match parameter tree");
    ++st.steps;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(st.steps));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(st.steps));
    for (std::size_t k = 0; k < es.size(); ++k) {
      auto& p = es[k].var.mutable_value();
      const auto& g = es[k].var.grad();
      auto& m = st.m[k];
      auto& v = st.v[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
};

// ema <- decay·ema + (1 - decay)·params
inline void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
  ema.check_compatible(params);
  for (std::size_t k = 0; k < ema.size(); ++k) {
    auto& e = ema.entries()[k].var.mutable_value();
    const auto& p = params.entries()[k].var.value();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = decay * e[i] + (1.0 - decay) * p[i];
  }
}

inline void set_requires_grad(ParamStore& params, bool on) {
  for (auto& e : params.entries()) e.var.node()->requires_grad = on;
}

// ---- training state and step ---------------------------------------------------

struct TrainState {
  Generator gen;
  Discriminator disc;
  Generator ema;
  AdamState adam_gen, adam_disc;
  std::int64_t iteration = 0;
  NoiseState noise;
  std::int64_t r1_evaluations = 0;  // instrumentation

  static TrainState create(const GeneratorConfig& gc, const DiscriminatorConfig& dc, std::uint64_t seed) {
    Generator g(gc, seed * 2 + 1);
    Discriminator d(dc, seed * 2 + 2);
    Generator e = g.clone();
    return TrainState{std::move(g), std::move(d), std::move(e), {}, {}, 0, NoiseState(seed), 0};
  }
};

struct StepStats {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double rec = 0.0;
  double r1 = 0.0;
  bool r1_applied = false;
};

// Model-facing view of one training pair.
struct PacketPair {
  const Tensor* x0;
  const Tensor* x_lr;
};

namespace detail {

inline void check_loss(double v, const char* name, std::int64_t it) {
  if (!std::isfinite(v))
    throw NumericError("iteration " + std::to_string(it) + ": non-finite " + std::string(name));
}

// Real training pair (x_{t-1}, x_t): x_{t-1} ~ q(x_{t-1} | x0), then one forward
// kernel step, so the two are drawn as a consistent chain.
inline std::pair<Tensor, Tensor> real_chain(const Tensor& x0, const std::vector<int>& t, const DiffusionSchedule& sched,
                                            NoiseState& noise) {
  const Tensor z1 = noise.normal(x0.shape());
  const Tensor z2 = noise.normal(x0.shape());
  Tensor x_prev(x0.shape()), x_t(x0.shape());
  const std::size_t per = x0.size() / t.size();
  for (std::size_t n = 0; n < t.size(); ++n) {
    const double a = std::sqrt(sched.alpha_bar(t[n] - 1)), s = std::sqrt(1.0 - sched.alpha_bar(t[n] - 1));
    const double ka = std::sqrt(sched.alpha(t[n])), kb = std::sqrt(sched.beta(t[n]));
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      x_prev[i] = a * x0[i] + s * z1[i];
      x_t[i] = ka * x_prev[i] + kb * z2[i];
    }
  }
  return {std::move(x_prev), std::move(x_t)};
}

}  // namespace detail

inline std::pair<Tensor, Tensor> sample_real_pair(const Tensor& x0, const std::vector<int>& t,
                                                  const DiffusionSchedule& sched, NoiseState& noise) {
  return detail::real_chain(x0, t, sched, noise);
}

// Fake x'_{t-1} = coef_x0·x0_hat + coef_xt·x_t + sqrt(var)·z, per-sample t.
// Differentiable in x0_hat.
inline ag::Var posterior_sample(const ag::Var& x0_hat, const Tensor& x_t, const std::vector<int>& t,
                                const DiffusionSchedule& sched, NoiseState& noise) {
  const Tensor z = noise.normal(x_t.shape());
  const std::size_t per = x_t.size() / t.size();
  std::vector<double> c0(t.size());
  Tensor offset(x_t.shape());
  for (std::size_t n = 0; n < t.size(); ++n) {
    c0[n] = sched.posterior_mean_coef_x0(t[n]);
    const double c1 = sched.posterior_mean_coef_xt(t[n]), sd = std::sqrt(sched.posterior_var(t[n]));
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) offset[i] = c1 * x_t[i] + sd * z[i];
  }
  return ops::add(ops::scale_per_sample(x0_hat, std::move(c0)), ag::constant(std::move(offset)));
}

// One adversarial iteration: D update (with lazy R1), G update, EMA, counter.
inline StepStats train_step(TrainState& st, std::span<const PacketPair> batch, const DiffusionSchedule& sched,
                            const TrainConfig& cfg) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  std::vector<Tensor> x0s, lrs;
  for (const auto& p : batch) {
    x0s.push_back(*p.x0);
    lrs.push_back(*p.x_lr);
  }
  const Tensor x0 = stack(x0s), x_lr = stack(lrs);
  const auto N = static_cast<std::size_t>(x0.dim(0));
  const std::int64_t it = st.iteration;
  StepStats stats;

  const std::vector<int> t = st.noise.uniform_ints(N, 1, sched.T());
  auto [x_prev, x_t] = detail::real_chain(x0, t, sched, st.noise);
  const auto xt_c = ag::constant(x_t);
  const auto xlr_c = ag::constant(x_lr);

  // discriminator
  set_requires_grad(st.disc.params(), true);
  auto disc_on_real = [&](const ag::Var& xp) { return st.disc.forward(xp, xt_c, t); };
  if (it % cfg.lazy_reg_interval == 0) {
    auto r1 = r1_penalty(disc_on_real, x_prev, cfg.r1_gamma, &st.disc.params());
    stats.r1 = r1.penalty;
    stats.r1_applied = true;
    ++st.r1_evaluations;
    detail::check_loss(stats.r1, "r1", it);
  } else {
    st.disc.params().zero_grad();
  }
  Tensor fake_prev;
  {
    ag::NoGradGuard ng;
    auto x0_hat = st.gen.forward(xt_c, xlr_c, t);
    fake_prev = posterior_sample(x0_hat, x_t, t, sched, st.noise).value();
  }
  auto real_logits = st.disc.forward(ag::constant(x_prev), xt_c, t);
  auto fake_logits = st.disc.forward(ag::constant(fake_prev), xt_c, t);
  auto dl = loss::d_loss(real_logits, fake_logits, cfg.literal_d_loss);
  stats.d_loss = dl.value()[0];
  detail::check_loss(stats.d_loss, "d_loss", it);
  ag::backward(dl);
  Adam(cfg.lr_disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps).step(st.disc.params(), st.adam_disc);

  // generator
  set_requires_grad(st.disc.params(), false);
  st.gen.params().zero_grad();
  auto x0_hat = st.gen.forward(xt_c, xlr_c, t);
  auto fake = posterior_sample(x0_hat, x_t, t, sched, st.noise);
  auto ga = loss::g_adv_loss(st.disc.forward(fake, xt_c, t));
  auto rec = loss::rec_loss(x0_hat, ag::constant(x0));
  auto total = loss::total_g_loss(ga, rec, cfg.lambda_rec);
  stats.g_adv = ga.value()[0];
  stats.rec = rec.value()[0];
  detail::check_loss(stats.g_adv, "g_adv", it);
  detail::check_loss(stats.rec, "rec", it);
  ag::backward(total);
  Adam(cfg.lr_gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps).step(st.gen.params(), st.adam_gen);
  set_requires_grad(st.disc.params(), true);

  ema_update(st.ema.params(), st.gen.params(), cfg.ema_decay);
  ++st.iteration;
  return stats;
}

}  // namespace wdgan
