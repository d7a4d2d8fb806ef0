#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gradcheck.hpp"
#include "wdgan/training.hpp"

using namespace wdgan;
using wdgan::testing::random_tensor;

namespace {

GeneratorConfig tiny_gen() {
  GeneratorConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2};
  c.resnet_blocks_per_level = 1;
  c.time_embed_dim = 8;
  c.attention_levels = {};
  return c;
}

DiscriminatorConfig tiny_disc() {
  DiscriminatorConfig c;
  c.num_layers = 2;
  c.base_channels = 4;
  c.time_embed_dim = 8;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 2;
  t.iterations = 10;
  return t;
}

}  // namespace

TEST(Losses, Goldens) {
  EXPECT_NEAR(d_loss(0.0, 0.0), 2 * std::numbers::ln2, 1e-9);
  EXPECT_NEAR(g_adv_loss(0.0), std::numbers::ln2, 1e-9);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(total_g_loss(1.5, 0.25, 2.0), 2.0);
  EXPECT_DOUBLE_EQ(rec_loss(Tensor({2}, {1, -1}), Tensor({2}, {0, 0})), 1.0);
}

TEST(Losses, VarFormsAgreeWithScalars) {
  const auto r = ag::constant(Tensor({2}, {0.3, -1.2})), f = ag::constant(Tensor({2}, {2.0, -0.5}));
  EXPECT_NEAR(loss::d_loss(r, f).value()[0], (d_loss(0.3, 2.0) + d_loss(-1.2, -0.5)) / 2, 1e-14);
  EXPECT_NEAR(loss::g_adv_loss(f).value()[0], (g_adv_loss(2.0) + g_adv_loss(-0.5)) / 2, 1e-14);
  // Printed form: -log D(real) + log D(fake).
  const double lit = loss::d_loss(r, f, true).value()[0];
  EXPECT_NEAR(lit, (softplus(-0.3) + softplus(1.2)) / 2 - (softplus(-2.0) + softplus(0.5)) / 2, 1e-14);
}

TEST(Losses, StableFormEqualsLogSigmoid) {
  for (double d = -30.0; d <= 30.0; d += 0.25) {
    const double sig = 1.0 / (1.0 + std::exp(-d));
    EXPECT_NEAR(softplus(-d), -std::log(sig), 1e-6) << d;
    EXPECT_NEAR(softplus(d), -std::log(1.0 / (1.0 + std::exp(d))), 1e-6) << d;
  }
}

TEST(Losses, GradientSigns) {
  for (double r = -6.0; r <= 6.0; r += 1.5)
    for (double f = -6.0; f <= 6.0; f += 1.5) {
      auto rv = ag::leaf(Tensor({1}, r)), fv = ag::leaf(Tensor({1}, f));
      ag::backward(loss::d_loss(rv, fv));
      EXPECT_LT(rv.grad()[0], 0.0);
      EXPECT_GT(fv.grad()[0], 0.0);
      auto gv = ag::leaf(Tensor({1}, f));
      ag::backward(loss::g_adv_loss(gv));
      EXPECT_LT(gv.grad()[0], 0.0);
    }
}

TEST(Losses, NonFiniteRaises) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(d_loss(nan, 0.0), NumericError);
  EXPECT_THROW(g_adv_loss(std::numeric_limits<double>::infinity()), NumericError);
}

TEST(Losses, RecLossGradient) {
  Tensor a = random_tensor({3, 4}, 1), b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 3 ? 0.2 : -0.3);
  auto r = wdgan::testing::grad_check([](const std::vector<ag::Var>& v) { return loss::rec_loss(v[0], v[1]); }, {a, b});
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
  auto r2 = wdgan::testing::grad_check(
      [](const std::vector<ag::Var>& v) { return loss::d_loss(v[0], v[1]); }, {random_tensor({4}, 2), random_tensor({4}, 3)});
  EXPECT_LT(r2.max_rel_err, 1e-6) << r2.worst;
}

TEST(R1, LinearDiscriminatorAnalytic) {
  // D(x) = w·x + b has ∇x D = w for every sample, so the penalty is (γ/2)‖w‖²
  // and its parameter gradient is γ·w.
  ParamStore ps;
  const Tensor w0 = random_tensor({1, 24}, 5);
  auto w = ps.add("w", {1, 24}, w0);
  auto b = ps.add("b", {1}, Tensor({1}, 0.3));
  auto disc = [&](const ag::Var& x) { return ops::reshape(ops::linear(ops::flatten(x), w, b), {x.value().dim(0)}); };
  const double gamma = 2.5;
  const auto r = r1_penalty(disc, random_tensor({3, 6, 2, 2}, 6), gamma, &ps);
  EXPECT_NEAR(r.penalty, gamma / 2 * sum_squares(w0), 1e-6);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(w.grad()[i], gamma * w0[i], 1e-6);
  EXPECT_NEAR(b.grad()[0], 0.0, 1e-9);
}

TEST(R1, ParameterGradientMatchesFiniteDifferences) {
  Discriminator d(tiny_disc(), 3);
  const Tensor real = random_tensor({2, 12, 4, 4}, 1);
  const auto xt = ag::constant(random_tensor({2, 12, 4, 4}, 2));
  auto fn = [&](const ag::Var& x) { return d.forward(x, xt, {1, 2}); };
  const double gamma = 1.0;
  r1_penalty(fn, real, gamma, &d.params());
  // Snapshot first: the probes below run backward passes of their own.
  std::vector<Tensor> grads;
  for (const auto& e : d.params().entries()) grads.push_back(e.var.grad());
  double worst = 0.0;
  std::string where;
  for (std::size_t k = 0; k < d.params().size(); ++k) {
    auto& e = d.params().entries()[k];
    auto& v = e.var.mutable_value();
    const Tensor& analytic = grads[k];
    const std::size_t stride = std::max<std::size_t>(1, v.size() / 4);
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double orig = v[i], h = 1e-5;
      v[i] = orig + h;
      const double fp = r1_penalty(fn, real, gamma).penalty;
      v[i] = orig - h;
      const double fm = r1_penalty(fn, real, gamma).penalty;
      v[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double err = std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-4});
      if (err > worst) {
        worst = err;
        where = e.name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                std::to_string(num);
      }
    }
  }
  EXPECT_LT(worst, 1e-3) << where;
}

TEST(R1, RefusesWithoutGradMode) {
  ag::NoGradGuard g;
  auto fn = [](const ag::Var& x) { return ops::spatial_sum(x); };
  EXPECT_THROW(r1_penalty(fn, Tensor({1, 1, 2, 2}), 1.0), ConfigError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ParamStore ps;
  auto p = ps.add("p", {3}, Tensor({3}, {1.0, 2.0, 3.0}));
  p.mutable_grad() = Tensor({3}, {0.5, -2.0, 0.0});
  AdamState st;
  Adam(0.1, 0.5, 0.9, 1e-8).step(ps, st);
  EXPECT_NEAR(p.value()[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value()[1], 2.1, 1e-7);
  EXPECT_DOUBLE_EQ(p.value()[2], 3.0);
  EXPECT_EQ(st.steps, 1);
}

TEST(Adam, MatchesReferenceRecurrence) {
  ParamStore ps;
  auto p = ps.add("p", {1}, Tensor({1}, {0.0}));
  AdamState st;
  double m = 0, v = 0, x = 0;
  const double gs[] = {1.0, -0.5, 0.25, 2.0};
  for (int k = 0; k < 4; ++k) {
    p.mutable_grad()[0] = gs[k];
    Adam(0.01, 0.5, 0.9, 1e-8).step(ps, st);
    m = 0.5 * m + 0.5 * gs[k];
    v = 0.9 * v + 0.1 * gs[k] * gs[k];
    x -= 0.01 * (m / (1 - std::pow(0.5, k + 1))) / (std::sqrt(v / (1 - std::pow(0.9, k + 1))) + 1e-8);
    EXPECT_NEAR(p.value()[0], x, 1e-15);
  }
}

TEST(Ema, Formula) {
  ParamStore a, b;
  a.add("p", {2}, Tensor({2}, {1.0, 0.0}));
  b.add("p", {2}, Tensor({2}, {3.0, -1.0}));
  ema_update(a, b, 0.75);
  EXPECT_DOUBLE_EQ(a.at("p").value()[0], 1.5);
  EXPECT_DOUBLE_EQ(a.at("p").value()[1], -0.25);
  ParamStore c;
  c.add("q", {2}, Tensor({2}));
  EXPECT_THROW(ema_update(a, c, 0.5), ShapeError);
}

TEST(PosteriorSample, DifferentiableInPrediction) {
  const auto s = make_schedule(4);
  const Tensor xt = random_tensor({2, 4, 2, 2}, 1);
  auto x0 = ag::leaf(random_tensor({2, 4, 2, 2}, 2));
  NoiseState n(3);
  auto y = posterior_sample(x0, xt, {2, 4}, s, n);
  ag::backward(ops::sum(y));
  EXPECT_NEAR(x0.grad()[0], s.posterior_mean_coef_x0(2), 1e-15);
  EXPECT_NEAR(x0.grad()[31], s.posterior_mean_coef_x0(4), 1e-15);
}

TEST(TrainStep, UpdatesEverything) {
  const auto sched = make_schedule(2);
  auto st = TrainState::create(tiny_gen(), tiny_disc(), 1);
  const Tensor x0 = random_tensor({12, 4, 4}, 1, -0.5, 0.5), lr = random_tensor({12, 4, 4}, 2, -0.5, 0.5);
  const std::vector<PacketPair> batch{{&x0, &lr}, {&x0, &lr}};
  const Tensor g0 = st.gen.params().entries()[0].var.value();
  const Tensor d0 = st.disc.params().entries()[0].var.value();
  const Tensor e0 = st.ema.params().entries()[0].var.value();
  const auto stats = train_step(st, batch, sched, tiny_train());
  EXPECT_TRUE(std::isfinite(stats.d_loss) && std::isfinite(stats.g_adv) && std::isfinite(stats.rec));
  EXPECT_TRUE(stats.r1_applied);
  EXPECT_EQ(st.iteration, 1);
  EXPECT_FALSE(st.gen.params().entries()[0].var.value() == g0);
  EXPECT_FALSE(st.disc.params().entries()[0].var.value() == d0);
  EXPECT_FALSE(st.ema.params().entries()[0].var.value() == e0);
  for (const auto& e : st.disc.params().entries()) EXPECT_TRUE(e.var.requires_grad());
  const auto second = train_step(st, batch, sched, tiny_train());
  EXPECT_FALSE(second.r1_applied);
  EXPECT_EQ(st.r1_evaluations, 1);
}

TEST(TrainStep, LazyR1Count) {
  const auto sched = make_schedule(2);
  auto st = TrainState::create(tiny_gen(), tiny_disc(), 2);
  const Tensor x0 = random_tensor({12, 4, 4}, 3, -0.5, 0.5), lr = random_tensor({12, 4, 4}, 4, -0.5, 0.5);
  const std::vector<PacketPair> batch{{&x0, &lr}};
  auto cfg = tiny_train();
  cfg.lazy_reg_interval = 4;
  for (int i = 0; i < 12; ++i) train_step(st, batch, sched, cfg);
  EXPECT_EQ(st.r1_evaluations, 3);
}

TEST(TrainStep, Deterministic) {
  const auto sched = make_schedule(2);
  const Tensor x0 = random_tensor({12, 4, 4}, 5, -0.5, 0.5), lr = random_tensor({12, 4, 4}, 6, -0.5, 0.5);
  const std::vector<PacketPair> batch{{&x0, &lr}};
  auto a = TrainState::create(tiny_gen(), tiny_disc(), 7), b = TrainState::create(tiny_gen(), tiny_disc(), 7);
  for (int i = 0; i < 3; ++i) {
    train_step(a, batch, sched, tiny_train());
    train_step(b, batch, sched, tiny_train());
  }
  for (std::size_t k = 0; k < a.gen.params().size(); ++k)
    ASSERT_TRUE(a.gen.params().entries()[k].var.value() == b.gen.params().entries()[k].var.value());
  EXPECT_EQ(a.noise.counter(), b.noise.counter());
}

TEST(TrainStep, RealPairIsDrawnAsAChain) {
  // Residuals around the q(.|x0) means are correlated when x_t is generated
  // from x_{t-1}; independent draws give correlation near zero.
  const auto sched = make_schedule(4);
  const Tensor x0 = random_tensor({1, 1, 1, 1}, 9, -0.5, 0.5);
  const int t = 2, n = 10000;
  NoiseState noise(31);
  double sxy = 0, sxx = 0, syy = 0, ixy = 0;
  const double m_prev = std::sqrt(sched.alpha_bar(t - 1)) * x0[0], m_t = std::sqrt(sched.alpha_bar(t)) * x0[0];
  for (int k = 0; k < n; ++k) {
    const auto [xp, xt] = sample_real_pair(x0, {t}, sched, noise);
    const double a = xp[0] - m_prev, b = xt[0] - m_t;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
    const auto [ip, unused] = sample_real_pair(x0, {t}, sched, noise);
    ixy += (ip[0] - m_prev) * b;
  }
  const double corr = sxy / std::sqrt(sxx * syy), indep = ixy / std::sqrt(sxx * syy);
  const double expected = std::sqrt(sched.alpha(t) * (1 - sched.alpha_bar(t - 1)) / (1 - sched.alpha_bar(t)));
  EXPECT_GT(corr, std::abs(indep) + 3.0 / std::sqrt(double(n)));
  EXPECT_NEAR(corr, expected, 0.03);
}

TEST(TrainStep, LargeReconstructionWeightDecreasesRecLoss) {
  const auto sched = make_schedule(2);
  auto st = TrainState::create(tiny_gen(), tiny_disc(), 12);
  const Tensor x0 = random_tensor({12, 4, 4}, 13, -0.5, 0.5), lr = random_tensor({12, 4, 4}, 14, -0.5, 0.5);
  const std::vector<PacketPair> batch{{&x0, &lr}};
  auto cfg = tiny_train();
  cfg.lambda_rec = 1e3;
  cfg.batch_size = 1;
  const Tensor z = random_tensor({12, 4, 4}, 15);
  auto rec_now = [&] {
    double r = 0.0;
    for (int t = 1; t <= 2; ++t) r += rec_loss(st.gen.predict(q_sample(x0, t, z, sched), lr, t), x0);
    return r;
  };
  const double before = rec_now();
  for (int i = 0; i < 200; ++i) train_step(st, batch, sched, cfg);
  EXPECT_LT(rec_now(), before);
}

TEST(TrainStep, EmaWithZeroDecayCopiesGenerator) {
  const auto sched = make_schedule(2);
  auto st = TrainState::create(tiny_gen(), tiny_disc(), 16);
  const Tensor x0 = random_tensor({12, 4, 4}, 17, -0.5, 0.5), lr = random_tensor({12, 4, 4}, 18, -0.5, 0.5);
  const std::vector<PacketPair> batch{{&x0, &lr}};
  auto cfg = tiny_train();
  cfg.ema_decay = 0.0;
  train_step(st, batch, sched, cfg);
  ASSERT_EQ(st.ema.params().size(), st.gen.params().size());
  for (std::size_t k = 0; k < st.gen.params().size(); ++k) {
    const auto& g = st.gen.params().entries()[k];
    const auto& e = st.ema.params().entries()[k];
    EXPECT_EQ(g.name, e.name);
    EXPECT_EQ(g.shape, e.shape);
    EXPECT_TRUE(g.var.value() == e.var.value()) << g.name;
  }
}

TEST(TrainStep, NonFiniteAborts) {
  const auto sched = make_schedule(2);
  auto st = TrainState::create(tiny_gen(), tiny_disc(), 8);
  Tensor x0({12, 4, 4}, std::numeric_limits<double>::quiet_NaN());
  const Tensor lr({12, 4, 4});
  const std::vector<PacketPair> batch{{&x0, &lr}};
  try {
    train_step(st, batch, sched, tiny_train());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lazy_reg_interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.ema_decay = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_gen = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
