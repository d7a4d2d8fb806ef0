#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "wdgan/autograd.hpp"
#include "wdgan/ops.hpp"
#include "wdgan/params.hpp"

namespace wdgan {

struct GeneratorConfig {
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 2, 2, 4};
  int resnet_blocks_per_level = 2;
  int in_channels = 24;
  int out_channels = 12;
  int time_embed_dim = 256;
  std::vector<int> attention_levels{4};
  // Add the conditioning packet to the head output (predict a correction
  // over the bicubic sub-bands).
  bool cond_skip = true;

  void validate() const {
    if (base_channels <= 0 || resnet_blocks_per_level <= 0 || out_channels <= 0 || time_embed_dim <= 0)
      throw ConfigError("generator: sizes must be positive");
    if (in_channels != 2 * out_channels) throw ConfigError("generator: in_channels must be 2 * out_channels");
    if (channel_mult.size() < 2) throw ConfigError("generator: channel_mult needs at least two levels");
    for (int m : channel_mult)
      if (m <= 0) throw ConfigError("generator: channel multipliers must be positive");
    for (int a : attention_levels)
      if (a < 0 || a >= static_cast<int>(channel_mult.size()))
        throw ConfigError("generator: attention level " + std::to_string(a) + " out of range");
  }
  int levels() const { return static_cast<int>(channel_mult.size()); }
};

struct DiscriminatorConfig {
  int num_layers = 6;
  int base_channels = 64;
  int in_channels = 24;
  int time_embed_dim = 256;
  int max_mult = 8;

  void validate() const {
    if (num_layers < 1) throw ConfigError("discriminator: num_layers must be >= 1");
    if (base_channels <= 0 || in_channels <= 0 || time_embed_dim <= 0 || max_mult <= 0)
      throw ConfigError("discriminator: sizes must be positive");
  }
};

namespace nn {

// Sinusoidal embedding of integer timesteps: N -> N×dim.
inline Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t n = 0; n < t.size(); ++n) {
    if (t[n] <= 0) throw IndexError("timestep " + std::to_string(t[n]) + " must be >= 1");
    for (int k = 0; k < half; ++k) {
      const double f = std::exp(-std::log(10000.0) * k / std::max(half - 1, 1));
      out[n * dim + k] = std::sin(t[n] * f);
      out[n * dim + half + k] = std::cos(t[n] * f);
    }
  }
  return out;
}

inline int norm_groups(int channels) {
  int g = std::min(32, std::max(1, channels / 4));
  while (channels % g) --g;
  return g;
}

struct Builder {
  ParamStore& store;
  Initializer& init;

  ag::Var conv(const std::string& name, int cout, int cin, int k, double gain = std::numbers::sqrt2) {
    Shape s{cout, cin, k, k};
    return store.add(name + ".w", s, init.fan_in_normal(s, static_cast<std::int64_t>(cin) * k * k, gain, store.materialized()));
  }
  ag::Var dense(const std::string& name, int out, int in, double gain = 1.0) {
    Shape s{out, in};
    return store.add(name + ".w", s, init.fan_in_normal(s, in, gain, store.materialized()));
  }
  ag::Var vec(const std::string& name, int n, double v) {
    return store.add(name, {n}, Initializer::constant({n}, v, store.materialized()));
  }
};

struct Conv {
  ag::Var w, b;
  Conv() = default;
  Conv(Builder& bld, const std::string& name, int cout, int cin, int k, double gain = std::numbers::sqrt2)
      : w(bld.conv(name, cout, cin, k, gain)), b(bld.vec(name + ".b", cout, 0.0)) {}
  ag::Var operator()(const ag::Var& x) const { return ops::conv2d(x, w, b); }
};

struct Dense {
  ag::Var w, b;
  Dense() = default;
  Dense(Builder& bld, const std::string& name, int out, int in, double gain = 1.0)
      : w(bld.dense(name, out, in, gain)), b(bld.vec(name + ".b", out, 0.0)) {}
  ag::Var operator()(const ag::Var& x) const { return ops::linear(x, w, b); }
};

struct GroupNorm {
  ag::Var gamma, beta;
  int groups = 1;
  GroupNorm() = default;
  GroupNorm(Builder& bld, const std::string& name, int c)
      : gamma(bld.vec(name + ".gamma", c, 1.0)), beta(bld.vec(name + ".beta", c, 0.0)), groups(norm_groups(c)) {}
  ag::Var operator()(const ag::Var& x) const { return ops::group_norm(x, gamma, beta, groups); }
};

// Two-layer MLP over the sinusoidal embedding.
struct TimeEmbed {
  Dense fc0, fc1;
  int sin_dim = 0;
  TimeEmbed() = default;
  TimeEmbed(Builder& bld, const std::string& name, int sin_dim_, int dim)
      : fc0(bld, name + ".fc0", dim, sin_dim_), fc1(bld, name + ".fc1", dim, dim), sin_dim(sin_dim_) {}
  ag::Var operator()(const std::vector<int>& t) const {
    auto e = ag::constant(timestep_embedding(t, sin_dim));
    return fc1(ops::silu(fc0(e)));
  }
};

// Pre-activation residual block with additive time conditioning. With a
// resampler, both the main path and the skip path are resized through it
// (the skip path carries the frequency-aware residual).
template <typename Resample>
struct BasicResBlock {
  GroupNorm n1, n2;
  Conv c1, c2, skip;
  Dense temb_proj;
  std::vector<Resample> resample;  // empty, or {main, skip}
  bool has_skip = false;
  BasicResBlock() = default;
  BasicResBlock(Builder& bld, const std::string& name, int cin, int cout, int temb, bool resampled = false)
      : n1(bld, name + ".norm1", cin),
        n2(bld, name + ".norm2", cout),
        c1(bld, name + ".conv1", cout, cin, 3),
        c2(bld, name + ".conv2", cout, cout, 3, 0.5),
        temb_proj(bld, name + ".temb", cout, temb),
        has_skip(cin != cout) {
    if (resampled) {
      resample.emplace_back(bld, name + ".resample", cin);
      resample.emplace_back(bld, name + ".resample_skip", cin);
    }
    if (has_skip) skip = Conv(bld, name + ".skip", cout, cin, 1, 1.0);
  }
  ag::Var operator()(ag::Var x, const ag::Var& temb_act) const {
    auto h = ops::silu(n1(x));
    if (!resample.empty()) {
      h = resample[0](h);
      x = resample[1](x);
    }
    h = c1(h);
    h = ops::add_channel_bias(h, temb_proj(temb_act));
    h = c2(ops::silu(n2(h)));
    return ops::add(has_skip ? skip(x) : x, h);
  }
};

struct AttnBlock {
  GroupNorm norm;
  Conv q, k, v, proj;
  AttnBlock() = default;
  AttnBlock(Builder& bld, const std::string& name, int c)
      : norm(bld, name + ".norm", c),
        q(bld, name + ".q", c, c, 1, 1.0),
        k(bld, name + ".k", c, c, 1, 1.0),
        v(bld, name + ".v", c, c, 1, 1.0),
        proj(bld, name + ".proj", c, c, 1, 0.5) {}
  ag::Var operator()(const ag::Var& x) const {
    auto h = norm(x);
    return ops::add(x, proj(ops::attention(q(h), k(h), v(h))));
  }
};

// Downsampling through the Haar analysis: the four sub-bands are mixed back to
// `cout` channels by a 1×1 conv, and the residual carries the LL band plus a
// learned per-channel gain on the summed high bands.
struct FreqDown {
  Conv mix;
  ag::Var high_gain;
  int c = 0;
  FreqDown(Builder& bld, const std::string& name, int c_)
      : mix(bld, name + ".mix", c_, 4 * c_, 1, 1.0), high_gain(bld.vec(name + ".high_gain", c_, 0.1)), c(c_) {}
  ag::Var operator()(const ag::Var& x) const {
    auto bands = ops::haar_down(x);
    auto ll = ops::slice_channels(bands, 0, c);
    auto high = ops::add(ops::add(ops::slice_channels(bands, c, c), ops::slice_channels(bands, 2 * c, c)),
                         ops::slice_channels(bands, 3 * c, c));
    auto residual = ops::add(ops::scale(ll, 0.5), ops::mul_channels(high, high_gain));
    return ops::add(mix(bands), residual);
  }
};

// Upsampling: learned projection to four sub-band groups, then Haar synthesis.
struct FreqUp {
  Conv proj;
  FreqUp() = default;
  FreqUp(Builder& bld, const std::string& name, int c) : proj(bld, name + ".proj", 4 * c, c, 1, 1.0) {}
  ag::Var operator()(const ag::Var& x) const { return ops::haar_up(proj(x)); }
};

struct NoResample {
  NoResample(Builder&, const std::string&, int) {}
  ag::Var operator()(const ag::Var& x) const { return x; }
};

using ResBlock = BasicResBlock<NoResample>;
using DownResBlock = BasicResBlock<FreqDown>;
using UpResBlock = BasicResBlock<FreqUp>;

}  // namespace nn

// Frequency-aware U-Net f(x_t, x_lr, t) -> x0 prediction in packet space.
// Every down-path block output is kept as a skip; each up-path level has one
// extra block so that all skips are consumed. Resizing goes through Haar
// analysis/synthesis inside residual blocks.
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg, std::uint64_t seed = 0, bool materialize = true)
      : cfg_(std::move(cfg)), params_(materialize) {
    cfg_.validate();
    Initializer init(seed);
    nn::Builder b{params_, init};
    const int temb = cfg_.time_embed_dim;
    const int L = cfg_.levels();
    time_ = nn::TimeEmbed(b, "gen.time", cfg_.base_channels, temb);
    conv_in_ = nn::Conv(b, "gen.conv_in", cfg_.base_channels, cfg_.in_channels, 3, 1.0);
    int ch = cfg_.base_channels;
    std::vector<int> skip_ch{ch};
    down_.resize(L);
    for (int l = 0; l < L; ++l) {
      const int cl = channels(l);
      const std::string p = "gen.down." + std::to_string(l);
      for (int i = 0; i < cfg_.resnet_blocks_per_level; ++i) {
        down_[l].blocks.emplace_back(b, p + ".res." + std::to_string(i), ch, cl, temb);
        if (has_attention(l)) down_[l].attn.emplace_back(b, p + ".attn." + std::to_string(i), cl);
        ch = cl;
        skip_ch.push_back(ch);
      }
      if (l < L - 1) {
        down_[l].down.emplace_back(b, p + ".down", ch, ch, temb, true);
        skip_ch.push_back(ch);
      }
    }
    mid0_ = nn::ResBlock(b, "gen.mid.res0", ch, ch, temb);
    mid_attn_ = nn::AttnBlock(b, "gen.mid.attn", ch);
    mid1_ = nn::ResBlock(b, "gen.mid.res1", ch, ch, temb);
    up_.resize(L);
    for (int l = L - 1; l >= 0; --l) {
      const int cl = channels(l);
      const std::string p = "gen.up." + std::to_string(l);
      for (int i = 0; i <= cfg_.resnet_blocks_per_level; ++i) {
        up_[l].blocks.emplace_back(b, p + ".res." + std::to_string(i), ch + skip_ch.back(), cl, temb);
        skip_ch.pop_back();
        if (has_attention(l)) up_[l].attn.emplace_back(b, p + ".attn." + std::to_string(i), cl);
        ch = cl;
      }
      if (l > 0) up_[l].up.emplace_back(b, p + ".up", ch, ch, temb, true);
    }
    norm_out_ = nn::GroupNorm(b, "gen.norm_out", ch);
    conv_out_ = nn::Conv(b, "gen.conv_out", cfg_.out_channels, ch, 3, 0.1);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x_t, x_lr: N×out×h×w; one timestep per sample.
  ag::Var forward(const ag::Var& x_t, const ag::Var& x_lr, const std::vector<int>& t) const {
    const auto& s = x_t.value().shape();
    if (s.size() != 4 || s[1] != cfg_.out_channels)
      throw ShapeError("generator: x_t must be N×" + std::to_string(cfg_.out_channels) + "×h×w, got " + to_string(s));
    if (x_lr.shape() != s) throw ShapeError("generator: x_lr shape " + to_string(x_lr.shape()) + " != x_t shape");
    if (static_cast<std::int64_t>(t.size()) != s[0]) throw ShapeError("generator: one timestep per sample required");
    const std::int64_t div = std::int64_t{1} << (cfg_.levels() - 1);
    if (s[2] % div || s[3] % div)
      throw ShapeError("generator: spatial dims " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                       " not divisible by " + std::to_string(div));
    auto temb = ops::silu(time_(t));
    auto h = conv_in_(ops::concat_channels(x_t, x_lr));
    const int L = cfg_.levels();
    std::vector<ag::Var> skips{h};
    for (int l = 0; l < L; ++l) {
      const auto& lvl = down_[l];
      for (std::size_t i = 0; i < lvl.blocks.size(); ++i) {
        h = lvl.blocks[i](h, temb);
        if (!lvl.attn.empty()) h = lvl.attn[i](h);
        skips.push_back(h);
      }
      for (const auto& d : lvl.down) {
        h = d(h, temb);
        skips.push_back(h);
      }
    }
    h = mid0_(h, temb);
    h = mid_attn_(h);
    h = mid1_(h, temb);
    for (int l = L - 1; l >= 0; --l) {
      const auto& lvl = up_[l];
      for (std::size_t i = 0; i < lvl.blocks.size(); ++i) {
        h = lvl.blocks[i](ops::concat_channels(h, skips.back()), temb);
        skips.pop_back();
        if (!lvl.attn.empty()) h = lvl.attn[i](h);
      }
      for (const auto& u : lvl.up) h = u(h, temb);
    }
    auto out = conv_out_(ops::silu(norm_out_(h)));
    return cfg_.cond_skip ? ops::add(out, x_lr) : out;
  }

  // Single packet 4C×h×w, no graph recording.
  Tensor predict(const Tensor& x_t, const Tensor& x_lr, int t) const {
    ag::NoGradGuard guard;
    Shape s{1};
    s.insert(s.end(), x_t.shape().begin(), x_t.shape().end());
    auto out = forward(ag::constant(x_t.reshaped(s)), ag::constant(x_lr.reshaped(s)), {t});
    return out.value().reshaped(x_t.shape());
  }

  Generator clone() const {
    Generator g(cfg_, 0, params_.materialized());
    g.params_.copy_values_from(params_);
    return g;
  }

 private:
  int channels(int level) const { return cfg_.base_channels * cfg_.channel_mult[level]; }
  bool has_attention(int level) const {
    return std::find(cfg_.attention_levels.begin(), cfg_.attention_levels.end(), level) != cfg_.attention_levels.end();
  }

  struct DownLevel {
    std::vector<nn::ResBlock> blocks;
    std::vector<nn::AttnBlock> attn;
    std::vector<nn::DownResBlock> down;
  };
  struct UpLevel {
    std::vector<nn::ResBlock> blocks;
    std::vector<nn::AttnBlock> attn;
    std::vector<nn::UpResBlock> up;
  };

  GeneratorConfig cfg_;
  ParamStore params_;
  nn::TimeEmbed time_;
  nn::Conv conv_in_;
  std::vector<DownLevel> down_;
  nn::ResBlock mid0_, mid1_;
  nn::AttnBlock mid_attn_;
  std::vector<UpLevel> up_;
  nn::GroupNorm norm_out_;
  nn::Conv conv_out_;
};

// Time-conditioned discriminator D(x_{t-1}, x_t, t) -> one logit per sample.
// Layer 0 is a plain conv with the time embedding added to its output; the
// remaining layers are residual blocks (two 3×3 convs, 1×1 skip) that halve
// the resolution while it is still even.
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig cfg, std::uint64_t seed = 0, bool materialize = true)
      : cfg_(cfg), params_(materialize) {
    cfg_.validate();
    Initializer init(seed);
    nn::Builder b{params_, init};
    time_ = nn::TimeEmbed(b, "disc.time", cfg_.base_channels, cfg_.time_embed_dim);
    stem_ = nn::Conv(b, "disc.layer.0", width(0), cfg_.in_channels, 3);
    temb_proj_ = nn::Dense(b, "disc.temb", width(0), cfg_.time_embed_dim);
    int cin = width(0);
    for (int l = 1; l < cfg_.num_layers; ++l) {
      const int c = width(l);
      const std::string p = "disc.layer." + std::to_string(l);
      blocks_.push_back({nn::Conv(b, p + ".conv1", c, cin, 3), nn::Conv(b, p + ".conv2", c, c, 3, 1.0),
                         nn::Conv(b, p + ".skip", c, cin, 1, 1.0)});
      cin = c;
    }
    head_ = nn::Dense(b, "disc.head", 1, cin);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x_prev, x_t: N×C×h×w with 2C == in_channels -> logits of shape N.
  ag::Var forward(const ag::Var& x_prev, const ag::Var& x_t, const std::vector<int>& t) const {
    if (x_prev.shape() != x_t.shape())
      throw ShapeError("discriminator: x_prev " + to_string(x_prev.shape()) + " vs x_t " + to_string(x_t.shape()));
    if (x_prev.value().rank() != 4 || 2 * x_prev.value().dim(1) != cfg_.in_channels)
      throw ShapeError("discriminator: expected N×" + std::to_string(cfg_.in_channels / 2) + "×h×w, got " +
                       to_string(x_prev.shape()));
    if (static_cast<std::int64_t>(t.size()) != x_t.value().dim(0))
      throw ShapeError("discriminator: one timestep per sample required");
    auto temb = ops::silu(time_(t));
    auto h = ops::silu(stem_(ops::concat_channels(x_prev, x_t)));
    h = ops::add_channel_bias(h, temb_proj_(temb));
    for (const auto& blk : blocks_) {
      auto r = blk.conv2(ops::silu(blk.conv1(h)));
      h = ops::add(blk.skip(h), r);
      const auto H = h.value().dim(2), W = h.value().dim(3);
      if (H % 2 == 0 && W % 2 == 0) h = ops::avg_pool2(h);
      h = ops::silu(h);
    }
    auto logits = head_(ops::spatial_sum(h));
    return ops::reshape(logits, {logits.value().dim(0)});
  }

 private:
  // base·2, base·4, ... capped at base·max_mult
  int width(int layer) const { return cfg_.base_channels * std::min(1 << std::min(layer + 1, 20), cfg_.max_mult); }

  struct Block {
    nn::Conv conv1, conv2, skip;
  };

  DiscriminatorConfig cfg_;
  ParamStore params_;
  nn::TimeEmbed time_;
  nn::Conv stem_;
  nn::Dense temb_proj_;
  std::vector<Block> blocks_;
  nn::Dense head_;
};

inline std::int64_t count_parameters(const Generator& g) { return count_parameters(g.params()); }
inline std::int64_t count_parameters(const Discriminator& d) { return count_parameters(d.params()); }

}  // namespace wdgan
