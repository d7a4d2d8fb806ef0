#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "wdgan/autograd.hpp"
#include "wdgan/wavelet.hpp"

// Differentiable tensor ops used by the networks and losses. Feature maps are
// N×C×H×W; vectors per sample are N×F.
namespace wdgan::ops {

using ag::Node;
using ag::Var;
using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

namespace detail {

// Sequential sums: Eigen's vectorized reductions pick their split point from
// the runtime address, which makes results depend on allocation alignment.
inline double seq_sum(const double* p, std::int64_t n, std::int64_t stride = 1) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += p[i * stride];
  return s;
}

inline void require_rank(const Var& x, std::size_t r, const char* op) {
  if (x.value().rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(x.shape()));
}

inline void im2col(const double* img, std::int64_t C, std::int64_t H, std::int64_t W, int k, double* cols) {
  const int p = k / 2;
  const std::int64_t HW = H * W;
  for (std::int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * HW;
        const double* src = img + c * HW;
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - p;
          double* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* s = src + sy * W;
          for (std::int64_t x = 0; x < W; ++x) {
            const std::int64_t sx = x + kx - p;
            dst[x] = (sx < 0 || sx >= W) ? 0.0 : s[sx];
          }
        }
      }
}

inline void col2im(const double* cols, std::int64_t C, std::int64_t H, std::int64_t W, int k, double* img) {
  const int p = k / 2;
  const std::int64_t HW = H * W;
  for (std::int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * HW;
        double* dst = img + c * HW;
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - p;
          if (sy < 0 || sy >= H) continue;
          double* d = dst + sy * W;
          const double* r = row + y * W;
          for (std::int64_t x = 0; x < W; ++x) {
            const std::int64_t sx = x + kx - p;
            if (sx >= 0 && sx < W) d[sx] += r[x];
          }
        }
      }
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  Tensor out = a.value() + b.value();
  return ag::make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = ag::grad_slot(self, i)) *g += self.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tensor out = a.value() - b.value();
  return ag::make_op(std::move(out), {a, b}, [](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) *g += self.grad;
    if (auto* g = ag::grad_slot(self, 1)) *g -= self.grad;
  });
}

inline Var scale(const Var& a, double s) {
  return ag::make_op(a.value() * s, {a}, [s](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

// x[n, ...] * s[n] with constant per-sample factors.
inline Var scale_per_sample(const Var& x, std::vector<double> s) {
  const auto N = x.value().dim(0);
  if (static_cast<std::int64_t>(s.size()) != N) throw ShapeError("scale_per_sample: factor count mismatch");
  const std::size_t per = x.value().size() / static_cast<std::size_t>(N);
  Tensor out = x.value();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] *= s[n];
  return ag::make_op(std::move(out), {x}, [s = std::move(s), per](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (std::size_t n = 0; n < s.size(); ++n)
        for (std::size_t i = 0; i < per; ++i) (*g)[n * per + i] += s[n] * self.grad[n * per + i];
  });
}

inline Var reshape(const Var& x, Shape s) {
  Tensor out = x.value().reshaped(std::move(s));
  return ag::make_op(std::move(out), {x}, [](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Var flatten(const Var& x) {
  const auto N = x.value().dim(0);
  return reshape(x, {N, static_cast<std::int64_t>(x.value().size() / static_cast<std::size_t>(N))});
}

// 2D convolution, stride 1, "same" zero padding, odd square kernel.
// x: N×Ci×H×W, w: Co×Ci×k×k, b: Co (may be undefined).
inline Var conv2d(const Var& x, const Var& w, const Var& b) {
  detail::require_rank(x, 4, "conv2d");
  const auto& X = x.value();
  const auto& Wt = w.value();
  const auto N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const auto Co = Wt.dim(0);
  const int k = static_cast<int>(Wt.dim(2));
  if (Wt.dim(1) != Ci)
    throw ShapeError("conv2d: input has " + std::to_string(Ci) + " channels, kernel expects " +
                     std::to_string(Wt.dim(1)));
  const std::int64_t K = Ci * k * k, HW = H * Wd;
  Tensor out({N, Co, H, Wd});
  CMapR Wm(Wt.data(), Co, K);
  std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(K * HW));
  for (std::int64_t n = 0; n < N; ++n) {
    const double* xin = X.data() + n * Ci * HW;
    const double* cp = xin;
    if (k != 1) {
      detail::im2col(xin, Ci, H, Wd, k, cols.data());
      cp = cols.data();
    }
    MapR Y(out.data() + n * Co * HW, Co, HW);
    Y.noalias() = Wm * CMapR(cp, K, HW);
    if (b.defined())
      for (std::int64_t o = 0; o < Co; ++o) Y.row(o).array() += b.value()[o];
  }
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return ag::make_op(std::move(out), std::move(parents), [N, Ci, H, Wd, Co, k, K, HW](Node& self) {
    const Tensor& X = self.parents[0]->value;
    const Tensor& Wt = self.parents[1]->value;
    Tensor* gx = ag::grad_slot(self, 0);
    Tensor* gw = ag::grad_slot(self, 1);
    Tensor* gb = self.parents.size() > 2 ? ag::grad_slot(self, 2) : nullptr;
    std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(K * HW));
    std::vector<double> dcols(static_cast<std::size_t>(K * HW));
    CMapR Wm(Wt.data(), Co, K);
    for (std::int64_t n = 0; n < N; ++n) {
      CMapR dY(self.grad.data() + n * Co * HW, Co, HW);
      const double* xin = X.data() + n * Ci * HW;
      if (gw) {
        const double* cp = xin;
        if (k != 1) {
          detail::im2col(xin, Ci, H, Wd, k, cols.data());
          cp = cols.data();
        }
        MapR(gw->data(), Co, K).noalias() += dY * CMapR(cp, K, HW).transpose();
      }
      if (gb)
        for (std::int64_t o = 0; o < Co; ++o) (*gb)[o] += detail::seq_sum(dY.data() + o * HW, HW);
      if (gx) {
        if (k == 1) {
          MapR(gx->data() + n * Ci * HW, Ci, HW).noalias() += Wm.transpose() * dY;
        } else {
          MapR(dcols.data(), K, HW).noalias() = Wm.transpose() * dY;
          detail::col2im(dcols.data(), Ci, H, Wd, k, gx->data() + n * Ci * HW);
        }
      }
    }
  });
}

// x: N×F, w: O×F, b: O -> N×O
inline Var linear(const Var& x, const Var& w, const Var& b) {
  detail::require_rank(x, 2, "linear");
  const auto N = x.value().dim(0), F = x.value().dim(1), O = w.value().dim(0);
  if (w.value().dim(1) != F) throw ShapeError("linear: feature size mismatch");
  Tensor out({N, O});
  MapR Y(out.data(), N, O);
  Y.noalias() = CMapR(x.value().data(), N, F) * CMapR(w.value().data(), O, F).transpose();
  if (b.defined())
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t o = 0; o < O; ++o) Y(n, o) += b.value()[o];
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return ag::make_op(std::move(out), std::move(parents), [N, F, O](Node& self) {
    CMapR dY(self.grad.data(), N, O);
    if (auto* gx = ag::grad_slot(self, 0))
      MapR(gx->data(), N, F).noalias() += dY * CMapR(self.parents[1]->value.data(), O, F);
    if (auto* gw = ag::grad_slot(self, 1))
      MapR(gw->data(), O, F).noalias() += dY.transpose() * CMapR(self.parents[0]->value.data(), N, F);
    if (self.parents.size() > 2)
      if (auto* gb = ag::grad_slot(self, 2))
        for (std::int64_t o = 0; o < O; ++o) (*gb)[o] += detail::seq_sum(dY.data() + o, N, O);
  });
}

inline Var silu(const Var& x) {
  Tensor out(x.shape());
  const auto& X = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] / (1.0 + std::exp(-X[i]));
  return ag::make_op(std::move(out), {x}, [](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) {
      const auto& X = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-X[i]));
        (*g)[i] += self.grad[i] * s * (1.0 + X[i] * (1.0 - s));
      }
    }
  });
}

inline Var softplus(const Var& x) {
  Tensor out(x.shape());
  const auto& X = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(X[i], 0.0) + std::log1p(std::exp(-std::abs(X[i])));
  return ag::make_op(std::move(out), {x}, [](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) {
      const auto& X = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / (1.0 + std::exp(-X[i]));
    }
  });
}

// Mean of all elements -> shape {1}.
inline Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return ag::make_op(Tensor({1}, {s / n}), {x}, [n](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (double& v : g->storage()) v += self.grad[0] / n;
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return ag::make_op(Tensor({1}, {s}), {x}, [](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (double& v : g->storage()) v += self.grad[0];
  });
}

// mean |a - b|; subgradient sign(a - b) with sign(0) = 0.
inline Var mean_abs_diff(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "mean_abs_diff");
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += std::abs(a.value()[i] - b.value()[i]);
  return ag::make_op(Tensor({1}, {s / n}), {a, b}, [n](Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    auto* ga = ag::grad_slot(self, 0);
    auto* gb = ag::grad_slot(self, 1);
    const double k = self.grad[0] / n;
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double d = A[i] - B[i];
      const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (ga) (*ga)[i] += k * sg;
      if (gb) (*gb)[i] -= k * sg;
    }
  });
}

// Group normalization with per-channel affine. x: N×C×H×W, gamma/beta: C.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-6) {
  detail::require_rank(x, 4, "group_norm");
  const auto& X = x.value();
  const auto N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  if (C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  const auto cpg = C / groups;
  const auto gsize = cpg * HW;
  Tensor xhat(X.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(N * groups));
  Tensor out(X.shape());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t g = 0; g < groups; ++g) {
      const std::size_t off = static_cast<std::size_t>((n * C + g * cpg) * HW);
      double m = 0.0;
      for (std::int64_t i = 0; i < gsize; ++i) m += X[off + i];
      m /= static_cast<double>(gsize);
      double v = 0.0;
      for (std::int64_t i = 0; i < gsize; ++i) v += (X[off + i] - m) * (X[off + i] - m);
      v /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(v + eps);
      inv_std[n * groups + g] = is;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const auto ch = g * cpg + c;
        const double ga = gamma.value()[ch], be = beta.value()[ch];
        for (std::int64_t i = 0; i < HW; ++i) {
          const std::size_t idx = off + c * HW + i;
          xhat[idx] = (X[idx] - m) * is;
          out[idx] = xhat[idx] * ga + be;
        }
      }
    }
  return ag::make_op(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, HW, groups, cpg, gsize](Node& self) {
                       const auto& G = self.parents[1]->value;
                       auto* gx = ag::grad_slot(self, 0);
                       auto* gg = ag::grad_slot(self, 1);
                       auto* gbeta = ag::grad_slot(self, 2);
                       for (std::int64_t n = 0; n < N; ++n)
                         for (std::int64_t g = 0; g < groups; ++g) {
                           const std::size_t off = static_cast<std::size_t>((n * C + g * cpg) * HW);
                           double s1 = 0.0, s2 = 0.0;
                           for (std::int64_t c = 0; c < cpg; ++c) {
                             const auto ch = g * cpg + c;
                             for (std::int64_t i = 0; i < HW; ++i) {
                               const std::size_t idx = off + c * HW + i;
                               const double dy = self.grad[idx];
                               if (gg) (*gg)[ch] += dy * xhat[idx];
                               if (gbeta) (*gbeta)[ch] += dy;
                               const double dxh = dy * G[ch];
                               s1 += dxh;
                               s2 += dxh * xhat[idx];
                             }
                           }
                           if (!gx) continue;
                           const double is = inv_std[n * groups + g];
                           const double m1 = s1 / static_cast<double>(gsize), m2 = s2 / static_cast<double>(gsize);
                           for (std::int64_t c = 0; c < cpg; ++c) {
                             const auto ch = g * cpg + c;
                             for (std::int64_t i = 0; i < HW; ++i) {
                               const std::size_t idx = off + c * HW + i;
                               (*gx)[idx] += is * (self.grad[idx] * G[ch] - m1 - xhat[idx] * m2);
                             }
                           }
                         }
                     });
}

// x: N×C×H×W plus per-sample channel bias b: N×C.
inline Var add_channel_bias(const Var& x, const Var& b) {
  detail::require_rank(x, 4, "add_channel_bias");
  const auto N = x.value().dim(0), C = x.value().dim(1), HW = x.value().dim(2) * x.value().dim(3);
  if (b.value().rank() != 2 || b.value().dim(0) != N || b.value().dim(1) != C)
    throw ShapeError("add_channel_bias: bias " + to_string(b.shape()) + " does not fit " + to_string(x.shape()));
  Tensor out = x.value();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < HW; ++i) out[(n * C + c) * HW + i] += b.value()[n * C + c];
  return ag::make_op(std::move(out), {x, b}, [N, C, HW](Node& self) {
    if (auto* gx = ag::grad_slot(self, 0)) *gx += self.grad;
    if (auto* gb = ag::grad_slot(self, 1))
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          double s = 0.0;
          for (std::int64_t i = 0; i < HW; ++i) s += self.grad[(n * C + c) * HW + i];
          (*gb)[n * C + c] += s;
        }
  });
}

// x: N×C×H×W times per-channel gain g: C.
inline Var mul_channels(const Var& x, const Var& g) {
  detail::require_rank(x, 4, "mul_channels");
  const auto N = x.value().dim(0), C = x.value().dim(1), HW = x.value().dim(2) * x.value().dim(3);
  if (g.value().size() != static_cast<std::size_t>(C)) throw ShapeError("mul_channels: gain size mismatch");
  Tensor out = x.value();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < HW; ++i) out[(n * C + c) * HW + i] *= g.value()[c];
  return ag::make_op(std::move(out), {x, g}, [N, C, HW](Node& self) {
    const auto& X = self.parents[0]->value;
    const auto& G = self.parents[1]->value;
    auto* gx = ag::grad_slot(self, 0);
    auto* gg = ag::grad_slot(self, 1);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < HW; ++i) {
          const auto idx = (n * C + c) * HW + i;
          if (gx) (*gx)[idx] += self.grad[idx] * G[c];
          if (gg) (*gg)[c] += self.grad[idx] * X[idx];
        }
  });
}

inline Var concat_channels(const Var& a, const Var& b) {
  detail::require_rank(a, 4, "concat_channels");
  detail::require_rank(b, 4, "concat_channels");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2) || A.dim(3) != B.dim(3))
    throw ShapeError("concat_channels: " + to_string(A.shape()) + " vs " + to_string(B.shape()));
  const auto N = A.dim(0), Ca = A.dim(1), Cb = B.dim(1), HW = A.dim(2) * A.dim(3);
  Tensor out({N, Ca + Cb, A.dim(2), A.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(A.data() + n * Ca * HW, Ca * HW, out.data() + n * (Ca + Cb) * HW);
    std::copy_n(B.data() + n * Cb * HW, Cb * HW, out.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  return ag::make_op(std::move(out), {a, b}, [N, Ca, Cb, HW](Node& self) {
    auto* ga = ag::grad_slot(self, 0);
    auto* gb = ag::grad_slot(self, 1);
    for (std::int64_t n = 0; n < N; ++n) {
      const double* g = self.grad.data() + n * (Ca + Cb) * HW;
      if (ga)
        for (std::int64_t i = 0; i < Ca * HW; ++i) (*ga)[n * Ca * HW + i] += g[i];
      if (gb)
        for (std::int64_t i = 0; i < Cb * HW; ++i) (*gb)[n * Cb * HW + i] += g[Ca * HW + i];
    }
  });
}

inline Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count) {
  detail::require_rank(x, 4, "slice_channels");
  const auto& X = x.value();
  const auto N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  if (begin < 0 || begin + count > C) throw ShapeError("slice_channels: range outside channel axis");
  Tensor out({N, count, X.dim(2), X.dim(3)});
  for (std::int64_t n = 0; n < N; ++n)
    std::copy_n(X.data() + (n * C + begin) * HW, count * HW, out.data() + n * count * HW);
  return ag::make_op(std::move(out), {x}, [N, C, HW, begin, count](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t i = 0; i < count * HW; ++i) (*g)[(n * C + begin) * HW + i] += self.grad[n * count * HW + i];
  });
}

// Orthonormal Haar analysis on feature maps: N×C×H×W -> N×4C×(H/2)×(W/2).
// The transform is orthonormal, so its adjoint is the synthesis.
inline Var haar_down(const Var& x) {
  detail::require_rank(x, 4, "haar_down");
  const auto& X = x.value();
  const auto N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 || W % 2) throw ShapeError("haar_down: spatial dims must be even, got " + to_string(X.shape()));
  Tensor out({N, 4 * C, H / 2, W / 2});
  const auto per = C * H * W;
  for (std::int64_t n = 0; n < N; ++n) wdgan::detail::haar_analysis(X.data() + n * per, out.data() + n * per, C, H, W, 1.0);
  return ag::make_op(std::move(out), {x}, [N, C, H, W, per](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) {
      std::vector<double> tmp(static_cast<std::size_t>(per));
      for (std::int64_t n = 0; n < N; ++n) {
        wdgan::detail::haar_synthesis(self.grad.data() + n * per, tmp.data(), C, H / 2, W / 2, 1.0);
        for (std::int64_t i = 0; i < per; ++i) (*g)[n * per + i] += tmp[i];
      }
    }
  });
}

// Inverse of haar_down: N×4C×h×w -> N×C×2h×2w.
inline Var haar_up(const Var& x) {
  detail::require_rank(x, 4, "haar_up");
  const auto& X = x.value();
  const auto N = X.dim(0), C4 = X.dim(1), h = X.dim(2), w = X.dim(3);
  if (C4 % 4) throw ShapeError("haar_up: channel count not divisible by 4");
  const auto C = C4 / 4;
  Tensor out({N, C, 2 * h, 2 * w});
  const auto per = C4 * h * w;
  for (std::int64_t n = 0; n < N; ++n) wdgan::detail::haar_synthesis(X.data() + n * per, out.data() + n * per, C, h, w, 1.0);
  return ag::make_op(std::move(out), {x}, [N, C, h, w, per](Node& self) {
    if (auto* g = ag::grad_slot(self, 0)) {
      std::vector<double> tmp(static_cast<std::size_t>(per));
      for (std::int64_t n = 0; n < N; ++n) {
        wdgan::detail::haar_analysis(self.grad.data() + n * per, tmp.data(), C, 2 * h, 2 * w, 1.0);
        for (std::int64_t i = 0; i < per; ++i) (*g)[n * per + i] += tmp[i];
      }
    }
  });
}

// 2×2 average pooling.
inline Var avg_pool2(const Var& x) {
  detail::require_rank(x, 4, "avg_pool2");
  const auto& X = x.value();
  const auto N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: spatial dims must be even");
  Tensor out({N, C, H / 2, W / 2});
  for (std::int64_t nc = 0; nc < N * C; ++nc)
    for (std::int64_t i = 0; i < H / 2; ++i)
      for (std::int64_t j = 0; j < W / 2; ++j) {
        const double* p = X.data() + nc * H * W + 2 * i * W + 2 * j;
        out[(nc * (H / 2) + i) * (W / 2) + j] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  return ag::make_op(std::move(out), {x}, [N, C, H, W](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t i = 0; i < H / 2; ++i)
          for (std::int64_t j = 0; j < W / 2; ++j) {
            const double d = 0.25 * self.grad[(nc * (H / 2) + i) * (W / 2) + j];
            double* p = g->data() + nc * H * W + 2 * i * W + 2 * j;
            p[0] += d;
            p[1] += d;
            p[W] += d;
            p[W + 1] += d;
          }
  });
}

// Sum over spatial positions: N×C×H×W -> N×C.
inline Var spatial_sum(const Var& x) {
  detail::require_rank(x, 4, "spatial_sum");
  const auto N = x.value().dim(0), C = x.value().dim(1), HW = x.value().dim(2) * x.value().dim(3);
  Tensor out({N, C});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::int64_t i = 0; i < HW; ++i) s += x.value()[nc * HW + i];
    out[nc] = s;
  }
  return ag::make_op(std::move(out), {x}, [N, C, HW](Node& self) {
    if (auto* g = ag::grad_slot(self, 0))
      for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t i = 0; i < HW; ++i) (*g)[nc * HW + i] += self.grad[nc];
  });
}

// Single-head dot-product attention over spatial positions.
// q, k, v: N×C×H×W; out[c, i] = sum_j softmax_j(q_i . k_j / sqrt(C)) v[c, j].
inline Var attention(const Var& q, const Var& k, const Var& v) {
  detail::require_rank(q, 4, "attention");
  const auto& Q = q.value();
  const auto N = Q.dim(0), C = Q.dim(1), L = Q.dim(2) * Q.dim(3);
  const double sc = 1.0 / std::sqrt(static_cast<double>(C));
  Tensor probs({N, L, L});
  Tensor out(Q.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    CMapR Qm(Q.data() + n * C * L, C, L), Km(k.value().data() + n * C * L, C, L), Vm(v.value().data() + n * C * L, C, L);
    MapR P(probs.data() + n * L * L, L, L);
    P.noalias() = sc * (Qm.transpose() * Km);
    for (std::int64_t i = 0; i < L; ++i) {
      const double m = P.row(i).maxCoeff();
      double* row = P.data() + i * L;
      double z = 0.0;
      for (std::int64_t j = 0; j < L; ++j) z += (row[j] = std::exp(row[j] - m));
      for (std::int64_t j = 0; j < L; ++j) row[j] /= z;
    }
    MapR(out.data() + n * C * L, C, L).noalias() = Vm * P.transpose();
  }
  return ag::make_op(std::move(out), {q, k, v}, [probs = std::move(probs), N, C, L, sc](Node& self) {
    auto* gq = ag::grad_slot(self, 0);
    auto* gk = ag::grad_slot(self, 1);
    auto* gv = ag::grad_slot(self, 2);
    MatR dP(L, L), dS(L, L);
    for (std::int64_t n = 0; n < N; ++n) {
      CMapR P(probs.data() + n * L * L, L, L);
      CMapR dO(self.grad.data() + n * C * L, C, L);
      CMapR Qm(self.parents[0]->value.data() + n * C * L, C, L);
      CMapR Km(self.parents[1]->value.data() + n * C * L, C, L);
      CMapR Vm(self.parents[2]->value.data() + n * C * L, C, L);
      if (gv) MapR(gv->data() + n * C * L, C, L).noalias() += dO * P;
      dP.noalias() = dO.transpose() * Vm;
      for (std::int64_t i = 0; i < L; ++i) {
        const double* pr = P.data() + i * L;
        const double* dpr = dP.data() + i * L;
        double dot = 0.0;
        for (std::int64_t j = 0; j < L; ++j) dot += dpr[j] * pr[j];
        for (std::int64_t j = 0; j < L; ++j) dS(i, j) = pr[j] * (dpr[j] - dot);
      }
      if (gq) MapR(gq->data() + n * C * L, C, L).noalias() += sc * (Km * dS.transpose());
      if (gk) MapR(gk->data() + n * C * L, C, L).noalias() += sc * (Qm * dS);
    }
  });
}

}  // namespace wdgan::ops
