#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "wdgan/tensor.hpp"

namespace wdgan {

// Orthonormal Haar analysis filters. The first sub-band letter names the
// horizontal (width) filter, the second the vertical (height) filter.
struct HaarFilters {
  static constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
  static constexpr std::array<double, 2> low{kInvSqrt2, kInvSqrt2};
  static constexpr std::array<double, 2> high{-kInvSqrt2, kInvSqrt2};
};

enum class SubBand : int { LL = 0, LH = 1, HL = 2, HH = 3 };

// Channel-concatenated sub-bands [LL | LH | HL | HH] of a C-channel image,
// each block C×(H/2)×(W/2).
struct WaveletPacket {
  Tensor data;
  std::int64_t source_channels = 0;
  bool scaled = false;

  std::int64_t channels() const { return data.dim(0); }
  std::int64_t height() const { return data.dim(1); }
  std::int64_t width() const { return data.dim(2); }

  // Copy of one sub-band block, shape C×(H/2)×(W/2).
  Tensor band(SubBand b) const {
    const std::int64_t c = source_channels;
    const std::size_t per = static_cast<std::size_t>(c * height() * width());
    const double* src = data.data() + static_cast<std::size_t>(b) * per;
    return Tensor({c, height(), width()}, std::vector<double>(src, src + per));
  }
};

namespace detail {

// One sample: in C×H×W -> out 4C×(H/2)×(W/2), band-major channel order.
inline void haar_analysis(const double* in, double* out, std::int64_t C, std::int64_t H, std::int64_t W,
                          double gain) {
  const std::int64_t h2 = H / 2, w2 = W / 2;
  const std::int64_t band = C * h2 * w2;
  for (std::int64_t c = 0; c < C; ++c) {
    const double* img = in + c * H * W;
    for (std::int64_t i = 0; i < h2; ++i) {
      const double* r0 = img + (2 * i) * W;
      const double* r1 = r0 + W;
      double* ll = out + c * h2 * w2 + i * w2;
      for (std::int64_t j = 0; j < w2; ++j) {
        const double a = r0[2 * j], b = r0[2 * j + 1], cc = r1[2 * j], d = r1[2 * j + 1];
        ll[j] = 0.5 * gain * (a + b + cc + d);
        ll[j + band] = 0.5 * gain * (cc + d - a - b);
        ll[j + 2 * band] = 0.5 * gain * (b - a + d - cc);
        ll[j + 3 * band] = 0.5 * gain * (a - b - cc + d);
      }
    }
  }
}

// Inverse of haar_analysis (gain is the analysis gain being undone).
inline void haar_synthesis(const double* in, double* out, std::int64_t C, std::int64_t h2, std::int64_t w2,
                           double gain) {
  const std::int64_t H = 2 * h2, W = 2 * w2;
  const std::int64_t band = C * h2 * w2;
  const double k = 0.5 / gain;
  for (std::int64_t c = 0; c < C; ++c) {
    double* img = out + c * H * W;
    for (std::int64_t i = 0; i < h2; ++i) {
      double* r0 = img + (2 * i) * W;
      double* r1 = r0 + W;
      const double* ll = in + c * h2 * w2 + i * w2;
      for (std::int64_t j = 0; j < w2; ++j) {
        const double LL = ll[j], LH = ll[j + band], HL = ll[j + 2 * band], HH = ll[j + 3 * band];
        r0[2 * j] = k * (LL - LH - HL + HH);
        r0[2 * j + 1] = k * (LL - LH + HL - HH);
        r1[2 * j] = k * (LL + LH - HL - HH);
        r1[2 * j + 1] = k * (LL + LH + HL + HH);
      }
    }
  }
}

}  // namespace detail

// Single-level 2D Haar analysis. With `scale`, coefficients are halved so an
// image in [-1, 1] maps to coefficients in [-1, 1].
inline WaveletPacket dwt2d(const Tensor& image, bool scale) {
  if (image.rank() != 3) throw ShapeError("dwt2d: expected C×H×W, got " + to_string(image.shape()));
  const auto C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (C < 1) throw ShapeError("dwt2d: need at least one channel");
  if (H % 2 != 0) throw ShapeError("dwt2d: height " + std::to_string(H) + " is odd");
  if (W % 2 != 0) throw ShapeError("dwt2d: width " + std::to_string(W) + " is odd");
  WaveletPacket p{Tensor({4 * C, H / 2, W / 2}), C, scale};
  detail::haar_analysis(image.data(), p.data.data(), C, H, W, scale ? 0.5 : 1.0);
  return p;
}

inline Tensor idwt2d(const WaveletPacket& packet) {
  const Tensor& d = packet.data;
  if (d.rank() != 3) throw ShapeError("idwt2d: expected 4C×h×w, got " + to_string(d.shape()));
  if (d.dim(0) % 4 != 0)
    throw ShapeError("idwt2d: channel count " + std::to_string(d.dim(0)) + " is not divisible by 4");
  const auto C = d.dim(0) / 4;
  Tensor out({C, 2 * d.dim(1), 2 * d.dim(2)});
  detail::haar_synthesis(d.data(), out.data(), C, d.dim(1), d.dim(2), packet.scaled ? 0.5 : 1.0);
  return out;
}

// Wrap a raw 4C×h×w tensor (e.g. a network prediction) as a packet.
inline WaveletPacket as_packet(Tensor data, bool scaled = true) {
  if (data.rank() != 3 || data.dim(0) % 4 != 0)
    throw ShapeError("as_packet: expected 4C×h×w, got " + to_string(data.shape()));
  const auto c = data.dim(0) / 4;
  return WaveletPacket{std::move(data), c, scaled};
}

}  // namespace wdgan
