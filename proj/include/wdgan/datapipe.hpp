#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "wdgan/image_io.hpp"
#include "wdgan/tensor.hpp"
#include "wdgan/wavelet.hpp"

namespace wdgan {

// ---- bicubic resampling ------------------------------------------------------

// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct ResampleTaps {
  std::vector<std::vector<std::int64_t>> index;  // edge-clamped source indices
  std::vector<std::vector<double>> weight;        // normalized to sum 1
};

// Taps for one axis. When shrinking, the kernel is stretched by the scale
// factor so it also acts as the anti-aliasing filter.
inline ResampleTaps resample_taps(std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double fs = std::max(scale, 1.0);
  const double support = 2.0 * fs;
  ResampleTaps taps;
  taps.index.resize(out);
  taps.weight.resize(out);
  for (std::int64_t o = 0; o < out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale;
    const auto lo = static_cast<std::int64_t>(std::floor(center - support));
    const auto hi = static_cast<std::int64_t>(std::ceil(center + support));
    double total = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double w = cubic_kernel((static_cast<double>(i) + 0.5 - center) / fs);
      if (w == 0.0) continue;
      taps.index[o].push_back(std::clamp<std::int64_t>(i, 0, in - 1));
      taps.weight[o].push_back(w);
      total += w;
    }
    for (double& w : taps.weight[o]) w /= total;
  }
  return taps;
}

// Separable bicubic resize of a C×H×W image (horizontal pass first).
inline Tensor bicubic_resample(const Tensor& image, std::int64_t target_h, std::int64_t target_w) {
  if (image.rank() != 3) throw ShapeError("bicubic_resample: expected C×H×W, got " + to_string(image.shape()));
  if (target_h <= 0 || target_w <= 0) throw ShapeError("bicubic_resample: target dims must be positive");
  const auto C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const auto tx = resample_taps(W, target_w);
  const auto ty = resample_taps(H, target_h);
  Tensor tmp({C, H, target_w});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < target_w; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < tx.index[x].size(); ++k) s += tx.weight[x][k] * image.at(c, y, tx.index[x][k]);
        tmp.at(c, y, x) = s;
      }
  Tensor out({C, target_h, target_w});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < target_h; ++y)
      for (std::int64_t x = 0; x < target_w; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < ty.index[y].size(); ++k) s += ty.weight[y][k] * tmp.at(c, ty.index[y][k], x);
        out.at(c, y, x) = s;
      }
  return out;
}

// ---- normalization -----------------------------------------------------------

inline Tensor normalize(const Tensor& unit) {
  Tensor t(unit.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * unit[i] - 1.0;
  return t;
}

inline Tensor denormalize(const Tensor& signed_img) {
  Tensor t(signed_img.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (signed_img[i] + 1.0) / 2.0;
  return t;
}

inline Tensor clamp(Tensor t, double lo, double hi) {
  for (double& v : t.storage()) v = std::clamp(v, lo, hi);
  return t;
}

// ---- pairs -------------------------------------------------------------------

struct SamplePair {
  WaveletPacket x0;    // scaled DWT of the HR image
  WaveletPacket x_lr;  // scaled DWT of the bicubic-upscaled LR image
  Tensor hr_image;     // 3×H×W in [-1, 1]
  Tensor lr_image;     // 3×(H/s)×(W/s) in [-1, 1]
  std::string id;
};

// Conditioning packet for a normalized LR image at HR size H×W.
inline WaveletPacket condition_from_lr(const Tensor& lr_image, std::int64_t H, std::int64_t W) {
  return dwt2d(clamp(bicubic_resample(lr_image, H, W), -1.0, 1.0), true);
}

inline SamplePair make_pair(const Tensor& hr_unit, int scale_factor, std::string id = {}) {
  if (hr_unit.rank() != 3 || hr_unit.dim(0) != 3)
    throw ShapeError("make_pair: expected 3×H×W, got " + to_string(hr_unit.shape()));
  if (scale_factor < 1) throw ConfigError("make_pair: scale factor must be >= 1");
  const auto H = hr_unit.dim(1), W = hr_unit.dim(2);
  const std::int64_t div = 2 * static_cast<std::int64_t>(scale_factor);
  if (H % div || W % div)
    throw ShapeError("make_pair: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by " +
                     std::to_string(div));
  for (double v : hr_unit.values())
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("make_pair: HR image values must lie in [0, 1]");
  SamplePair p;
  p.id = std::move(id);
  p.hr_image = normalize(hr_unit);
  p.lr_image = clamp(bicubic_resample(p.hr_image, H / scale_factor, W / scale_factor), -1.0, 1.0);
  p.x0 = dwt2d(p.hr_image, true);
  p.x_lr = condition_from_lr(p.lr_image, H, W);
  return p;
}

// Packet -> [0, 1] RGB, clamped, not quantized.
inline Tensor to_unit_image(const WaveletPacket& packet) {
  if (packet.channels() != 12)
    throw ShapeError("to_image: expected 12 channels, got " + std::to_string(packet.channels()));
  return clamp(denormalize(idwt2d(packet)), 0.0, 1.0);
}

inline Rgb8 to_image(const WaveletPacket& packet) { return quantize(to_unit_image(packet)); }

// ---- dataset -------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Fisher-Yates with a fixed engine; std::shuffle's algorithm is library-defined.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[eng() % i]);
}

enum class Split { Train, Test };

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> files;  // relative to root, sorted
  std::uint64_t split_seed = 0;
  double train_ratio = 0.9;
  double test_ratio = 0.1;
  int hr_size = 128;
  int scale = 8;

  void validate() const {
    if (train_ratio < 0 || test_ratio < 0 || std::abs(train_ratio + test_ratio - 1.0) > 1e-9)
      throw ConfigError("manifest: split ratios must be non-negative and sum to 1");
    if (scale < 1 || hr_size < 1 || hr_size % (2 * scale))
      throw ConfigError("manifest: hr_size must be a positive multiple of 2*scale");
  }

  std::uint64_t file_hash() const {
    std::uint64_t h = fnv1a("");
    for (const auto& f : files) h = fnv1a(f + '\n', h);
    return h;
  }

  // Image files under root (PNG/JPEG by extension), sorted.
  void scan() {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
    files.clear();
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(fs::relative(e.path(), root).generic_string());
    }
    std::sort(files.begin(), files.end());
  }

  // Disjoint, exhaustive partition of file indices.
  std::vector<std::size_t> split(Split which) const {
    validate();
    std::vector<std::size_t> idx(files.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    seeded_shuffle(idx, split_seed);
    std::size_t n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(idx.size())));
    if (!idx.empty() && train_ratio > 0) n_train = std::clamp<std::size_t>(n_train, 1, idx.size());
    std::vector<std::size_t> out = which == Split::Train ? std::vector<std::size_t>(idx.begin(), idx.begin() + n_train)
                                                         : std::vector<std::size_t>(idx.begin() + n_train, idx.end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Decode, center-crop to a square, resize to size×size, return [0, 1] RGB.
inline Tensor load_hr_image(const std::filesystem::path& path, int size) {
  const Tensor img = to_unit_tensor(read_image(path));
  const auto H = img.dim(1), W = img.dim(2);
  const auto side = std::min(H, W);
  const auto y0 = (H - side) / 2, x0 = (W - side) / 2;
  Tensor crop({3, side, side});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < side; ++y)
      for (std::int64_t x = 0; x < side; ++x) crop.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  if (side == size) return crop;
  return clamp(bicubic_resample(crop, size, size), 0.0, 1.0);
}

struct LoadedSplit {
  std::vector<SamplePair> pairs;
  std::vector<std::string> rejects;
};

// Build pairs for one split. Undecodable files are skipped and reported.
inline LoadedSplit load_split(const DatasetManifest& m, Split which) {
  LoadedSplit out;
  for (std::size_t i : m.split(which)) {
    const auto& rel = m.files[i];
    try {
      out.pairs.push_back(make_pair(load_hr_image(m.root / rel, m.hr_size), m.scale, rel));
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << rel << ": " << e.what() << '\n';
      out.rejects.push_back(rel);
    }
  }
  return out;
}

// Infinite iterator over a pair list: each epoch visits every pair once in an
// order that depends only on (seed, epoch).
class PairIterator {
 public:
  PairIterator(const std::vector<SamplePair>& pairs, std::uint64_t seed) : pairs_(&pairs), seed_(seed) {
    if (pairs.empty()) throw ConfigError("dataset is empty");
    reshuffle();
  }

  const SamplePair& next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return (*pairs_)[order_[pos_++]];
  }

  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(pairs_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    seeded_shuffle(order_, seed_ * 1000003ull + epoch_);
    pos_ = 0;
  }

  const std::vector<SamplePair>* pairs_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace wdgan
