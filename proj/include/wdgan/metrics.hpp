#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wdgan/datapipe.hpp"
#include "wdgan/diffusion.hpp"
#include "wdgan/image_io.hpp"
#include "wdgan/tensor.hpp"

namespace wdgan {

inline constexpr double kPsnrCapDb = 100.0;

// PSNR for images in [0, 1]; identical inputs give kPsnrCapDb.
inline double psnr(const Tensor& a, const Tensor& b) {
  a.check_same(b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

// Valid-mode separable filtering of an H×W plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t H, std::int64_t W,
                                        const std::vector<double>& k) {
  const auto K = static_cast<std::int64_t>(k.size());
  const auto oh = H - K + 1, ow = W - K + 1;
  std::vector<double> tmp(static_cast<std::size_t>(H * ow)), out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < K; ++i) s += k[i] * img[y * W + x + i];
      tmp[y * ow + x] = s;
    }
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < K; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

inline std::vector<double> channel_mean(const Tensor& img) {
  const auto C = img.dim(0), HW = img.dim(1) * img.dim(2);
  std::vector<double> g(static_cast<std::size_t>(HW), 0.0);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < HW; ++i) g[i] += img[c * HW + i];
  for (double& v : g) v /= static_cast<double>(C);
  return g;
}

}  // namespace detail

// Mean SSIM over valid 11×11 Gaussian (sigma 1.5) windows of the channel-mean
// grayscale images. K1 = 0.01, K2 = 0.03, L = 1.
inline double ssim(const Tensor& a, const Tensor& b) {
  a.check_same(b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim: expected C×H×W, got " + to_string(a.shape()));
  constexpr int kWin = 11;
  const auto H = a.dim(1), W = a.dim(2);
  if (H < kWin || W < kWin)
    throw ShapeError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the 11x11 window");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const auto k = detail::gaussian_window(kWin, 1.5);
  const auto ga = detail::channel_mean(a), gb = detail::channel_mean(b);
  std::vector<double> aa(ga.size()), bb(ga.size()), ab(ga.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    aa[i] = ga[i] * ga[i];
    bb[i] = gb[i] * gb[i];
    ab[i] = ga[i] * gb[i];
  }
  const auto mu_a = detail::filter_valid(ga, H, W, k), mu_b = detail::filter_valid(gb, H, W, k);
  const auto e_aa = detail::filter_valid(aa, H, W, k), e_bb = detail::filter_valid(bb, H, W, k),
             e_ab = detail::filter_valid(ab, H, W, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + C1) * (2.0 * cov + C2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

struct MetricRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double bicubic_psnr_db = 0.0;
  double bicubic_ssim = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double bicubic_psnr_db = 0.0;
  double bicubic_ssim = 0.0;
  int n_images = 0;
  std::vector<MetricRow> rows;

  // Aggregates are arithmetic means of the per-image rows.
  static MetricReport from_rows(std::vector<MetricRow> rows) {
    if (rows.empty()) throw ConfigError("metric report needs at least one image");
    MetricReport r;
    for (const auto& row : rows) {
      r.psnr_db += row.psnr_db;
      r.ssim += row.ssim;
      r.bicubic_psnr_db += row.bicubic_psnr_db;
      r.bicubic_ssim += row.bicubic_ssim;
    }
    const double n = static_cast<double>(rows.size());
    r.psnr_db /= n;
    r.ssim /= n;
    r.bicubic_psnr_db /= n;
    r.bicubic_ssim /= n;
    r.n_images = static_cast<int>(rows.size());
    r.rows = std::move(rows);
    return r;
  }

  // id,psnr,ssim,bicubic_psnr,bicubic_ssim; one row per image then a "mean" row.
  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os.precision(10);
    os << "id,psnr,ssim,bicubic_psnr,bicubic_ssim\n";
    for (const auto& r : rows)
      os << r.id << ',' << r.psnr_db << ',' << r.ssim << ',' << r.bicubic_psnr_db << ',' << r.bicubic_ssim << '\n';
    os << "mean," << psnr_db << ',' << ssim << ',' << bicubic_psnr_db << ',' << bicubic_ssim << '\n';
  }
};

struct ExportRow {
  std::string id;
  std::filesystem::path sr, hr, bicubic;
  Tensor sr_image, hr_image, bicubic_image;  // [0, 1], unquantized
};

struct ExportManifest {
  std::filesystem::path path;
  std::vector<ExportRow> rows;
};

inline std::string safe_stem(const std::string& id) {
  std::string s = id;
  const auto dot = s.rfind('.');
  if (dot != std::string::npos) s.erase(dot);
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return s;
}

// Super-resolve each pair and write {id}_sr.png / {id}_hr.png /
// {id}_bicubic.png plus manifest.csv into out_dir.
template <typename Gen>
ExportManifest export_samples(Gen&& gen, const std::vector<SamplePair>& pairs, const DiffusionSchedule& sched,
                              std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (pairs.empty()) throw ConfigError("export_samples: empty split");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  ExportManifest m;
  m.path = out_dir / "manifest.csv";
  NoiseState noise(seed);
  for (const auto& p : pairs) {
    ExportRow row;
    row.id = safe_stem(p.id);
    const auto sr = sample(gen, p.x_lr, sched, noise);
    row.sr_image = to_unit_image(sr);
    row.hr_image = denormalize(p.hr_image);
    row.bicubic_image = to_unit_image(p.x_lr);
    row.sr = out_dir / (row.id + "_sr.png");
    row.hr = out_dir / (row.id + "_hr.png");
    row.bicubic = out_dir / (row.id + "_bicubic.png");
    write_png(row.sr, quantize(row.sr_image));
    write_png(row.hr, quantize(row.hr_image));
    write_png(row.bicubic, quantize(row.bicubic_image));
    m.rows.push_back(std::move(row));
  }
  std::ofstream os(m.path);
  if (!os) throw IoError("cannot write " + m.path.string());
  os << "id,sr,hr,bicubic\n";
  for (const auto& r : m.rows)
    os << r.id << ',' << r.sr.string() << ',' << r.hr.string() << ',' << r.bicubic.string() << '\n';
  return m;
}

inline MetricReport evaluate(const ExportManifest& m) {
  std::vector<MetricRow> rows;
  for (const auto& r : m.rows)
    rows.push_back({r.id, psnr(r.sr_image, r.hr_image), ssim(r.sr_image, r.hr_image), psnr(r.bicubic_image, r.hr_image),
                    ssim(r.bicubic_image, r.hr_image)});
  return MetricReport::from_rows(std::move(rows));
}

}  // namespace wdgan
