#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wdgan/checkpoint.hpp"
#include "wdgan/config.hpp"
#include "wdgan/datapipe.hpp"
#include "wdgan/diffusion.hpp"
#include "wdgan/metrics.hpp"
#include "wdgan/training.hpp"
#include "wdgan/wavelet.hpp"

namespace wdgan::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericError = 3 };

inline constexpr const char* kOutputRootEnv = "WDGAN_OUTPUT_ROOT";

inline std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

// Maps library exceptions onto exit codes and prints the diagnostic.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int log_every = 10;
};

inline RunConfig resolve_config(const TrainOptions& opt) {
  RunConfig cfg = RunConfig::load(opt.config_path);
  cfg.apply_overrides(opt.overrides);
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (cfg.out_dir.empty()) cfg.out_dir = (output_root() / opt.config_path.stem()).string();
  cfg.validate();
  return cfg;
}

inline std::filesystem::path checkpoint_name(std::int64_t iteration) {
  std::ostringstream os;
  os << "ckpt_" << std::setw(6) << std::setfill('0') << iteration << ".bin";
  return os.str();
}

// Writes into out_dir: config.txt (resolved echo), manifest.txt, train_log.csv,
// rejects.log, ckpt_NNNNNN.bin every checkpoint_interval and last.bin.
inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opt);
    const auto sched = cfg.schedule();
    const std::filesystem::path dir = cfg.out_dir;

    DatasetManifest manifest = cfg.manifest_template();
    if (cfg.data_root.empty()) throw ConfigError("data.root is not set");
    manifest.scan();
    if (manifest.files.empty()) throw IoError("no images found under " + manifest.root.string());
    auto data = load_split(manifest, Split::Train);
    if (data.pairs.empty()) throw IoError("training split of " + manifest.root.string() + " is empty");

    ensure_dir(dir);
    kv::write_file(dir / "config.txt", cfg.to_text());
    kv::write_file(dir / "manifest.txt", manifest_to_text(manifest));
    {
      std::string rej;
      for (const auto& r : data.rejects) rej += r + '\n';
      kv::write_file(dir / "rejects.log", rej);
    }

    auto st = TrainState::create(cfg.gen, cfg.disc, cfg.train.seed);
    PairIterator batches(data.pairs, cfg.train.seed);
    std::ofstream log(dir / "train_log.csv");
    if (!log) throw IoError("cannot write " + (dir / "train_log.csv").string());
    log << "iteration,d_loss,g_adv,rec,r1,wall_clock\n";
    log.precision(10);
    out << "training " << data.pairs.size() << " pairs for " << cfg.train.iterations << " iterations -> " << dir.string()
        << '\n';

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<PacketPair> batch(static_cast<std::size_t>(cfg.train.batch_size));
    while (st.iteration < cfg.train.iterations) {
      for (auto& b : batch) {
        const auto& p = batches.next();
        b = {&p.x0.data, &p.x_lr.data};
      }
      StepStats s;
      try {
        s = train_step(st, batch, sched, cfg.train);
      } catch (const NumericError&) {
        log.flush();
        err << "training aborted; last good checkpoint kept in " << dir.string() << '\n';
        throw;
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << st.iteration << ',' << s.d_loss << ',' << s.g_adv << ',' << s.rec << ',' << s.r1 << ',' << wall << '\n';
      if (opt.log_every > 0 && st.iteration % opt.log_every == 0)
        out << "iter " << st.iteration << " d=" << s.d_loss << " g=" << s.g_adv << " rec=" << s.rec << '\n';
      if (st.iteration % cfg.checkpoint_interval == 0 || st.iteration == cfg.train.iterations) {
        save_checkpoint(dir / checkpoint_name(st.iteration), cfg, sched, st);
        save_checkpoint(dir / "last.bin", cfg, sched, st);
      }
    }
    if (cfg.train.iterations == 0) save_checkpoint(dir / "last.bin", cfg, sched, st);
    out << "done: " << (dir / "last.bin").string() << '\n';
    return kOk;
  });
}

// ---- sample ------------------------------------------------------------------

enum class InputKind { Auto, HighRes, LowRes };

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path out_dir;  // empty: output root
  bool use_ema = true;
  std::optional<std::uint64_t> seed;
  InputKind kind = InputKind::Auto;
};

// Conditioning packet for an input image. An image at the configured HR size
// is treated as ground truth and degraded first; anything else is a real LR
// input upscaled by the checkpoint's scale factor.
inline WaveletPacket condition_for_input(const Tensor& unit, const RunConfig& cfg, InputKind kind,
                                         std::ostream& out) {
  const auto H = unit.dim(1), W = unit.dim(2);
  const std::int64_t need = std::int64_t{2} << (cfg.gen.levels() - 1);
  if (kind == InputKind::Auto) kind = (H == cfg.hr_size && W == cfg.hr_size) ? InputKind::HighRes : InputKind::LowRes;
  std::int64_t th = H, tw = W;
  if (kind == InputKind::LowRes) {
    th = H * cfg.scale;
    tw = W * cfg.scale;
  }
  if (th % need || tw % need)
    throw ShapeError("output size " + std::to_string(th) + "x" + std::to_string(tw) + " must be divisible by " +
                     std::to_string(need) + " for this generator");
  if (kind == InputKind::HighRes) {
    if (H % (2 * cfg.scale) || W % (2 * cfg.scale))
      throw ShapeError("HR input " + std::to_string(H) + "x" + std::to_string(W) + " must be divisible by " +
                       std::to_string(2 * cfg.scale));
    out << "input treated as HR; synthesizing its " << H / cfg.scale << "x" << W / cfg.scale << " LR condition\n";
    return make_pair(unit, cfg.scale).x_lr;
  }
  out << "input treated as LR; upscaling x" << cfg.scale << " to " << th << "x" << tw << '\n';
  return condition_from_lr(normalize(unit), th, tw);
}

inline int cmd_sample(const SampleOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto ck = load_checkpoint(opt.checkpoint);
    const Tensor unit = to_unit_tensor(read_image(opt.input));
    const auto cond = condition_for_input(unit, ck.config, opt.kind, out);
    const Generator& gen = opt.use_ema ? ck.state.ema : ck.state.gen;
    NoiseState noise(opt.seed.value_or(ck.config.train.seed));
    const auto sr = sample([&](const Tensor& x, const Tensor& c, int t) { return gen.predict(x, c, t); }, cond,
                           ck.schedule, noise);
    const auto dir = opt.out_dir.empty() ? output_root() : opt.out_dir;
    ensure_dir(dir);
    const auto path = dir / (opt.input.stem().string() + "_sr.png");
    write_png(path, to_image(sr));
    out << "wrote " << path.string() << " (" << (opt.use_ema ? "ema" : "live") << " weights)\n";
    return kOk;
  });
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;  // empty: rebuild from the checkpoint's data settings
  std::filesystem::path out_csv;
  Split split = Split::Test;
  bool use_ema = true;
  std::optional<std::uint64_t> seed;
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto ck = load_checkpoint(opt.checkpoint);
    DatasetManifest m;
    if (opt.manifest.empty()) {
      m = ck.config.manifest_template();
      m.scan();
    } else {
      m = manifest_from_text(kv::read_file(opt.manifest));
    }
    if (m.hr_size != ck.config.hr_size || m.scale != ck.config.scale)
      throw ConfigError("manifest image geometry does not match the checkpoint");
    const auto data = load_split(m, opt.split);
    if (data.pairs.empty())
      throw ConfigError(std::string(opt.split == Split::Test ? "test" : "train") + " split is empty");

    const Generator& gen = opt.use_ema ? ck.state.ema : ck.state.gen;
    const auto csv = opt.out_csv.empty() ? output_root() / "metrics.csv" : opt.out_csv;
    const auto parent = csv.has_parent_path() ? csv.parent_path() : std::filesystem::path(".");
    const auto exported =
        export_samples([&](const Tensor& x, const Tensor& c, int t) { return gen.predict(x, c, t); }, data.pairs,
                       ck.schedule, opt.seed.value_or(ck.config.train.seed), parent / "samples");
    const auto report = evaluate(exported);
    report.write_csv(csv);
    out << std::fixed << std::setprecision(4);
    out << "images: " << report.n_images << '\n';
    out << "mean PSNR " << report.psnr_db << " dB, SSIM " << report.ssim << '\n';
    out << "bicubic baseline PSNR " << report.bicubic_psnr_db << " dB, SSIM " << report.bicubic_ssim << '\n';
    out << "wrote " << csv.string() << '\n';
    return kOk;
  });
}

// ---- dwt-roundtrip -------------------------------------------------------------

struct RoundtripReport {
  double max_error = 0.0;
  double energy_share[4] = {};  // LL, LH, HL, HH
};

inline RoundtripReport dwt_roundtrip(const Tensor& image) {
  const auto packet = dwt2d(image, false);
  const Tensor back = idwt2d(packet);
  RoundtripReport r;
  r.max_error = max_abs_diff(back, image);
  double total = 0.0;
  for (int b = 0; b < 4; ++b) {
    r.energy_share[b] = sum_squares(packet.band(static_cast<SubBand>(b)));
    total += r.energy_share[b];
  }
  for (double& e : r.energy_share) e = total > 0 ? e / total : 0.0;
  return r;
}

// Round-trips the image (mapped to [-1, 1]); exit 0 iff the error is < 1e-5.
inline int cmd_dwt_roundtrip(const std::filesystem::path& image_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Tensor img = normalize(to_unit_tensor(read_image(image_path)));
    const auto r = dwt_roundtrip(img);
    out << std::setprecision(6);
    out << "max_error " << std::scientific << r.max_error << std::defaultfloat << '\n';
    const char* names[4] = {"LL", "LH", "HL", "HH"};
    for (int b = 0; b < 4; ++b) out << "energy " << names[b] << ' ' << std::fixed << r.energy_share[b] << '\n';
    if (!(r.max_error < 1e-5)) {
      err << "error: reconstruction error " << r.max_error << " exceeds 1e-5\n";
      return int{kNumericError};
    }
    return int{kOk};
  });
}

}  // namespace wdgan::cli
