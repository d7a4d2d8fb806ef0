// wdgan: train, sample, eval and inspect the wavelet diffusion-GAN super-resolver.
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "wdgan/cli.hpp"

int main(int argc, char** argv) {
  using namespace wdgan;
  CLI::App app{"Wavelet-domain diffusion GAN super-resolution"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override the run seed");
  app.set_version_flag("--version", "wdgan 0.1");

  cli::TrainOptions train;
  auto* t = app.add_subcommand("train", "Train from a config file");
  t->add_option("config", train.config_path, "Config file (dotted key = value lines)")->required()->check(CLI::ExistingFile);
  t->add_option("overrides", train.overrides, "key=value overrides");
  t->add_option("--log-every", train.log_every, "Print progress every N iterations");

  cli::SampleOptions smp;
  std::string kind = "auto";
  auto* s = app.add_subcommand("sample", "Super-resolve one image");
  s->add_option("checkpoint", smp.checkpoint)->required();
  s->add_option("input", smp.input, "LR image, or an HR image to degrade first")->required();
  s->add_option("-o,--out-dir", smp.out_dir);
  s->add_option("--input-kind", kind, "auto, hr or lr")->check(CLI::IsMember({"auto", "hr", "lr"}));
  s->add_flag("--use-ema,!--no-ema", smp.use_ema, "Use EMA weights (default) or live weights");

  cli::EvalOptions ev;
  std::string split = "test";
  bool eval_no_ema = false;
  auto* e = app.add_subcommand("eval", "PSNR/SSIM over a dataset split");
  e->add_option("checkpoint", ev.checkpoint)->required();
  e->add_option("manifest", ev.manifest, "Manifest written by train (default: checkpoint's data settings)");
  e->add_option("-o,--out-csv", ev.out_csv);
  e->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  e->add_flag("--no-ema", eval_no_ema, "Use live weights");

  std::string image;
  auto* r = app.add_subcommand("dwt-roundtrip", "Check Haar perfect reconstruction on an image");
  r->add_option("image", image)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : cli::kInputError;
  }

  if (*t) {
    train.seed = seed;
    return cli::cmd_train(train, std::cout, std::cerr);
  }
  if (*s) {
    smp.seed = seed;
    smp.kind = kind == "hr" ? cli::InputKind::HighRes : kind == "lr" ? cli::InputKind::LowRes : cli::InputKind::Auto;
    return cli::cmd_sample(smp, std::cout, std::cerr);
  }
  if (*e) {
    ev.seed = seed;
    ev.use_ema = !eval_no_ema;
    ev.split = split == "train" ? Split::Train : Split::Test;
    return cli::cmd_eval(ev, std::cout, std::cerr);
  }
  return cli::cmd_dwt_roundtrip(image, std::cout, std::cerr);
}
