#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "../support/synthetic.hpp"
#include "wdgan/wdgan.hpp"

using namespace wdgan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / "wdgan_cli_tests" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int count_lines(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  int n = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++n;
  return n;
}

// Small generator/discriminator so a CLI run takes seconds.
constexpr const char* kSmokeConfig =
    "gen.base_channels = 4\n"
    "gen.channel_mult = 1,2\n"
    "gen.resnet_blocks_per_level = 1\n"
    "gen.time_embed_dim = 8\n"
    "gen.attention_levels =\n"
    "disc.num_layers = 2\n"
    "disc.base_channels = 4\n"
    "disc.time_embed_dim = 8\n"
    "train.batch_size = 2\n"
    "train.iterations = 50\n"
    "data.hr_size = 32\n"
    "data.scale = 4\n"
    "checkpoint_interval = 25\n";

struct SmokeRun {
  fs::path dir;
  fs::path config;
  fs::path data;
};

SmokeRun smoke_setup(const fs::path& dir, const std::string& extra = "") {
  SmokeRun r{dir, dir / "smoke.cfg", dir / "data"};
  wdgan::testing::write_synthetic_dataset(r.data, 8, 32, 1);
  kv::write_file(r.config, std::string(kSmokeConfig) + "data.root = " + r.data.string() + "\n" + extra);
  return r;
}

int train(const SmokeRun& r, const fs::path& out, std::vector<std::string> overrides = {}, std::uint64_t seed = 7) {
  cli::TrainOptions opt;
  opt.config_path = r.config;
  opt.overrides = std::move(overrides);
  opt.overrides.push_back("out_dir=" + out.string());
  opt.seed = seed;
  opt.log_every = 0;
  std::ostringstream out_s, err_s;
  return cli::cmd_train(opt, out_s, err_s);
}

// Checkpoint for the default 128 px, ×8 geometry with a tiny generator.
fs::path write_x8_checkpoint(const fs::path& dir) {
  RunConfig cfg = RunConfig::from_text(kSmokeConfig);
  cfg.hr_size = 128;
  cfg.scale = 8;
  cfg.validate();
  const auto st = TrainState::create(cfg.gen, cfg.disc, 3);
  const auto path = dir / "x8.bin";
  save_checkpoint(path, cfg, cfg.schedule(), st);
  return path;
}

int run_binary(const std::string& args, const fs::path& root) {
  const std::string cmd = "WDGAN_OUTPUT_ROOT='" + root.string() + "' '" WDGAN_CLI_PATH "' " + args + " > '" +
                          (root / "stdout.txt").string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(CliTrain, SmokeRunWritesLogAndCheckpoints) {
  const auto r = smoke_setup(scratch_dir());
  const auto out = r.dir / "run";
  ASSERT_EQ(train(r, out), cli::kOk);
  EXPECT_TRUE(fs::exists(out / "last.bin"));
  EXPECT_TRUE(fs::exists(out / "ckpt_000025.bin"));
  EXPECT_TRUE(fs::exists(out / "ckpt_000050.bin"));
  EXPECT_TRUE(fs::exists(out / "manifest.txt"));
  EXPECT_EQ(count_lines(out / "train_log.csv"), 51);  // header + one row per iteration

  const auto ck = load_checkpoint(out / "last.bin");
  EXPECT_EQ(ck.state.iteration, 50);
  EXPECT_EQ(ck.config.train.seed, 7u);
  EXPECT_EQ(slurp(out / "last.bin"), slurp(out / "ckpt_000050.bin"));
}

TEST(CliTrain, ConfigEchoReloadsEqual) {
  const auto r = smoke_setup(scratch_dir());
  const auto out = r.dir / "run";
  ASSERT_EQ(train(r, out, {"train.iterations=1"}), cli::kOk);
  const auto echoed = RunConfig::load(out / "config.txt");
  const auto ck = load_checkpoint(out / "last.bin");
  auto expected = ck.config;
  expected.out_dir = out.string();
  EXPECT_EQ(echoed, expected);
  EXPECT_EQ(echoed.train.iterations, 1);
}

TEST(CliTrain, SameSeedGivesIdenticalCheckpoints) {
  const auto r = smoke_setup(scratch_dir());
  ASSERT_EQ(train(r, r.dir / "a", {"train.iterations=12"}), cli::kOk);
  ASSERT_EQ(train(r, r.dir / "b", {"train.iterations=12"}), cli::kOk);
  ASSERT_EQ(train(r, r.dir / "c", {"train.iterations=12"}, 8), cli::kOk);
  const auto a = slurp(r.dir / "a" / "last.bin");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(r.dir / "b" / "last.bin"));
  EXPECT_NE(a, slurp(r.dir / "c" / "last.bin"));
}

TEST(CliTrain, InvalidScheduleFailsBeforeTraining) {
  const auto r = smoke_setup(scratch_dir());
  const auto out = r.dir / "run";
  EXPECT_EQ(train(r, out, {"schedule.T=9"}), cli::kInputError);
  EXPECT_FALSE(fs::exists(out / "train_log.csv"));
}

TEST(CliTrain, UnknownKeyAndMissingDataAreInputErrors) {
  const auto r = smoke_setup(scratch_dir());
  EXPECT_EQ(train(r, r.dir / "x", {"gen.no_such_key=1"}), cli::kInputError);
  EXPECT_EQ(train(r, r.dir / "y", {"data.root=" + (r.dir / "missing").string()}), cli::kInputError);
}

TEST(CliTrain, DivergenceExitsNumericAndKeepsLastCheckpoint) {
  const auto r = smoke_setup(scratch_dir());
  const auto out = r.dir / "run";
  // Blows up a few iterations in, after some checkpoints have been written.
  EXPECT_EQ(train(r, out, {"train.lr_gen=1e40", "train.lr_disc=1e40", "checkpoint_interval=1"}), cli::kNumericError);
  ASSERT_TRUE(fs::exists(out / "last.bin"));
  const auto ck = load_checkpoint(out / "last.bin");
  EXPECT_GE(ck.state.iteration, 1);
  EXPECT_LT(ck.state.iteration, 50);
  EXPECT_TRUE(fs::exists(out / cli::checkpoint_name(ck.state.iteration)));
  for (const auto& e : ck.state.gen.params().entries())
    for (std::int64_t i = 0; i < e.var.value().size(); ++i) ASSERT_TRUE(std::isfinite(e.var.value()[i]));
}

TEST(CliSample, LowResInputIsUpscaledByCheckpointScale) {
  const auto dir = scratch_dir();
  const auto ck = write_x8_checkpoint(dir);
  const auto lr = dir / "face.png";
  write_png(lr, wdgan::testing::synthetic_image(16, 11));

  cli::SampleOptions opt;
  opt.checkpoint = ck;
  opt.input = lr;
  opt.out_dir = dir / "a";
  opt.seed = 5;
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_sample(opt, o, e), cli::kOk) << e.str();
  const auto img = read_image(dir / "a" / "face_sr.png");
  EXPECT_EQ(img.width, 128);
  EXPECT_EQ(img.height, 128);

  opt.out_dir = dir / "b";
  ASSERT_EQ(cli::cmd_sample(opt, o, e), cli::kOk);
  EXPECT_EQ(slurp(dir / "a" / "face_sr.png"), slurp(dir / "b" / "face_sr.png"));

  opt.out_dir = dir / "c";
  opt.seed = 6;
  ASSERT_EQ(cli::cmd_sample(opt, o, e), cli::kOk);
  EXPECT_NE(slurp(dir / "a" / "face_sr.png"), slurp(dir / "c" / "face_sr.png"));
}

TEST(CliSample, HighResInputIsDegradedFirst) {
  const auto dir = scratch_dir();
  const auto ck = write_x8_checkpoint(dir);
  const auto hr = dir / "hr.png";
  write_png(hr, wdgan::testing::synthetic_image(128, 4));
  cli::SampleOptions opt{ck, hr, dir, false, 1, cli::InputKind::Auto};
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_sample(opt, o, e), cli::kOk) << e.str();
  EXPECT_NE(o.str().find("treated as HR"), std::string::npos);
  EXPECT_NE(o.str().find("live weights"), std::string::npos);
  EXPECT_EQ(read_image(dir / "hr_sr.png").width, 128);
}

TEST(CliSample, IncompatibleShapeAndBadCheckpointAreInputErrors) {
  const auto dir = scratch_dir();
  const auto ck = write_x8_checkpoint(dir);
  const auto odd = dir / "odd.png";
  write_png(odd, wdgan::testing::synthetic_image(36, 2));  // an HR side must be a multiple of 2 * scale
  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_sample({ck, odd, dir, true, 1, cli::InputKind::HighRes}, o, e), cli::kInputError);
  EXPECT_NE(e.str().find("divisible"), std::string::npos);
  EXPECT_EQ(cli::cmd_sample({odd, odd, dir, true, 1, cli::InputKind::LowRes}, o, e), cli::kInputError);
}

TEST(CliEval, WritesPerImageRowsAggregateAndBaseline) {
  const auto r = smoke_setup(scratch_dir());
  const auto out = r.dir / "run";
  ASSERT_EQ(train(r, out, {"train.iterations=2"}), cli::kOk);

  cli::EvalOptions opt;
  opt.checkpoint = out / "last.bin";
  opt.manifest = out / "manifest.txt";
  opt.out_csv = r.dir / "eval" / "metrics.csv";
  opt.split = Split::Train;
  fs::create_directories(r.dir / "eval");
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_eval(opt, o, e), cli::kOk) << e.str();

  const auto m = manifest_from_text(kv::read_file(opt.manifest));
  const auto n = static_cast<int>(m.split(Split::Train).size());
  EXPECT_EQ(count_lines(opt.out_csv), 1 + n + 1);  // header, images, aggregate
  const auto csv = slurp(opt.out_csv);
  EXPECT_EQ(csv.rfind("id,psnr,ssim,bicubic_psnr,bicubic_ssim\n", 0), 0u);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  EXPECT_NE(o.str().find("bicubic baseline PSNR"), std::string::npos);
  int sr_files = 0;
  for (const auto& f : fs::directory_iterator(r.dir / "eval" / "samples"))
    sr_files += f.path().filename().string().ends_with("_sr.png");
  EXPECT_EQ(sr_files, n);
}

TEST(CliEval, EmptySplitAndChangedDatasetAreInputErrors) {
  const auto r = smoke_setup(scratch_dir(), "data.train_ratio = 1\ndata.test_ratio = 0\n");
  const auto out = r.dir / "run";
  ASSERT_EQ(train(r, out, {"train.iterations=1"}), cli::kOk);
  std::ostringstream o, e;
  cli::EvalOptions opt{out / "last.bin", {}, r.dir / "m.csv", Split::Test, true, 1};
  EXPECT_EQ(cli::cmd_eval(opt, o, e), cli::kInputError);
  EXPECT_NE(e.str().find("split is empty"), std::string::npos);

  write_png(r.data / "extra.png", wdgan::testing::synthetic_image(32, 99));
  opt.manifest = out / "manifest.txt";
  opt.split = Split::Train;
  EXPECT_EQ(cli::cmd_eval(opt, o, e), cli::kInputError);
  EXPECT_NE(e.str().find("changed"), std::string::npos);
}

TEST(CliDwt, RoundtripReportsErrorAndEnergyShares) {
  const auto img = normalize(to_unit_tensor(read_image(fs::path(WDGAN_FIXTURE_DIR) / "gradient.png")));
  const auto rep = cli::dwt_roundtrip(img);
  EXPECT_LT(rep.max_error, 1e-12);
  double total = 0.0;
  for (double s : rep.energy_share) total += s;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GT(rep.energy_share[0], 0.9);  // a smooth gradient lives in LL

  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_dwt_roundtrip(fs::path(WDGAN_FIXTURE_DIR) / "gradient.png", o, e), cli::kOk);
  EXPECT_NE(o.str().find("max_error"), std::string::npos);
  EXPECT_NE(o.str().find("energy HH"), std::string::npos);
}

TEST(CliDwt, OddSizeIsInputError) {
  const auto dir = scratch_dir();
  write_png(dir / "odd.png", wdgan::testing::synthetic_image(17, 3));
  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_dwt_roundtrip(dir / "odd.png", o, e), cli::kInputError);
}

TEST(CliBinary, ExitCodesFromTheExecutable) {
  const auto r = smoke_setup(scratch_dir());
  const auto fixture = fs::path(WDGAN_FIXTURE_DIR) / "gradient.png";
  EXPECT_EQ(run_binary("dwt-roundtrip '" + fixture.string() + "'", r.dir), 0);
  EXPECT_EQ(run_binary("dwt-roundtrip '" + (fs::path(WDGAN_FIXTURE_DIR) / "corrupt.png").string() + "'", r.dir), 2);
  EXPECT_EQ(run_binary("no-such-command", r.dir), 2);
  EXPECT_EQ(run_binary("train '" + r.config.string() + "' schedule.T=9", r.dir), 2);

  // Default output directory is <WDGAN_OUTPUT_ROOT>/<config stem>.
  EXPECT_EQ(run_binary("--seed 3 train '" + r.config.string() + "' train.iterations=2", r.dir), 0);
  EXPECT_TRUE(fs::exists(r.dir / "smoke" / "last.bin"));
  EXPECT_EQ(load_checkpoint(r.dir / "smoke" / "last.bin").config.train.seed, 3u);

  EXPECT_EQ(run_binary("--seed 3 sample '" + (r.dir / "smoke" / "last.bin").string() + "' '" +
                           (r.data / "img_00.png").string() + "'",
                       r.dir),
            0);
  EXPECT_TRUE(fs::exists(r.dir / "img_00_sr.png"));
}
