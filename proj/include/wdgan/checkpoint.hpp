#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wdgan/config.hpp"
#include "wdgan/training.hpp"

namespace wdgan {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian float64");

// Layout: 8-byte magic, uint64 header length, JSON header, raw float64 arrays.
// The header holds the config echo, the schedule, counters and an array index.
// No wall-clock values are stored, so equal states give equal bytes.
inline constexpr char kCheckpointMagic[9] = "WDGANCK1";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  DiffusionSchedule schedule;
  TrainState state;
};

namespace detail {

struct ArrayRef {
  std::string name;
  const Tensor* value;
};

inline void collect(std::vector<ArrayRef>& out, const std::string& prefix, const ParamStore& store) {
  for (const auto& e : store.entries()) out.push_back({prefix + e.name, &e.var.value()});
}

inline void collect(std::vector<ArrayRef>& out, const std::string& prefix, const ParamStore& store,
                    const std::vector<Tensor>& moments) {
  if (moments.empty()) return;
  for (std::size_t i = 0; i < moments.size(); ++i) out.push_back({prefix + store.entries()[i].name, &moments[i]});
}

inline std::vector<ArrayRef> state_arrays(const TrainState& st) {
  std::vector<ArrayRef> a;
  collect(a, "gen/", st.gen.params());
  collect(a, "disc/", st.disc.params());
  collect(a, "ema/", st.ema.params());
  collect(a, "adam_gen.m/", st.gen.params(), st.adam_gen.m);
  collect(a, "adam_gen.v/", st.gen.params(), st.adam_gen.v);
  collect(a, "adam_disc.m/", st.disc.params(), st.adam_disc.m);
  collect(a, "adam_disc.v/", st.disc.params(), st.adam_disc.v);
  return a;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const DiffusionSchedule& sched,
                            const TrainState& st) {
  using nlohmann::json;
  json config = json::object();
  // out_dir is where the run lives, not what it computes; leaving it out keeps
  // checkpoints of identical runs in different directories byte-identical.
  for (const auto& [k, v] : cfg.to_kv())
    if (k != "out_dir") config[k] = v;
  json arrays = json::array();
  const auto refs = detail::state_arrays(st);
  std::uint64_t offset = 0;
  for (const auto& r : refs) {
    arrays.push_back({{"name", r.name}, {"shape", r.value->shape()}, {"offset", offset}});
    offset += r.value->size();
  }
  const json header = {{"version", kCheckpointVersion},
                       {"config", config},
                       {"schedule", {{"T", sched.T()}, {"betas", sched.betas()}}},
                       {"iteration", st.iteration},
                       {"noise", {{"seed", st.noise.seed()}, {"counter", st.noise.counter()}}},
                       {"adam_gen_steps", st.adam_gen.steps},
                       {"adam_disc_steps", st.adam_disc.steps},
                       {"r1_evaluations", st.r1_evaluations},
                       {"arrays", arrays}};
  const std::string text = header.dump();

  // Write to a sibling temp file and rename, so a crash never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    const std::uint64_t len = text.size();
    os.write(kCheckpointMagic, 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& r : refs)
      os.write(reinterpret_cast<const char*>(r.value->data()), static_cast<std::streamsize>(r.value->size() * 8));
    if (!os) throw IoError("cannot write checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError(path.string() + " is not a checkpoint file");
  if (len > (1u << 26)) throw IoError(path.string() + ": corrupt checkpoint header");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError(path.string() + ": truncated checkpoint header");

  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (h.value("version", 0) != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported checkpoint version");

  RunConfig cfg;
  for (const auto& [k, v] : h.at("config").items()) cfg.set(k, v.get<std::string>());
  cfg.validate();
  auto sched = DiffusionSchedule::from_betas(h.at("schedule").at("betas").get<std::vector<double>>());

  Checkpoint ck{cfg, sched, TrainState::create(cfg.gen, cfg.disc, cfg.train.seed)};
  auto& st = ck.state;
  st.iteration = h.at("iteration").get<std::int64_t>();
  st.noise = NoiseState(h.at("noise").at("seed").get<std::uint64_t>(), h.at("noise").at("counter").get<std::uint64_t>());
  st.adam_gen.steps = h.at("adam_gen_steps").get<std::int64_t>();
  st.adam_disc.steps = h.at("adam_disc_steps").get<std::int64_t>();
  st.r1_evaluations = h.at("r1_evaluations").get<std::int64_t>();

  auto size_moments = [](AdamState& a, const ParamStore& p) {
    if (a.steps == 0) return;
    for (const auto& e : p.entries()) {
      a.m.emplace_back(e.shape);
      a.v.emplace_back(e.shape);
    }
  };
  size_moments(st.adam_gen, st.gen.params());
  size_moments(st.adam_disc, st.disc.params());

  const auto refs = detail::state_arrays(st);
  const auto& index = h.at("arrays");
  if (index.size() != refs.size())
    throw ShapeError(path.string() + ": checkpoint holds " + std::to_string(index.size()) + " arrays, model expects " +
                     std::to_string(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto name = index[i].at("name").get<std::string>();
    const auto shape = index[i].at("shape").get<Shape>();
    if (name != refs[i].name || shape != refs[i].value->shape())
      throw ShapeError(path.string() + ": array " + name + to_string(shape) + " does not match " + refs[i].name +
                       to_string(refs[i].value->shape()));
    auto* dst = const_cast<Tensor*>(refs[i].value);
    is.read(reinterpret_cast<char*>(dst->data()), static_cast<std::streamsize>(dst->size() * 8));
    if (!is) throw IoError(path.string() + ": truncated checkpoint payload");
  }
  return ck;
}

}  // namespace wdgan
