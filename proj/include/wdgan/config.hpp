#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wdgan/datapipe.hpp"
#include "wdgan/diffusion.hpp"
#include "wdgan/networks.hpp"
#include "wdgan/training.hpp"

namespace wdgan {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace kv {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// "key = value" lines; '#' starts a comment line.
inline std::map<std::string, std::string> parse(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

inline std::string format(const KeyValues& items) {
  std::string s;
  for (const auto& [k, v] : items) s += k + " = " + v + "\n";
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os || !(os << text)) throw IoError("cannot write " + p.string());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }
inline std::string fmt(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline void parse_into(const std::string& key, const std::string& s, double& v) {
  std::size_t pos = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw ConfigError(key + ": expected a number, got '" + s + "'");
}
inline void parse_into(const std::string& key, const std::string& s, int& v) {
  std::size_t pos = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
}
inline void parse_into(const std::string& key, const std::string& s, std::uint64_t& v) {
  std::size_t pos = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || s[0] == '-') throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
}
inline void parse_into(const std::string& key, const std::string& s, bool& v) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else throw ConfigError(key + ": expected true/false, got '" + s + "'");
}
inline void parse_into(const std::string&, const std::string& s, std::string& v) { v = s; }
inline void parse_into(const std::string& key, const std::string& s, std::vector<int>& v) {
  v.clear();
  if (trim(s).empty()) return;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    int x = 0;
    parse_into(key, trim(item), x);
    v.push_back(x);
  }
}

}  // namespace kv

// Everything needed to reproduce a run, as flat dotted keys.
struct RunConfig {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  TrainConfig train;
  int T = 2;
  double beta_min = 0.1;
  double beta_max = 20.0;
  std::string data_root;
  std::uint64_t data_seed = 0;
  double train_ratio = 0.9;
  double test_ratio = 0.1;
  int hr_size = 128;
  int scale = 8;
  std::string out_dir;
  int checkpoint_interval = 1000;

  template <typename F>
  void visit(F&& f) {
    f("seed", train.seed);
    f("out_dir", out_dir);
    f("checkpoint_interval", checkpoint_interval);
    f("schedule.T", T);
    f("schedule.beta_min", beta_min);
    f("schedule.beta_max", beta_max);
    f("gen.base_channels", gen.base_channels);
    f("gen.channel_mult", gen.channel_mult);
    f("gen.resnet_blocks_per_level", gen.resnet_blocks_per_level);
    f("gen.in_channels", gen.in_channels);
    f("gen.out_channels", gen.out_channels);
    f("gen.time_embed_dim", gen.time_embed_dim);
    f("gen.attention_levels", gen.attention_levels);
    f("gen.cond_skip", gen.cond_skip);
    f("disc.num_layers", disc.num_layers);
    f("disc.base_channels", disc.base_channels);
    f("disc.in_channels", disc.in_channels);
    f("disc.time_embed_dim", disc.time_embed_dim);
    f("disc.max_mult", disc.max_mult);
    f("train.lr_gen", train.lr_gen);
    f("train.lr_disc", train.lr_disc);
    f("train.adam_beta1", train.adam_beta1);
    f("train.adam_beta2", train.adam_beta2);
    f("train.adam_eps", train.adam_eps);
    f("train.ema_decay", train.ema_decay);
    f("train.batch_size", train.batch_size);
    f("train.iterations", train.iterations);
    f("train.lambda_rec", train.lambda_rec);
    f("train.r1_gamma", train.r1_gamma);
    f("train.lazy_reg_interval", train.lazy_reg_interval);
    f("train.literal_d_loss", train.literal_d_loss);
    f("data.root", data_root);
    f("data.seed", data_seed);
    f("data.train_ratio", train_ratio);
    f("data.test_ratio", test_ratio);
    f("data.hr_size", hr_size);
    f("data.scale", scale);
  }

  KeyValues to_kv() const {
    KeyValues out;
    const_cast<RunConfig*>(this)->visit([&](const char* k, auto& v) { out.emplace_back(k, kv::fmt(v)); });
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    bool found = false;
    visit([&](const char* k, auto& v) {
      if (key == k) {
        kv::parse_into(key, value, v);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }

  // Apply "key=value" overrides.
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
      set(kv::trim(o.substr(0, eq)), kv::trim(o.substr(eq + 1)));
    }
  }

  static RunConfig from_text(const std::string& text) {
    RunConfig c;
    for (const auto& [k, v] : kv::parse(text)) c.set(k, v);
    return c;
  }
  std::string to_text() const { return kv::format(to_kv()); }
  static RunConfig load(const std::filesystem::path& p) { return from_text(kv::read_file(p)); }

  void validate() const {
    gen.validate();
    disc.validate();
    train.validate();
    if (disc.in_channels != gen.in_channels) throw ConfigError("disc.in_channels must equal gen.in_channels");
    (void)make_schedule(T, beta_min, beta_max);
    manifest_template().validate();
    const int packet = hr_size / 2;
    if (packet % (1 << (gen.levels() - 1)))
      throw ConfigError("data.hr_size/2 must be divisible by 2^(levels-1) of the generator");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  }

  DiffusionSchedule schedule() const { return make_schedule(T, beta_min, beta_max); }

  DatasetManifest manifest_template() const {
    DatasetManifest m;
    m.root = data_root;
    m.split_seed = data_seed;
    m.train_ratio = train_ratio;
    m.test_ratio = test_ratio;
    m.hr_size = hr_size;
    m.scale = scale;
    return m;
  }

  bool operator==(const RunConfig& o) const { return to_kv() == o.to_kv(); }
};

// Manifest text: root, seed, ratios, sizes, and the hash of the resolved file
// list. Loading rescans the root and refuses a changed file list.
inline std::string manifest_to_text(const DatasetManifest& m) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.file_hash()));
  return kv::format({{"root", m.root.string()},
                     {"seed", kv::fmt(m.split_seed)},
                     {"train_ratio", kv::fmt(m.train_ratio)},
                     {"test_ratio", kv::fmt(m.test_ratio)},
                     {"hr_size", kv::fmt(m.hr_size)},
                     {"scale", kv::fmt(m.scale)},
                     {"files.count", std::to_string(m.files.size())},
                     {"files.hash", hash}});
}

inline DatasetManifest manifest_from_text(const std::string& text) {
  const auto kvs = kv::parse(text);
  auto get = [&](const char* k) {
    auto it = kvs.find(k);
    if (it == kvs.end()) throw ConfigError(std::string("manifest: missing key ") + k);
    return it->second;
  };
  DatasetManifest m;
  m.root = get("root");
  kv::parse_into("seed", get("seed"), m.split_seed);
  kv::parse_into("train_ratio", get("train_ratio"), m.train_ratio);
  kv::parse_into("test_ratio", get("test_ratio"), m.test_ratio);
  kv::parse_into("hr_size", get("hr_size"), m.hr_size);
  kv::parse_into("scale", get("scale"), m.scale);
  m.validate();
  m.scan();
  if (auto it = kvs.find("files.hash"); it != kvs.end()) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.file_hash()));
    if (it->second != hash) throw ConfigError("manifest: file list under " + m.root.string() + " has changed");
  }
  return m;
}

}  // namespace wdgan
