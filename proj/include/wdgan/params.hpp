#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wdgan/autograd.hpp"
#include "wdgan/noise.hpp"

namespace wdgan {

// Ordered collection of named trainable arrays. In shape-only mode values are
// left unallocated, which is enough for counting parameters of large configs.
class ParamStore {
 public:
  explicit ParamStore(bool materialize = true) : materialize_(materialize) {}

  bool materialized() const { return materialize_; }

  ag::Var add(const std::string& name, Shape shape, const Tensor& init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    ag::Var v = materialize_ ? ag::leaf(init.reshaped(shape)) : ag::leaf(Tensor());
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(shape), v});
    return v;
  }

  struct Entry {
    std::string name;
    Shape shape;
    ag::Var var;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const ag::Var& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].var;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  // Copy values from a store with the same names and shapes.
  void copy_values_from(const ParamStore& other) {
    check_compatible(other);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      entries_[i].var.mutable_value() = other.entries_[i].var.value();
  }

  void check_compatible(const ParamStore& other) const {
    if (other.entries_.size() != entries_.size())
      throw ShapeError("parameter trees differ in size: " + std::to_string(entries_.size()) + " vs " +
                       std::to_string(other.entries_.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape)
        throw ShapeError("parameter mismatch at " + entries_[i].name + to_string(entries_[i].shape) + " vs " +
                         other.entries_[i].name + to_string(other.entries_[i].shape));
  }

 private:
  bool materialize_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

inline std::int64_t count_parameters(const ParamStore& store) {
  std::int64_t n = 0;
  for (const auto& e : store.entries()) n += static_cast<std::int64_t>(numel(e.shape));
  return n;
}

// Initializers drawing from a NoiseState. Shape-only stores skip the draw.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : noise_(seed) {}

  // Variance-scaling normal init with fan-in, times `gain`.
  Tensor fan_in_normal(const Shape& shape, std::int64_t fan_in, double gain, bool materialize) {
    if (!materialize) return Tensor();
    Tensor t = noise_.normal(shape);
    t *= gain / std::sqrt(static_cast<double>(fan_in));
    return t;
  }
  static Tensor constant(const Shape& shape, double v, bool materialize) {
    return materialize ? Tensor(shape, v) : Tensor();
  }

 private:
  NoiseState noise_;
};

}  // namespace wdgan
