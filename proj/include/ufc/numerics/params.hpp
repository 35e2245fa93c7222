#pragma once

#include <map>
#include <string>
#include <vector>

#include "ufc/numerics/array.hpp"

namespace ufc {

/// Name -> array lookup handed to model code. Arrays are tracked leaves when
/// bound to a tape, constants otherwise.
template <typename T>
class ParamSet {
 public:
  const Array<T>& operator[](const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  void insert(const std::string& name, Array<T> a) { arrays_.insert_or_assign(name, std::move(a)); }
  const std::map<std::string, Array<T>>& all() const { return arrays_; }

 private:
  std::map<std::string, Array<T>> arrays_;
};

/// Named, shape-tagged learnable arrays with gradient slots. Iteration order
/// is lexicographic by name, which fixes the update and serialization order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    Array<T> value;
    std::vector<T> grad;  // empty until a gradient is accumulated
  };

  void add(const std::string& name, Array<T> value) {
    if (entries_.count(name)) throw ContractError("parameter '" + name + "' registered twice");
    entries_.emplace(name, Entry{std::move(value), {}});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Array<T>& value(const std::string& name) const { return entry(name).value; }

  void set(const std::string& name, Array<T> value) {
    auto& e = entry(name);
    if (e.value.shape() != value.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + to_string(e.value.shape()) + ", got " +
                           to_string(value.shape()));
    }
    e.value = value.detached();
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  /// Lookup for one forward pass. With a tape every parameter becomes a leaf.
  ParamSet<T> bind(Tape<T>* tape = nullptr) const {
    ParamSet<T> set;
    for (const auto& [name, e] : entries_) set.insert(name, tape ? tape->variable(e.value) : e.value);
    return set;
  }

  void zero_grads() {
    for (auto& [_, e] : entries_) e.grad.clear();
  }

  /// Adds the gradients recorded for `bound` on `tape` into the slots.
  void accumulate_grads(const Tape<T>& tape, const ParamSet<T>& bound) {
    for (auto& [name, e] : entries_) {
      if (!bound.contains(name)) continue;
      const auto g = tape.grad(bound[name]);
      if (e.grad.empty()) e.grad.assign(g.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += g[i];
    }
  }

  void scale_grads(T s) {
    for (auto& [_, e] : entries_)
      for (auto& v : e.grad) v *= s;
  }

  const std::vector<T>& grad(const std::string& name) const { return entry(name).grad; }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, e] : entries_) {
      std::vector<U> data(e.value.data().begin(), e.value.data().end());
      out.add(name, Array<U>(e.value.shape(), std::move(data)));
    }
    return out;
  }

 private:
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace ufc
