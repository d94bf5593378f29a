#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "refiner/tape.hpp"
#include "refiner/tensor.hpp"

namespace refiner {

/// Ordered, named collection of parameter tensors. Insertion order is the
/// canonical order for checkpoints, optimizer state, and gradient reduction.
template <typename T>
class Parameters {
 public:
  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t index(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  Tensor<T>& operator[](const std::string& name) { return values_[index(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return values_[index(name)]; }
  Tensor<T>& at(std::size_t i) { return values_[i]; }
  const Tensor<T>& at(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return values_.size(); }

  /// Total number of scalar parameters.
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  /// Records every tensor on the tape, as variables or constants; the result
  /// is indexed like the store.
  std::vector<Var> bind(Tape<T>& tape, bool trainable = true) const {
    std::vector<Var> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(trainable ? tape.variable(v) : tape.constant(v));
    return vars;
  }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace refiner
