#pragma once

#include <functional>
#include <map>
#include <string>

#include "wav2pix/autograd.hpp"
#include "wav2pix/tensor.hpp"

namespace wav2pix {

// Named parameter arrays, ordered by name. Trainable entries receive optimizer
// updates; state entries (spectral-norm u vectors, batch-norm running moments)
// are carried alongside and checkpointed but never optimized.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable = true) {
    require(!entries_.contains(name), "parameters: duplicate name " + name);
    entries_[name] = Entry{std::move(value), trainable};
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "parameters: unknown name " + name);
    return it->second.value;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "parameters: unknown name " + name);
    return it->second.value;
  }

  bool trainable(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "parameters: unknown name " + name);
    return it->second.trainable;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

  bool all_finite() const {
    for (const auto& [name, e] : entries_)
      if (!e.value.all_finite()) return false;
    return true;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// Binds parameters into a tape as leaf nodes, with requires_grad decided per
// name (this is how the discriminator and generator sub-steps isolate their
// gradients). State tensors stay accessible for in-place advancement.
template <typename T>
class ParamBinder {
 public:
  using GradPred = std::function<bool(const std::string&)>;

  ParamBinder(ag::Tape<T>& tape, ParameterSet<T>& params, GradPred requires_grad)
      : tape_(&tape), params_(&params), requires_grad_(std::move(requires_grad)) {}

  ag::Var<T> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    bool rg = params_->trainable(name) && requires_grad_(name);
    ag::Var<T> v = tape_->leaf(params_->at(name), rg);
    bound_.emplace(name, v);
    return v;
  }

  Tensor<T>& state(const std::string& name) { return params_->at(name); }
  ParameterSet<T>& set() { return *params_; }

  // Gradients of all bound leaves that received one, keyed by name.
  std::map<std::string, Tensor<T>> grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, var] : bound_)
      if (var.requires_grad() && tape_->has_grad(var.id)) out.emplace(name, tape_->grad(var.id));
    return out;
  }

 private:
  ag::Tape<T>* tape_;
  ParameterSet<T>* params_;
  GradPred requires_grad_;
  std::map<std::string, ag::Var<T>> bound_;
};

}  // namespace wav2pix
