#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "wav2pix/check.hpp"

namespace wav2pix {

// Dense row-major tensor with shared storage. Copies alias the same buffer;
// clone() makes a deep copy. Scalar type is float for training and double for
// the finite-difference checks.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    storage_ = std::make_shared<std::vector<T>>(checked_numel(shape_), T(0));
  }

  Tensor(std::vector<int64_t> shape, std::vector<T> values) : shape_(std::move(shape)) {
    require(static_cast<int64_t>(values.size()) == checked_numel(shape_),
            "tensor: value count does not match shape");
    storage_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.storage_) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return storage_ ? static_cast<int64_t>(storage_->size()) : 0; }

  T* data() { return storage_->data(); }
  const T* data() const { return storage_->data(); }
  T& operator[](int64_t i) { return (*storage_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*storage_)[static_cast<size_t>(i)]; }

  Tensor clone() const {
    if (!defined()) return Tensor();
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<std::vector<T>>(*storage_);
    return t;
  }

  // Shares storage; one dimension may be -1 (inferred).
  Tensor reshaped(std::vector<int64_t> shape) const {
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == -1) {
        require(infer < 0, "reshape: more than one inferred dimension");
        infer = static_cast<int>(i);
      } else {
        known *= shape[i];
      }
    }
    if (infer >= 0) {
      require(known > 0 && numel() % known == 0, "reshape: cannot infer dimension");
      shape[static_cast<size_t>(infer)] = numel() / known;
      known *= shape[static_cast<size_t>(infer)];
    }
    require(known == numel(), "reshape: element count mismatch for " + shape_str());
    Tensor t;
    t.shape_ = std::move(shape);
    t.storage_ = storage_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : *storage_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void fill(T v) {
    for (auto& x : *storage_) x = v;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(storage_->size());
    for (size_t i = 0; i < storage_->size(); ++i) out[i] = static_cast<U>((*storage_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      require(d >= 0, "tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<T>> storage_;
};

}  // namespace wav2pix
