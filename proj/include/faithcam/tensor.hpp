#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faithcam/error.hpp"

namespace faithcam {

// Engine-wide default precision. Gradient-check suites instantiate the same
// templates with double.
using Real = float;

// Extents of a dense row-major array: 1 to 4 positive dimensions
// (vector, matrix, CHW image, NCHW batch).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 4) {
      throw ShapeError("tensor rank must be 1-4, got " + std::to_string(dims_.size()));
    }
    for (std::size_t d : dims_) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + str());
    }
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::size_t numel() const {
    if (dims_.empty()) return 0;
    std::size_t n = 1;
    for (std::size_t d : dims_) n *= d;
    return n;
  }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) out += 'x';
      out += std::to_string(dims_[i]);
    }
    return out.empty() ? "()" : out;
  }

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

// Shared handle to a dense array that may take part in a differentiation
// tape. Copies alias the same storage, so a parameter held by a model and
// recorded on a tape is the same object the optimizer updates.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
    s_->data.assign(shape.numel(), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                       " values, got " + std::to_string(values.size()));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return storage().shape; }
  std::size_t numel() const { return storage().data.size(); }
  std::size_t dim(std::size_t axis) const { return storage().shape[axis]; }

  std::span<T> data() { return storage().data; }
  std::span<const T> data() const { return storage().data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape().str());
    return storage().data[0];
  }

  bool has_grad() const { return !storage().grad.empty(); }
  std::span<const T> grad() const { return storage().grad; }
  std::span<T> mutable_grad() {
    auto& s = storage();
    if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
    return s.grad;
  }
  void zero_grad() {
    auto& s = storage();
    s.grad.assign(s.data.size(), T(0));
  }
  void clear_grad() { storage().grad.clear(); }

  bool requires_grad() const { return storage().requires_grad; }
  void set_requires_grad(bool on) { storage().requires_grad = on; }

  // Set when the tensor is the output of an operation recorded on a tape.
  std::optional<std::uint64_t> tape_id() const { return storage().tape_id; }
  void attach_to_tape(std::uint64_t id) { storage().tape_id = id; }

  // A tensor receives gradient during backward when it is a tape output or
  // a leaf that opted in.
  bool tracks_grad() const { return storage().requires_grad || storage().tape_id.has_value(); }

  // Deep copy of shape and values; no gradient, not attached to any tape.
  Tensor clone() const { return Tensor(shape(), storage().data); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::optional<std::uint64_t> tape_id;
  };

  Storage& storage() {
    if (!s_) throw ValueError("use of an undefined tensor");
    return *s_;
  }
  const Storage& storage() const {
    if (!s_) throw ValueError("use of an undefined tensor");
    return *s_;
  }

  std::shared_ptr<Storage> s_;
};

}  // namespace faithcam
