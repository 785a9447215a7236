#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "faithcam/tensor.hpp"

namespace faithcam {

enum class OpKind {
  conv2d,
  relu,
  max_pool2d,
  global_avg_pool,
  affine,
  softmax_cross_entropy,
  sum,
  add,
  scale,
  select,
  dot,
};

std::string_view op_name(OpKind kind);

// Reverse-mode differentiation tape. Operations append nodes in execution
// order, which is a topological order by construction. backward() walks the
// nodes once in reverse.
//
// A tape and the tensors it produced belong to one thread at a time.
template <typename T>
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }

  // Accumulates d(root)/d(x) into the grad of every tracked tensor the root
  // depends on. Intermediate gradients are zeroed first; leaf gradients
  // accumulate across calls until the caller zeroes them.
  void backward(const Tensor<T>& root);

  // Zeroes every gradient the tape touched and permits another backward().
  void reset();

  bool backward_done() const { return backward_done_; }

  // Number of nodes whose backward function ran in the last backward().
  std::size_t last_visit_count() const { return last_visits_; }

  // Used by operation implementations.
  void record(OpKind kind, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward_fn);
  void check_input(const Tensor<T>& t, std::string_view op) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward_fn;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t last_visits_ = 0;
};

// Cross-correlation of an NCHW batch with OIKK weights plus per-channel bias.
// Output extent per spatial axis: floor((in + 2*padding - K)/stride) + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding);

// max(x, 0); the derivative at exactly 0 is 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

// Window maximum over NCHW; gradient goes to the first maximum in row-major
// order within each window.
template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window, std::size_t stride);

// NCHW -> NC spatial mean.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input);

// input (N x C_in) * weights^T (C_out x C_in) + bias.
template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias);

template <typename T>
struct LossOutput {
  Tensor<T> loss;           // shape {1}, mean negative log-likelihood
  Tensor<T> probabilities;  // N x C softmax, not differentiable
};

template <typename T>
LossOutput<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                    std::span<const std::size_t> labels);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

// Elementwise sum of two same-shaped tensors.
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

// Scalar view of element (row, col) of a matrix, e.g. one logit s_c.
template <typename T>
Tensor<T> select(Tape<T>& tape, const Tensor<T>& matrix, std::size_t row, std::size_t col);

// Inner product of two same-shaped tensors, accumulated in double.
template <typename T>
Tensor<T> dot(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Row-wise softmax with max subtraction. Not recorded.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace faithcam
