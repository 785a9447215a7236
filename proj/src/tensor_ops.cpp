#include "faithcam/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace faithcam {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::affine: return "affine";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::sum: return "sum";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::select: return "select";
    case OpKind::dot: return "dot";
  }
  return "unknown";
}

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

void require_rank(const Shape& s, std::size_t rank, std::string_view op, std::string_view what) {
  if (s.rank() != rank) {
    throw ShapeError(fmt::format("{}: {} must have rank {}, got shape {}", op, what, rank, s.str()));
  }
}

// Unfolds one CHW image into a (C*K*K) x (OH*OW) matrix.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
            std::size_t out_w, T* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        T* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Same unfolding, transposed: (OH*OW) x (C*K*K).
template <typename T>
void im2col_transposed(const T* img, std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t kernel, std::size_t stride, std::size_t padding,
                       std::size_t out_h, std::size_t out_w, T* col_t) {
  const std::size_t patch = channels * kernel * kernel;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      T* dst = col_t + (oy * out_w + ox) * patch;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(height) && ix >= 0 &&
                                ix < static_cast<std::ptrdiff_t>(width);
            *dst++ = inside ? img[(c * height + static_cast<std::size_t>(iy)) * width +
                                  static_cast<std::size_t>(ix)]
                            : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a (C*K*K) x (OH*OW) column gradient back onto a CHW image gradient.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
                std::size_t out_w, T* img) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const T* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = img + (c * height + static_cast<std::size_t>(iy)) * width;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// C (m x n) += A (m x k) * B (k x n), all row-major and contiguous. Columns
// are processed in cache-sized chunks and rows of A four at a time so every
// loaded row of B feeds four accumulators.
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t kChunk = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kChunk) {
    const std::size_t jn = std::min(kChunk, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + i * n + j0;
      T* __restrict c1 = c0 + n;
      T* __restrict c2 = c1 + n;
      T* __restrict c3 = c2 + n;
      const T* a0 = a + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        const T w0 = a0[l], w1 = a0[k + l], w2 = a0[2 * k + l], w3 = a0[3 * k + l];
        const T* __restrict bl = b + l * n + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const T v = bl[j];
          c0[j] += w0 * v;
          c1[j] += w1 * v;
          c2[j] += w2 * v;
          c3[j] += w3 * v;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict ci = c + i * n + j0;
      const T* ai = a + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        const T w = ai[l];
        const T* __restrict bl = b + l * n + j0;
        for (std::size_t j = 0; j < jn; ++j) ci[j] += w * bl[j];
      }
    }
  }
}

}  // namespace

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)) {}

template <typename T>
void Tape<T>::check_input(const Tensor<T>& t, std::string_view op) const {
  if (!t.defined()) throw ValueError(fmt::format("{}: undefined input tensor", op));
  if (t.tape_id() && *t.tape_id() != id_) {
    throw TapeError(fmt::format("{}: input was produced on tape {}, not tape {}", op, *t.tape_id(), id_));
  }
}

template <typename T>
void Tape<T>::record(OpKind kind, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward_fn) {
  output.attach_to_tape(id_);
  nodes_.push_back(Node{kind, std::move(inputs), std::move(output), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (backward_done_) throw TapeError("backward() called twice without reset()");
  if (!root.defined() || root.numel() != 1) {
    throw TapeError("backward() root must be a scalar, got shape " +
                    (root.defined() ? root.shape().str() : std::string("undefined")));
  }
  if (!root.tape_id() || *root.tape_id() != id_) {
    throw TapeError("backward() root was not produced on this tape");
  }
  std::size_t root_node = nodes_.size();
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].output.same_storage(root)) {
      root_node = i;
      break;
    }
  }
  if (root_node == nodes_.size()) throw TapeError("backward() root not found on tape");

  for (std::size_t i = 0; i <= root_node; ++i) {
    nodes_[i].output.zero_grad();
    for (auto& in : nodes_[i].inputs) {
      if (in.tracks_grad() && !in.tape_id()) in.mutable_grad();
    }
  }
  Tensor<T> r = root;
  r.mutable_grad()[0] = T(1);

  last_visits_ = 0;
  for (std::size_t i = root_node + 1; i-- > 0;) {
    nodes_[i].backward_fn();
    ++last_visits_;
  }
  backward_done_ = true;
}

template <typename T>
void Tape<T>::reset() {
  for (auto& node : nodes_) {
    if (node.output.has_grad()) node.output.zero_grad();
    for (auto& in : node.inputs) {
      if (in.has_grad()) in.zero_grad();
    }
  }
  backward_done_ = false;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding) {
  constexpr std::string_view op = "conv2d";
  tape.check_input(input, op);
  tape.check_input(weights, op);
  tape.check_input(bias, op);
  require_rank(input.shape(), 4, op, "input");
  require_rank(weights.shape(), 4, op, "weights");
  require_rank(bias.shape(), 1, op, "bias");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");

  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2),
                    width = input.dim(3);
  const std::size_t out_ch = weights.dim(0), kernel = weights.dim(2);
  if (weights.dim(1) != channels) {
    throw ShapeError(fmt::format("conv2d: input has {} channels but weights {} expect {}", channels,
                                 weights.shape().str(), weights.dim(1)));
  }
  if (weights.dim(3) != kernel) {
    throw ShapeError(fmt::format("conv2d: kernel must be square, got {}", weights.shape().str()));
  }
  if (bias.dim(0) != out_ch) {
    throw ShapeError(fmt::format("conv2d: bias length {} does not match {} output channels",
                                 bias.dim(0), out_ch));
  }
  if (height + 2 * padding < kernel || width + 2 * padding < kernel) {
    throw ShapeError(fmt::format("conv2d: kernel {} does not fit padded input {}x{} (padding {})",
                                 kernel, height, width, padding));
  }
  const std::size_t out_h = (height + 2 * padding - kernel) / stride + 1;
  const std::size_t out_w = (width + 2 * padding - kernel) / stride + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t patch = channels * kernel * kernel;

  Tensor<T> output(Shape{batch, out_ch, out_h, out_w});
  {
    std::vector<T> col(patch * plane);
    const T* w = weights.data().data();
    const T* b = bias.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(input.data().data() + n * channels * height * width, channels, height, width, kernel,
             stride, padding, out_h, out_w, col.data());
      T* out = output.data().data() + n * out_ch * plane;
      for (std::size_t o = 0; o < out_ch; ++o) std::fill(out + o * plane, out + (o + 1) * plane, b[o]);
      gemm_accumulate(out_ch, plane, patch, w, col.data(), out);
    }
  }

  auto backward_fn = [input = Tensor<T>(input), weights = Tensor<T>(weights),
                      bias = Tensor<T>(bias), output, batch, channels, height, width, out_ch,
                      kernel, stride, padding, out_h, out_w, plane, patch]() mutable {
    const T* dout_all = output.grad().data();
    const bool want_input = input.tracks_grad();
    const bool want_weights = weights.tracks_grad();
    const bool want_bias = bias.tracks_grad();
    const T* w = weights.data().data();
    std::vector<T> col_t(want_weights ? plane * patch : 0);
    std::vector<T> dcol(want_input ? patch * plane : 0);
    std::vector<T> w_t(want_input ? patch * out_ch : 0);
    for (std::size_t o = 0; o < out_ch && want_input; ++o) {
      for (std::size_t k = 0; k < patch; ++k) w_t[k * out_ch + o] = w[o * patch + k];
    }
    for (std::size_t n = 0; n < batch; ++n) {
      const T* dout = dout_all + n * out_ch * plane;
      if (want_bias) {
        T* db = bias.mutable_grad().data();
        for (std::size_t o = 0; o < out_ch; ++o) {
          T acc = T(0);
          for (std::size_t p = 0; p < plane; ++p) acc += dout[o * plane + p];
          db[o] += acc;
        }
      }
      if (want_weights) {
        im2col_transposed(input.data().data() + n * channels * height * width, channels, height,
                          width, kernel, stride, padding, out_h, out_w, col_t.data());
        gemm_accumulate(out_ch, patch, plane, dout, col_t.data(), weights.mutable_grad().data());
      }
      if (want_input) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        gemm_accumulate(patch, plane, out_ch, w_t.data(), dout, dcol.data());
        col2im_add(dcol.data(), channels, height, width, kernel, stride, padding, out_h, out_w,
                   input.mutable_grad().data() + n * channels * height * width);
      }
    }
  };
  tape.record(OpKind::conv2d, {input, weights, bias}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  tape.check_input(input, "relu");
  Tensor<T> output(input.shape());
  auto x = input.data();
  auto y = output.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);

  auto backward_fn = [input = Tensor<T>(input), output]() mutable {
    if (!input.tracks_grad()) return;
    auto x = input.data();
    auto gy = output.grad();
    auto gx = input.mutable_grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) gx[i] += gy[i];
    }
  };
  tape.record(OpKind::relu, {input}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window, std::size_t stride) {
  constexpr std::string_view op = "max_pool2d";
  tape.check_input(input, op);
  require_rank(input.shape(), 4, op, "input");
  if (window == 0 || stride == 0) throw ShapeError("max_pool2d: window and stride must be positive");
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2),
                    width = input.dim(3);
  if (window > height || window > width) {
    throw ShapeError(fmt::format("max_pool2d: window {} larger than input {}x{}", window, height, width));
  }
  const std::size_t out_h = (height - window) / stride + 1;
  const std::size_t out_w = (width - window) / stride + 1;

  Tensor<T> output(Shape{batch, channels, out_h, out_w});
  std::vector<std::size_t> argmax(output.numel());
  const T* x = input.data().data();
  T* y = output.data().data();
  std::size_t out_index = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * height * width;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox, ++out_index) {
        std::size_t best = base + (oy * stride) * width + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * width + ox * stride + kx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        argmax[out_index] = best;
        y[out_index] = x[best];
      }
    }
  }

  auto backward_fn = [input = Tensor<T>(input), output, argmax = std::move(argmax)]() mutable {
    if (!input.tracks_grad()) return;
    auto gy = output.grad();
    auto gx = input.mutable_grad();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
  };
  tape.record(OpKind::max_pool2d, {input}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  tape.check_input(input, "global_avg_pool");
  require_rank(input.shape(), 4, "global_avg_pool", "input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t area = input.dim(2) * input.dim(3);
  Tensor<T> output(Shape{batch, channels});
  const T* x = input.data().data();
  T* y = output.data().data();
  for (std::size_t i = 0; i < batch * channels; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += static_cast<double>(x[i * area + p]);
    y[i] = static_cast<T>(acc / static_cast<double>(area));
  }

  auto backward_fn = [input = Tensor<T>(input), output, area]() mutable {
    if (!input.tracks_grad()) return;
    auto gy = output.grad();
    auto gx = input.mutable_grad();
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const T share = gy[i] / static_cast<T>(area);
      for (std::size_t p = 0; p < area; ++p) gx[i * area + p] += share;
    }
  };
  tape.record(OpKind::global_avg_pool, {input}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias) {
  constexpr std::string_view op = "affine";
  tape.check_input(input, op);
  tape.check_input(weights, op);
  tape.check_input(bias, op);
  require_rank(input.shape(), 2, op, "input");
  require_rank(weights.shape(), 2, op, "weights");
  require_rank(bias.shape(), 1, op, "bias");
  const std::size_t batch = input.dim(0), in_features = input.dim(1), out_features = weights.dim(0);
  if (weights.dim(1) != in_features) {
    throw ShapeError(fmt::format("affine: input {} has {} features but weights {} expect {}",
                                 input.shape().str(), in_features, weights.shape().str(),
                                 weights.dim(1)));
  }
  if (bias.dim(0) != out_features) {
    throw ShapeError(fmt::format("affine: bias length {} does not match {} outputs", bias.dim(0),
                                 out_features));
  }
  Tensor<T> output(Shape{batch, out_features});
  const T* x = input.data().data();
  const T* w = weights.data().data();
  const T* b = bias.data().data();
  T* y = output.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_features; ++o) {
      double acc = static_cast<double>(b[o]);
      for (std::size_t i = 0; i < in_features; ++i) {
        acc += static_cast<double>(x[n * in_features + i]) * static_cast<double>(w[o * in_features + i]);
      }
      y[n * out_features + o] = static_cast<T>(acc);
    }
  }

  auto backward_fn = [input = Tensor<T>(input), weights = Tensor<T>(weights),
                      bias = Tensor<T>(bias), output, batch, in_features, out_features]() mutable {
    const T* gy = output.grad().data();
    if (input.tracks_grad()) {
      T* gx = input.mutable_grad().data();
      const T* w = weights.data().data();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out_features; ++o) {
          const T g = gy[n * out_features + o];
          for (std::size_t i = 0; i < in_features; ++i) gx[n * in_features + i] += g * w[o * in_features + i];
        }
    }
    if (weights.tracks_grad()) {
      T* gw = weights.mutable_grad().data();
      const T* x = input.data().data();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out_features; ++o) {
          const T g = gy[n * out_features + o];
          for (std::size_t i = 0; i < in_features; ++i) gw[o * in_features + i] += g * x[n * in_features + i];
        }
    }
    if (bias.tracks_grad()) {
      T* gb = bias.mutable_grad().data();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out_features; ++o) gb[o] += gy[n * out_features + o];
    }
  };
  tape.record(OpKind::affine, {input, weights, bias}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax", "logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<T> probs(logits.shape());
  const T* x = logits.data().data();
  T* p = probs.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * cols;
    const T peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(row[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) {
      p[r * cols + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - peak)) / total);
    }
  }
  return probs;
}

template <typename T>
LossOutput<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                    std::span<const std::size_t> labels) {
  tape.check_input(logits, "softmax_cross_entropy");
  require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError(fmt::format("softmax_cross_entropy: {} labels for {} rows", labels.size(), rows));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) {
      throw ValueError(fmt::format("softmax_cross_entropy: label {} at row {} outside [0, {})",
                                   labels[r], r, cols));
    }
  }
  Tensor<T> probs = softmax(logits);
  const T* x = logits.data().data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * cols;
    const T peak = *std::max_element(row, row + cols);
    double lse = 0.0;
    for (std::size_t c = 0; c < cols; ++c) lse += std::exp(static_cast<double>(row[c] - peak));
    total += std::log(lse) - static_cast<double>(row[labels[r]] - peak);
  }
  Tensor<T> loss(Shape{1}, static_cast<T>(total / static_cast<double>(rows)));

  std::vector<std::size_t> targets(labels.begin(), labels.end());
  auto backward_fn = [logits = Tensor<T>(logits), loss, probs, targets = std::move(targets), rows, cols]() mutable {
    if (!logits.tracks_grad()) return;
    const T upstream = loss.grad()[0] / static_cast<T>(rows);
    auto g = logits.mutable_grad();
    auto p = probs.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const T onehot = c == targets[r] ? T(1) : T(0);
        g[r * cols + c] += (p[r * cols + c] - onehot) * upstream;
      }
    }
  };
  tape.record(OpKind::softmax_cross_entropy, {logits}, loss, std::move(backward_fn));
  return {loss, probs};
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  tape.check_input(input, "sum");
  T acc = T(0);
  for (T v : input.data()) acc += v;
  Tensor<T> output(Shape{1}, acc);
  auto backward_fn = [input = Tensor<T>(input), output]() mutable {
    if (!input.tracks_grad()) return;
    const T g = output.grad()[0];
    for (T& gx : input.mutable_grad()) gx += g;
  };
  tape.record(OpKind::sum, {input}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  tape.check_input(a, "add");
  tape.check_input(b, "add");
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("add: shapes {} and {} differ", a.shape().str(), b.shape().str()));
  }
  Tensor<T> output(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = output.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  auto backward_fn = [a = Tensor<T>(a), b = Tensor<T>(b), output]() mutable {
    auto g = output.grad();
    if (a.tracks_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.tracks_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  tape.record(OpKind::add, {a, b}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
  tape.check_input(input, "scale");
  Tensor<T> output(input.shape());
  auto x = input.data();
  auto y = output.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x[i];
  auto backward_fn = [input = Tensor<T>(input), output, factor]() mutable {
    if (!input.tracks_grad()) return;
    auto g = output.grad();
    auto gx = input.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  };
  tape.record(OpKind::scale, {input}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> select(Tape<T>& tape, const Tensor<T>& matrix, std::size_t row, std::size_t col) {
  tape.check_input(matrix, "select");
  require_rank(matrix.shape(), 2, "select", "input");
  if (row >= matrix.dim(0) || col >= matrix.dim(1)) {
    throw ShapeError(fmt::format("select: index ({}, {}) outside {}", row, col, matrix.shape().str()));
  }
  const std::size_t flat = row * matrix.dim(1) + col;
  Tensor<T> output(Shape{1}, matrix.data()[flat]);
  auto backward_fn = [matrix = Tensor<T>(matrix), output, flat]() mutable {
    if (!matrix.tracks_grad()) return;
    matrix.mutable_grad()[flat] += output.grad()[0];
  };
  tape.record(OpKind::select, {matrix}, output, std::move(backward_fn));
  return output;
}

template <typename T>
Tensor<T> dot(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  tape.check_input(a, "dot");
  tape.check_input(b, "dot");
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("dot: shapes {} and {} differ", a.shape().str(), b.shape().str()));
  }
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  Tensor<T> output(Shape{1}, static_cast<T>(acc));
  auto backward_fn = [a = Tensor<T>(a), b = Tensor<T>(b), output]() mutable {
    const T g = output.grad()[0];
    if (a.tracks_grad()) {
      auto ga = a.mutable_grad();
      auto y = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * y[i];
    }
    if (b.tracks_grad()) {
      auto gb = b.mutable_grad();
      auto x = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * x[i];
    }
  };
  tape.record(OpKind::dot, {a, b}, output, std::move(backward_fn));
  return output;
}

#define FAITHCAM_INSTANTIATE_OPS(T)                                                                 \
  template class Tape<T>;                                                                           \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                            std::size_t, std::size_t);                                              \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                              \
  template Tensor<T> max_pool2d(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> affine(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template LossOutput<T> softmax_cross_entropy(Tape<T>&, const Tensor<T>&,                          \
                                               std::span<const std::size_t>);                       \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                               \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                          \
  template Tensor<T> select(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> dot(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> softmax(const Tensor<T>&);

FAITHCAM_INSTANTIATE_OPS(float)
FAITHCAM_INSTANTIATE_OPS(double)

}  // namespace faithcam
