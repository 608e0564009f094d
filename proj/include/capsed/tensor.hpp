#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace capsed {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Raised for any shape incompatibility between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

/// Gradient buffers handed to a backward function, one per op input.
/// A null entry means that input does not require a gradient.
using GradInputs = std::span<double* const>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradInputs grad_in)>;

/// N-dimensional row-major array of doubles that may participate in a
/// reverse-mode differentiation graph. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access, intended for leaf tensors (parameters, buffers).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  /// Gradient buffer; zeros of the right shape if nothing has accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar; accumulates into leaf grads.
  void backward() const;

  /// Same values, no graph attachment.
  Tensor detach() const;

  /// Build an op result. If gradient recording is enabled and any input
  /// requires a gradient, the result is attached to the graph.
  static Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool value);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

enum class Mode { Train, Eval };

// Worker count used by the convolution kernels. Results do not depend on it.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Natural log; throws std::domain_error on non-positive input.
Tensor log(const Tensor& a);
/// Gradient passes only where lo <= x <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);

/// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N x in], weight [out x in], bias [out] -> [N x out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Stack equally shaped tensors along a new axis.
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Σ a_i w_i with constant weights, -> scalar.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

inline constexpr double kNormEpsilon = 1e-12;
/// sqrt(Σ x² + ε) along the last axis; the last axis is dropped.
Tensor vector_norm(const Tensor& a);
/// Softmax along the last axis.
Tensor softmax(const Tensor& a);

// ---------------------------------------------------------------------------
// Convolution, pooling, normalization
// ---------------------------------------------------------------------------

/// Stride-1 convolution with zero "same" padding (odd kernel sizes).
/// input [C_in x H x W] or [B x C_in x H x W]; kernels [C_out x C_in x kH x kW].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Max pooling over the second-to-last (frequency) axis by a factor p.
Tensor maxpool_freq(const Tensor& input, std::size_t pool);

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool initialized = false;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization. The channel axis is 1 for rank 2 and rank 4
/// inputs ([N x C], [B x C x H x W]) and 0 for rank 3 ([C x H x W]).
/// Train mode uses batch statistics and updates `stats` (the first update
/// copies the batch statistics, later ones blend with kBatchNormMomentum).
Tensor batchnorm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                 RunningStats& stats, Mode mode);

/// Inverted dropout.
Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng);

}  // namespace capsed
