#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared, immutable node. Operations on
// tensors that require gradients record their inputs and a backward rule on
// the result node; `backward()` linearises the recorded graph into a
// ComputationTape and replays it in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pixmatch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  /// Propagates the gradient of the op's output into its inputs.
  /// `grad_out` and `out` have the output's shape.
  using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Creates the result of a differentiable op. The backward rule is kept only
  /// when gradient recording is enabled and at least one input requires grad.
  static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward,
                        std::string_view op_name);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim() const { return shape().size(); }
  std::span<const double> data() const;
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  /// True for tensors created directly rather than produced by a recorded op.
  bool is_leaf() const;
  std::string_view op_name() const;
  /// Creation order; strictly increasing across all tensors of a process.
  std::uint64_t sequence() const;

  bool has_grad() const;
  /// Gradient buffer; empty span when absent.
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  /// Accumulates `delta` into this tensor's gradient buffer (allocating zeros
  /// first). Used by backward rules; a no-op for tensors without requires_grad.
  void accumulate_grad(std::span<const double> delta) const;
  /// Mutable gradient buffer for backward rules; allocates zeros if absent.
  std::span<double> grad_buffer() const;

  /// In-place parameter update, reserved for optimizers. Records nothing.
  std::span<double> mutable_data_for_update();

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend class ComputationTape;

  std::shared_ptr<detail::Node> node_;
};

/// Disables recording of backward rules in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Topologically ordered list of the recorded ops reachable from a root tensor.
class ComputationTape {
 public:
  struct Entry {
    std::uint64_t sequence;
    std::string_view op_name;
  };

  static ComputationTape record(const Tensor& root);

  /// Entries in topological order (inputs before consumers).
  std::vector<Entry> entries() const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates in reverse topological order.
  /// Leaves accumulate; interior gradients are recomputed on every replay.
  /// Returns the sequence numbers of the nodes whose backward rule ran, in visit order.
  std::vector<std::uint64_t> replay_backward() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Accumulates d(loss)/d(t) into every requires_grad ancestor of a scalar loss.
void backward(const Tensor& loss);

/// Same values, no gradient flow.
Tensor detach(const Tensor& t);

enum class ElementwiseKind { add, sub, mul, exp, log, relu, square };

/// Binary kinds accept equal shapes or a scalar operand on either side.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = Tensor());

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw] plus per-channel bias.
/// Output extent follows floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Bilinear resize of [N,C,H,W] to [N,C,out_h,out_w] (half-pixel centres, edge clamp).
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Per-pixel softmax over the channel axis of [N,C,H,W].
Tensor softmax_channels(const Tensor& logits);

}  // namespace pixmatch
