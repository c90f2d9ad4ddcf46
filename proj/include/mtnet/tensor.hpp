#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Differentiable operations recorded in the graph.
enum class OpKind {
  Add,
  Sub,
  Mul,
  Scale,
  Sum,
  Mean,
  Conv2d,
  MaxPool2d,
  Upsample2d,
  Linear,
  Relu,
  Sigmoid,
  Softmax,
  GroupNorm,
  Dropout,
  Concat,
  GlobalAvgPool,
  FocalLoss,
  DiceLoss,
};

const char* op_name(OpKind kind);

class Tensor;

/// Graph record for a tensor produced by a differentiable op. The backward
/// closure owns whatever context the op saved (argmax indices, masks, ...)
/// and accumulates into the parents' grads.
struct Node {
  OpKind kind;
  std::vector<Tensor> parents;
  std::function<void(std::span<const double> grad_out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

/// Reference-counted handle to a row-major float64 array. Copies share
/// storage; use clone() for a deep copy. Tensors that take part in a graph
/// are never mutated by ops.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Grad buffers belong to the shared storage, so these work through const handles.
  std::span<double> mutable_grad() const;  // allocates zeros on first use
  void zero_grad() const;

  bool is_leaf() const;
  const std::shared_ptr<Node>& node() const;

  /// Deep copy of data, detached from any graph.
  Tensor clone() const;
  /// Same data buffer copied into a tensor with a new shape of equal numel.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Builds the result of a differentiable op. The node is attached only when
  /// grad mode is on and at least one parent requires grad.
  static Tensor from_op(Shape shape, std::vector<double> data, OpKind kind,
                        std::vector<Tensor> parents,
                        std::function<void(std::span<const double>)> backward);

 private:
  friend void backward(const Tensor& loss);
  std::shared_ptr<TensorImpl> impl_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`. Repeated calls add to existing leaf grads.
void backward(const Tensor& loss);

/// Adds `grad` into t's gradient buffer when t requires grad.
void accumulate_grad(const Tensor& t, std::span<const double> grad);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace mtnet
