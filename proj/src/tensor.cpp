#include "mtnet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "mtnet/error.hpp"

namespace mtnet {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::Upsample2d: return "upsample_nearest2d";
    case OpKind::Linear: return "linear";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::GroupNorm: return "group_norm";
    case OpKind::Dropout: return "dropout";
    case OpKind::Concat: return "concat";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::FocalLoss: return "focal_loss";
    case OpKind::DiceLoss: return "dice_loss";
  }
  return "unknown";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = impl_->shape;
  if (index.size() != s.size()) {
    throw DimensionError("index rank does not match shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for shape " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

const std::shared_ptr<Node>& Tensor::node() const { return impl_->node; }

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(impl_->shape) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), impl_->data, false);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, OpKind kind,
                       std::vector<Tensor> parents,
                       std::function<void(std::span<const double>)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  const bool needs_grad =
      g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& p) { return p.requires_grad(); });
  if (needs_grad) {
    out.impl_->requires_grad = true;
    out.impl_->node = std::make_shared<Node>(
        Node{kind, std::move(parents), std::move(backward_fn)});
  }
  return out;
}

void accumulate_grad(const Tensor& t, std::span<const double> grad) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  if (dst.size() != grad.size()) {
    throw DimensionError(std::string("gradient length mismatch for shape ") + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grad[i];
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  // Post-order DFS over tensors that carry a node; reversed, this is a
  // topological order from the loss towards the leaves.
  std::vector<Tensor> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.impl_->node;
    if (node && next < node->parents.size()) {
      const Tensor& parent = node->parents[next++];
      if (parent.impl_->node && visited.insert(parent.impl_.get()).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  const double one = 1.0;
  accumulate_grad(loss, std::span<const double>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& impl = *it->impl_;
    if (!impl.node) continue;
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    impl.node->backward(impl.grad);
    // Intermediate grads are scratch space; only leaves keep theirs.
    std::vector<double>().swap(impl.grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace mtnet
