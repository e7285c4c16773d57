#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace marginmt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a primitive receives operands whose extents do not conform.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& primitive, const std::string& detail)
      : std::invalid_argument(primitive + ": " + detail), primitive_(primitive) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

struct Node;

using BackwardFn = std::function<void(Node&)>;

/// One recorded primitive application (or a leaf when `backward` is empty).
///
/// `seq` is a process-wide creation counter; every input of a node has a
/// smaller `seq` than the node itself, so descending `seq` is a valid reverse
/// topological order for the backward sweep.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(int axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the value with no history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  const Node* identity() const { return node_.get(); }

  /// Reverse sweep from a scalar root; leaves accumulate dRoot/dLeaf.
  void backward() const;

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Builds the output node of a primitive. The backward rule is attached only
/// when recording is on and at least one input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace marginmt
