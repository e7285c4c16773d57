#include "marginmt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace marginmt {

namespace {
std::atomic<std::uint64_t> g_seq{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}
}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor", "zero extent in " + shape_str(shape));
  const auto n = numel(shape);
  node_ = new_node(std::move(shape), std::vector<double>(n, fill), requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor", "zero extent in " + shape_str(shape));
  if (numel(shape) != data.size())
    throw ShapeError("tensor", "shape " + shape_str(shape) + " does not hold " +
                                   std::to_string(data.size()) + " values");
  node_ = new_node(std::move(shape), std::move(data), requires_grad);
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("dim", "axis out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item", "tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->data[0];
}

Tensor Tensor::detach() const { return from_node(new_node(node_->shape, node_->data, false)); }

void Tensor::backward() const {
  if (size() != 1)
    throw ShapeError("backward", "root must be scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) throw std::logic_error("backward: root is not on the graph");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  bool needs = false;
  if (t_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  auto n = new_node(std::move(shape), std::move(data), needs);
  n->op = op;
  if (needs) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(n));
}

}  // namespace marginmt
