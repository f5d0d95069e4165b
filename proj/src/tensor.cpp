#include "seqcount/tensor.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

namespace seqcount::ad {

namespace {
thread_local Graph* t_active_graph = nullptr;
thread_local bool t_no_grad = false;
std::atomic<std::uint64_t> g_graph_uid{1};
}  // namespace

Graph::Graph() : uid_(g_graph_uid.fetch_add(1, std::memory_order_relaxed)) {}

long numel_of(const Shape& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dim " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t;
  const long n = numel_of(shape);
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<std::vector<double>>(n, value);
  t.requires_grad_ = requires_grad;
  if (requires_grad) t.grad();
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<long>(values.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad_ = requires_grad;
  if (requires_grad) t.grad();
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::sharing(Shape shape, std::shared_ptr<std::vector<double>> values) {
  if (!values || numel_of(shape) != static_cast<long>(values->size()))
    throw std::invalid_argument("sharing: shape " + shape_str(shape) + " does not match storage");
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::move(values);
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item(): tensor has shape " + shape_str(shape_));
  return (*values_)[0];
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<double>>();
  if (grad_->empty()) grad_->assign(values_->size(), 0.0);
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_ || grad_->empty())
    throw std::runtime_error("grad(): no gradient accumulated for this tensor");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) grad_->assign(values_->size(), 0.0);
}

Graph* Graph::active() { return t_active_graph; }

bool Graph::recording() { return t_active_graph != nullptr && !t_no_grad; }

int Graph::ensure_node(const Tensor& t) {
  if (t.owner_uid_ == uid_ && t.node_ >= 0) return t.node_;
  Node n;
  n.op = "leaf";
  n.shape = t.shape_;
  n.value = t.values_;
  if (t.requires_grad_) {
    // Leaf copies share the values buffer, so they also share this grad
    // buffer: gradients from every use site land in one place.
    const_cast<Tensor&>(t).grad();
    n.leaf_grad = t.grad_;
  }
  nodes_.push_back(std::move(n));
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  t.owner_uid_ = uid_;
  return t.node_;
}

void Graph::record(const char* op, Tensor& out, std::vector<int> input_ids,
                   std::function<void(Graph&, const Node&, const std::vector<double>&)> backward) {
  Node n;
  n.op = op;
  n.shape = out.shape_;
  n.value = out.values_;
  n.inputs = std::move(input_ids);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  out.owner_uid_ = uid_;
  out.requires_grad_ = true;
}

std::vector<double>& Graph::grad_buffer(int id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value->size(), 0.0);
  return g;
}

void Graph::backward(const Tensor& loss) {
  if (loss.owner_uid_ != uid_ || loss.node_ < 0)
    throw std::invalid_argument("backward: loss was not produced by this graph");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node_)[0] = 1.0;
  for (int id = loss.node_; id >= 0; --id) {
    const auto& g = grads_[id];
    if (g.empty()) continue;  // not reachable from the loss
    const Node& n = nodes_[id];
    if (n.leaf_grad) {
      auto& lg = *n.leaf_grad;
      for (size_t i = 0; i < lg.size(); ++i) lg[i] += g[i];
    }
    if (n.backward) n.backward(*this, n, g);
  }
}

void Graph::reset() {
  nodes_.clear();
  grads_.clear();
  uid_ = g_graph_uid.fetch_add(1, std::memory_order_relaxed);
}

GraphScope::GraphScope(Graph& g) : prev_(t_active_graph) { t_active_graph = &g; }
GraphScope::~GraphScope() { t_active_graph = prev_; }

NoGradGuard::NoGradGuard() : prev_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = prev_; }

}  // namespace seqcount::ad
