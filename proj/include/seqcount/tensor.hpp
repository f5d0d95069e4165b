#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace seqcount::ad {

using Shape = std::vector<int>;

long numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

// Dense tensor of 64-bit reals, row-major. Values are shared between
// copies and treated as immutable once an op has produced them. A tensor
// optionally references a node in the graph that recorded its producing
// op; tensors from a previous (reset or destroyed) graph act as constants
// in the next one.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  long numel() const { return values_ ? static_cast<long>(values_->size()) : 0; }
  bool requires_grad() const { return requires_grad_; }
  // Grad buffers are allocated as soon as a tensor requires gradients, so
  // every copy shares one accumulator no matter when it was made.
  void set_requires_grad(bool rg) {
    requires_grad_ = rg;
    if (rg) grad();
  }

  const std::vector<double>& values() const { return *values_; }
  std::vector<double>& mutable_values() { return *values_; }
  // Shared handle to the value buffer (for backward closures and
  // storage-sharing views). Buffers are immutable once an op consumed them.
  std::shared_ptr<std::vector<double>> storage() const { return values_; }
  static Tensor sharing(Shape shape, std::shared_ptr<std::vector<double>> values);
  const double* data() const { return values_->data(); }
  double* data() { return values_->data(); }
  double operator[](long i) const { return (*values_)[i]; }

  // Value of a one-element tensor.
  double item() const;

  // Leaf gradient accumulator; allocated zero-filled on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return grad_ != nullptr && !grad_->empty(); }
  void zero_grad();

 private:
  friend class Graph;
  Shape shape_;
  std::shared_ptr<std::vector<double>> values_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
  // Node id in the graph with uid `owner_uid_`, or -1. Mutable linkage:
  // using a tensor as an op input may lazily register it as a leaf in the
  // active graph. Uids (not addresses) identify graphs, so a tensor never
  // aliases into a new graph that reuses a dead one's storage.
  mutable int node_ = -1;
  mutable std::uint64_t owner_uid_ = 0;
};

// Define-by-run tape. Nodes are appended in execution order, so the node
// list is already topologically sorted and backward() is a single reverse
// sweep. One graph is active per thread; graphs must not be shared
// between threads.
class Graph {
 public:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> inputs;
    std::shared_ptr<std::vector<double>> value;
    // Leaf nodes accumulate into the tensor's own grad buffer.
    std::shared_ptr<std::vector<double>> leaf_grad;
    // Adds contributions to the input nodes' grad accumulators.
    std::function<void(Graph&, const Node&, const std::vector<double>&)> backward;
  };

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active();
  // True when ops should record nodes (an active graph exists and no
  // NoGradGuard is in effect).
  static bool recording();

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }

  // Registers `t` in this graph (as a leaf if it has no producing node
  // here) and returns its node id.
  int ensure_node(const Tensor& t);
  // Records an op node producing `out` from `input_ids`.
  void record(const char* op, Tensor& out, std::vector<int> input_ids,
              std::function<void(Graph&, const Node&, const std::vector<double>&)> backward);

  // Reverse sweep from a scalar loss. Accumulates gradients for every
  // requires-grad leaf reachable from it. The tape stays intact; call
  // reset() before reusing the graph for a new computation.
  void backward(const Tensor& loss);

  // Per-node accumulated gradient from the last backward(); empty vector
  // for nodes the sweep never reached.
  const std::vector<double>& grad_of(int id) const { return grads_[id]; }
  std::vector<double>& grad_buffer(int id);

  void reset();

 private:
  std::uint64_t uid_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// RAII: makes a graph the active one on this thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

// RAII: suppresses node recording (inference / finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace seqcount::ad
