#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "divlab/array.hpp"

namespace divlab {

class DiffValue;

namespace detail {

struct Node {
  Array value;
  bool requires_grad = false;
  std::vector<DiffValue> parents;
  // Builds adjoint contributions for each parent given this node's adjoint.
  // Runs under the caller's grad mode, so second-order graphs come out of the
  // same closures when grad() is invoked with create_graph.
  std::function<std::vector<DiffValue>(const DiffValue&)> vjp;
};

}  // namespace detail

// Differentiable array value. Copies are cheap and share the graph node.
// A graph is confined to the thread that built it; the Array snapshots it
// produces are safe to move across threads.
class DiffValue {
 public:
  DiffValue() = default;

  static DiffValue constant(Array v);
  static DiffValue leaf(Array v);  // participates in grad()

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  // Leaf-only mutation hook for finite-difference probes; touching interior
  // nodes invalidates previously computed forward values.
  Array& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  detail::Node* node() const { return node_.get(); }

  static DiffValue from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// While a guard with enabled=false is alive on this thread, ops compute
// values but record no graph. grad() uses this to keep first-order backward
// passes from growing new graphs.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- forward ops ------------------------------------------------------
// Required set: add, mul, matmul, relu, log-softmax, cross-entropy (nats),
// mean, square, scalar-scale; plus the primitives their backward passes are
// built from so that every VJP is itself differentiable.

DiffValue add(const DiffValue& a, const DiffValue& b);
DiffValue sub(const DiffValue& a, const DiffValue& b);
DiffValue mul(const DiffValue& a, const DiffValue& b);
DiffValue divide(const DiffValue& a, const DiffValue& b);
DiffValue scale(const DiffValue& a, double c);
DiffValue neg(const DiffValue& a);
DiffValue matmul(const DiffValue& a, const DiffValue& b);
DiffValue transpose(const DiffValue& a);
DiffValue relu(const DiffValue& a);
DiffValue exp(const DiffValue& a);
DiffValue log(const DiffValue& a);
DiffValue square(const DiffValue& a);
DiffValue sum(const DiffValue& a);                       // -> scalar
DiffValue mean(const DiffValue& a);                      // -> scalar
DiffValue rowsum(const DiffValue& a);                    // [n,m] -> [n]
DiffValue colsum(const DiffValue& a);                    // [n,m] -> [m]
DiffValue broadcast_col(const DiffValue& v, int64_t cols);    // [n] -> [n,cols]
DiffValue broadcast_rows(const DiffValue& v, int64_t rows);   // [m] -> [rows,m]
DiffValue add_rowvec(const DiffValue& m, const DiffValue& v); // bias broadcast
DiffValue pick(const DiffValue& m, const std::vector<int>& idx);            // [n,m] -> [n]
DiffValue scatter_rows(const DiffValue& v, const std::vector<int>& idx, int64_t cols);
DiffValue dot(const DiffValue& a, const DiffValue& b);   // -> scalar

// Row-wise log-softmax, max-stabilized.
DiffValue log_softmax(const DiffValue& logits);
// Mean negative log-likelihood over rows, in nats.
DiffValue cross_entropy_nats(const DiffValue& logits, const std::vector<int>& labels);

// ---- reverse-mode gradients --------------------------------------------

struct GradOptions {
  // Keep the backward pass differentiable: adjoints are recorded as graph
  // nodes so a second grad() can run through them.
  bool create_graph = false;
};

struct GradStats {
  size_t graph_nodes = 0;  // nodes reachable from the loss that need grad
  size_t vjp_calls = 0;    // backward visits; equals graph_nodes minus leaves
};

// d(loss)/d(params). loss must be scalar. Params absent from the graph get
// exact-zero gradients. Each reachable node is visited exactly once, in
// reverse topological order.
std::vector<DiffValue> grad(const DiffValue& loss, std::span<const DiffValue> params,
                            const GradOptions& opts = {}, GradStats* stats = nullptr);

// Second-order entry point: differentiates a scalar built from a grad()
// result w.r.t. the original params. Throws ContractError when the scalar
// does not reach the params (the inner grad() ran without create_graph).
std::vector<DiffValue> grad_of_grad(const DiffValue& scalar_of_inner,
                                    std::span<const DiffValue> params,
                                    GradStats* stats = nullptr);

}  // namespace divlab
