#include "divlab/diffvalue.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "divlab/errors.hpp"

namespace divlab {

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const char* op, const Array& a, const Array& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

using Vjp = std::function<std::vector<DiffValue>(const DiffValue&)>;

DiffValue make_op(Array value, std::vector<DiffValue> inputs, Vjp vjp) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  bool needs_grad = false;
  for (const DiffValue& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (g_grad_enabled && needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->vjp = std::move(vjp);
  }
  return DiffValue::from_node(std::move(node));
}

Array elementwise(const Array& a, const Array& b, double (*f)(double, double)) {
  Array out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

Array map_array(const Array& a, double (*f)(double)) {
  Array out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

Array matmul_kernel(const Array& a, const Array& b) {
  const int64_t n = a.rows(), k = a.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
  }
  const int64_t m = b.cols();
  Array out({n, m});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * m;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = pb + p * m;
      for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// Scalar -> arbitrary shape; the linear dual of sum().
DiffValue expand_scalar(const DiffValue& s, const std::vector<int64_t>& shape);

DiffValue sum_impl(const DiffValue& a) {
  double total = 0.0;
  for (const double v : a.value().values()) total += v;
  const std::vector<int64_t> in_shape = a.value().shape();
  return make_op(Array::scalar(total), {a}, [in_shape](const DiffValue& g) {
    return std::vector<DiffValue>{expand_scalar(g, in_shape)};
  });
}

DiffValue expand_scalar(const DiffValue& s, const std::vector<int64_t>& shape) {
  if (s.value().size() != 1) {
    throw ShapeError("expand_scalar: expected scalar, got shape " + s.value().shape_str());
  }
  Array out(shape);
  std::fill(out.values().begin(), out.values().end(), s.value().item());
  return make_op(std::move(out), {s},
                 [](const DiffValue& g) { return std::vector<DiffValue>{sum_impl(g)}; });
}

}  // namespace

DiffValue DiffValue::constant(Array v) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(v);
  node->requires_grad = false;
  return from_node(std::move(node));
}

DiffValue DiffValue::leaf(Array v) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(v);
  node->requires_grad = true;
  return from_node(std::move(node));
}

DiffValue DiffValue::from_node(std::shared_ptr<detail::Node> n) {
  DiffValue d;
  d.node_ = std::move(n);
  return d;
}

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

DiffValue add(const DiffValue& a, const DiffValue& b) {
  check_same_shape("add", a.value(), b.value());
  Array out = elementwise(a.value(), b.value(), [](double x, double y) { return x + y; });
  return make_op(std::move(out), {a, b},
                 [](const DiffValue& g) { return std::vector<DiffValue>{g, g}; });
}

DiffValue sub(const DiffValue& a, const DiffValue& b) {
  check_same_shape("sub", a.value(), b.value());
  Array out = elementwise(a.value(), b.value(), [](double x, double y) { return x - y; });
  return make_op(std::move(out), {a, b},
                 [](const DiffValue& g) { return std::vector<DiffValue>{g, neg(g)}; });
}

DiffValue mul(const DiffValue& a, const DiffValue& b) {
  check_same_shape("mul", a.value(), b.value());
  Array out = elementwise(a.value(), b.value(), [](double x, double y) { return x * y; });
  return make_op(std::move(out), {a, b}, [a, b](const DiffValue& g) {
    return std::vector<DiffValue>{mul(g, b), mul(g, a)};
  });
}

DiffValue divide(const DiffValue& a, const DiffValue& b) {
  check_same_shape("divide", a.value(), b.value());
  Array out = elementwise(a.value(), b.value(), [](double x, double y) { return x / y; });
  return make_op(std::move(out), {a, b}, [a, b](const DiffValue& g) {
    return std::vector<DiffValue>{divide(g, b), neg(divide(mul(g, a), mul(b, b)))};
  });
}

DiffValue scale(const DiffValue& a, double c) {
  Array out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  return make_op(std::move(out), {a},
                 [c](const DiffValue& g) { return std::vector<DiffValue>{scale(g, c)}; });
}

DiffValue neg(const DiffValue& a) { return scale(a, -1.0); }

DiffValue matmul(const DiffValue& a, const DiffValue& b) {
  Array out = matmul_kernel(a.value(), b.value());
  return make_op(std::move(out), {a, b}, [a, b](const DiffValue& g) {
    return std::vector<DiffValue>{matmul(g, transpose(b)), matmul(transpose(a), g)};
  });
}

DiffValue transpose(const DiffValue& a) {
  const Array& v = a.value();
  const int64_t n = v.rows(), m = v.cols();
  Array out({m, n});
  const double* pa = v.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) po[j * n + i] = pa[i * m + j];
  return make_op(std::move(out), {a},
                 [](const DiffValue& g) { return std::vector<DiffValue>{transpose(g)}; });
}

DiffValue relu(const DiffValue& a) {
  const Array& v = a.value();
  Array out(v.shape());
  Array mask(v.shape());
  const double* pa = v.data();
  double* po = out.data();
  double* pm = mask.data();
  const int64_t n = v.size();
  for (int64_t i = 0; i < n; ++i) {
    const bool on = pa[i] > 0.0;
    po[i] = on ? pa[i] : 0.0;
    pm[i] = on ? 1.0 : 0.0;
  }
  DiffValue mask_const = DiffValue::constant(std::move(mask));
  return make_op(std::move(out), {a}, [mask_const](const DiffValue& g) {
    return std::vector<DiffValue>{mul(g, mask_const)};
  });
}

DiffValue exp(const DiffValue& a) {
  Array out = map_array(a.value(), [](double x) { return std::exp(x); });
  // Recomputing exp(a) in the backward keeps the closure free of a
  // self-reference while staying differentiable.
  return make_op(std::move(out), {a}, [a](const DiffValue& g) {
    return std::vector<DiffValue>{mul(g, exp(a))};
  });
}

DiffValue log(const DiffValue& a) {
  Array out = map_array(a.value(), [](double x) { return std::log(x); });
  return make_op(std::move(out), {a}, [a](const DiffValue& g) {
    return std::vector<DiffValue>{divide(g, a)};
  });
}

DiffValue square(const DiffValue& a) {
  Array out = map_array(a.value(), [](double x) { return x * x; });
  return make_op(std::move(out), {a}, [a](const DiffValue& g) {
    return std::vector<DiffValue>{scale(mul(g, a), 2.0)};
  });
}

DiffValue sum(const DiffValue& a) { return sum_impl(a); }

DiffValue mean(const DiffValue& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

DiffValue rowsum(const DiffValue& a) {
  const Array& v = a.value();
  const int64_t n = v.rows(), m = v.cols();
  Array out({n});
  const double* pa = v.data();
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) s += pa[i * m + j];
    out.data()[i] = s;
  }
  return make_op(std::move(out), {a}, [m](const DiffValue& g) {
    return std::vector<DiffValue>{broadcast_col(g, m)};
  });
}

DiffValue colsum(const DiffValue& a) {
  const Array& v = a.value();
  const int64_t n = v.rows(), m = v.cols();
  Array out({m});
  const double* pa = v.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out.data()[j] += pa[i * m + j];
  return make_op(std::move(out), {a}, [n](const DiffValue& g) {
    return std::vector<DiffValue>{broadcast_rows(g, n)};
  });
}

DiffValue broadcast_col(const DiffValue& v, int64_t cols) {
  const Array& a = v.value();
  if (a.rank() != 1) throw ShapeError("broadcast_col: expected rank 1, got " + a.shape_str());
  const int64_t n = a.shape()[0];
  Array out({n, cols});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < cols; ++j) po[i * cols + j] = pa[i];
  return make_op(std::move(out), {v},
                 [](const DiffValue& g) { return std::vector<DiffValue>{rowsum(g)}; });
}

DiffValue broadcast_rows(const DiffValue& v, int64_t rows) {
  const Array& a = v.value();
  if (a.rank() != 1) throw ShapeError("broadcast_rows: expected rank 1, got " + a.shape_str());
  const int64_t m = a.shape()[0];
  Array out({rows, m});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < m; ++j) po[i * m + j] = pa[j];
  return make_op(std::move(out), {v},
                 [](const DiffValue& g) { return std::vector<DiffValue>{colsum(g)}; });
}

DiffValue add_rowvec(const DiffValue& m, const DiffValue& v) {
  const Array& ma = m.value();
  const Array& va = v.value();
  if (va.rank() != 1 || ma.rank() != 2 || va.shape()[0] != ma.cols()) {
    throw ShapeError("add_rowvec: shape mismatch " + ma.shape_str() + " vs " + va.shape_str());
  }
  const int64_t n = ma.rows(), c = ma.cols();
  Array out({n, c});
  const double* pm = ma.data();
  const double* pv = va.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) po[i * c + j] = pm[i * c + j] + pv[j];
  return make_op(std::move(out), {m, v},
                 [](const DiffValue& g) { return std::vector<DiffValue>{g, colsum(g)}; });
}

DiffValue pick(const DiffValue& m, const std::vector<int>& idx) {
  const Array& a = m.value();
  const int64_t n = a.rows(), c = a.cols();
  if (static_cast<int64_t>(idx.size()) != n) {
    throw ShapeError("pick: index count " + std::to_string(idx.size()) + " does not match rows " +
                     std::to_string(n));
  }
  Array out({n});
  for (int64_t i = 0; i < n; ++i) {
    const int j = idx[static_cast<size_t>(i)];
    if (j < 0 || j >= c) {
      throw ContractError("pick: label " + std::to_string(j) + " out of range [0," +
                          std::to_string(c) + ") at row " + std::to_string(i));
    }
    out.data()[i] = a.data()[i * c + j];
  }
  std::vector<int> idx_copy = idx;
  return make_op(std::move(out), {m}, [idx_copy, c](const DiffValue& g) {
    return std::vector<DiffValue>{scatter_rows(g, idx_copy, c)};
  });
}

DiffValue scatter_rows(const DiffValue& v, const std::vector<int>& idx, int64_t cols) {
  const Array& a = v.value();
  if (a.rank() != 1 || static_cast<int64_t>(idx.size()) != a.shape()[0]) {
    throw ShapeError("scatter_rows: expected rank-1 input matching index count");
  }
  const int64_t n = a.shape()[0];
  Array out({n, cols});
  for (int64_t i = 0; i < n; ++i) {
    const int j = idx[static_cast<size_t>(i)];
    if (j < 0 || j >= cols) throw ContractError("scatter_rows: index out of range");
    out.data()[i * cols + j] = a.data()[i];
  }
  std::vector<int> idx_copy = idx;
  return make_op(std::move(out), {v}, [idx_copy](const DiffValue& g) {
    return std::vector<DiffValue>{pick(g, idx_copy)};
  });
}

DiffValue dot(const DiffValue& a, const DiffValue& b) { return sum(mul(a, b)); }

DiffValue log_softmax(const DiffValue& logits) {
  const Array& a = logits.value();
  const int64_t n = a.rows(), m = a.cols();
  if (m == 0 || n == 0) throw ShapeError("log_softmax: empty logits " + a.shape_str());
  // Row maxima are subtracted as constants; piecewise-constant in the inputs,
  // so gradients are unaffected while exp() stays bounded.
  Array maxes({n});
  for (int64_t i = 0; i < n; ++i) {
    double mx = a.data()[i * m];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, a.data()[i * m + j]);
    maxes.data()[i] = mx;
  }
  DiffValue shifted = sub(logits, broadcast_col(DiffValue::constant(std::move(maxes)), m));
  DiffValue lse = log(rowsum(exp(shifted)));
  return sub(shifted, broadcast_col(lse, m));
}

DiffValue cross_entropy_nats(const DiffValue& logits, const std::vector<int>& labels) {
  const int64_t n = logits.value().rows();
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  return scale(sum(pick(log_softmax(logits), labels)), -1.0 / static_cast<double>(n));
}

std::vector<DiffValue> grad(const DiffValue& loss, std::span<const DiffValue> params,
                            const GradOptions& opts, GradStats* stats) {
  if (!loss.defined()) throw ContractError("grad: undefined loss");
  if (loss.value().size() != 1) {
    throw ContractError("grad: loss must be scalar, got shape " + loss.value().shape_str());
  }

  // Post-order DFS over the requires-grad subgraph; reversed it is a
  // topological order, so each node is visited exactly once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  if (loss.requires_grad()) {
    struct Frame {
      detail::Node* node;
      size_t next_parent;
    };
    std::vector<Frame> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        detail::Node* parent = f.node->parents[f.next_parent++].node();
        if (parent->requires_grad && !seen.count(parent)) {
          seen.insert(parent);
          stack.push_back({parent, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<detail::Node*, DiffValue> adjoint;
  size_t vjp_calls = 0;
  {
    GradModeGuard guard(opts.create_graph);
    if (loss.requires_grad()) {
      Array seed(loss.value().shape());
      std::fill(seed.values().begin(), seed.values().end(), 1.0);
      adjoint.emplace(loss.node(), DiffValue::constant(std::move(seed)));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      const auto found = adjoint.find(node);
      if (found == adjoint.end() || node->parents.empty() || !node->vjp) continue;
      ++vjp_calls;
      const std::vector<DiffValue> contrib = node->vjp(found->second);
      for (size_t i = 0; i < node->parents.size(); ++i) {
        const DiffValue& parent = node->parents[i];
        if (!parent.requires_grad()) continue;
        auto [slot, inserted] = adjoint.try_emplace(parent.node(), contrib[i]);
        if (!inserted) slot->second = add(slot->second, contrib[i]);
      }
    }
  }
  if (stats) {
    stats->graph_nodes = order.size();
    stats->vjp_calls = vjp_calls;
  }

  std::vector<DiffValue> result;
  result.reserve(params.size());
  for (const DiffValue& p : params) {
    const auto found = adjoint.find(p.node());
    if (found != adjoint.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(DiffValue::constant(Array::zeros_like(p.value())));
    }
  }
  return result;
}

std::vector<DiffValue> grad_of_grad(const DiffValue& scalar_of_inner,
                                    std::span<const DiffValue> params, GradStats* stats) {
  if (!scalar_of_inner.defined() || scalar_of_inner.value().size() != 1) {
    throw ContractError("grad_of_grad: expected a scalar function of the inner gradient");
  }
  std::unordered_set<const detail::Node*> reachable;
  std::vector<const detail::Node*> queue{scalar_of_inner.node()};
  reachable.insert(scalar_of_inner.node());
  while (!queue.empty()) {
    const detail::Node* node = queue.back();
    queue.pop_back();
    for (const DiffValue& p : node->parents) {
      if (reachable.insert(p.node()).second) queue.push_back(p.node());
    }
  }
  bool any_param_reachable = false;
  for (const DiffValue& p : params) any_param_reachable = any_param_reachable || reachable.count(p.node()) > 0;
  if (!any_param_reachable) {
    throw ContractError(
        "grad_of_grad: no path from the scalar back to the parameters; the inner gradient was "
        "computed without graph retention (rerun grad() with create_graph=true)");
  }
  return grad(scalar_of_inner, params, {.create_graph = false}, stats);
}

}  // namespace divlab
