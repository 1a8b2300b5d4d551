#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <vector>

#include "divlab/diffvalue.hpp"
#include "divlab/errors.hpp"
#include "divlab/mlp.hpp"
#include "divlab/param_vector.hpp"
#include "divlab/rng.hpp"

using namespace divlab;

namespace {

using LossFn = std::function<DiffValue(std::span<const DiffValue>)>;

double eval_value(const LossFn& f, std::span<const DiffValue> leaves) {
  GradModeGuard off(false);
  return f(leaves).value().item();
}

Array normal_array(Rng& rng, std::vector<int64_t> shape, double sd = 1.0) {
  Array a(std::move(shape));
  for (auto& x : a.values()) x = sd * rng.normal();
  return a;
}

Array positive_array(Rng& rng, std::vector<int64_t> shape, double lo) {
  Array a(std::move(shape));
  for (auto& x : a.values()) x = lo + rng.uniform01();
  return a;
}

// Entries bounded away from zero so relu/divide stay locally smooth.
Array signed_away_from_zero(Rng& rng, std::vector<int64_t> shape, double margin) {
  Array a(std::move(shape));
  for (auto& x : a.values()) {
    const double mag = margin + rng.uniform01();
    x = rng.below(2) == 0 ? mag : -mag;
  }
  return a;
}

// Central-difference check of grad() for every coordinate of every leaf.
void check_gradients(const LossFn& f, std::vector<DiffValue> leaves, double h = 1e-5,
                     double rel = 1e-6, double abs_floor = 1e-8) {
  DiffValue loss = f(leaves);
  auto grads = grad(loss, leaves);
  REQUIRE(grads.size() == leaves.size());
  for (size_t l = 0; l < leaves.size(); ++l) {
    REQUIRE(grads[l].value().same_shape(leaves[l].value()));
    Array& v = leaves[l].mutable_value();
    for (int64_t i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      const double fp = eval_value(f, leaves);
      v.data()[i] = orig - h;
      const double fm = eval_value(f, leaves);
      v.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = grads[l].value().data()[i];
      const double tol = abs_floor + rel * std::max(std::abs(ad), std::abs(fd));
      INFO("leaf ", l, " index ", i, " ad=", ad, " fd=", fd);
      CHECK(std::abs(ad - fd) <= tol);
    }
  }
}

DiffValue weighted_total(const DiffValue& x, const DiffValue& weights) {
  return dot(x, weights);
}

}  // namespace

TEST_CASE("finite differences: every op, 100 random seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(seed, "fd"));
    const DiffValue c34 = DiffValue::constant(normal_array(rng, {3, 4}));
    const DiffValue c32 = DiffValue::constant(normal_array(rng, {3, 2}));
    const DiffValue c43 = DiffValue::constant(normal_array(rng, {4, 3}));
    const DiffValue c3 = DiffValue::constant(normal_array(rng, {3}));
    const DiffValue c4 = DiffValue::constant(normal_array(rng, {4}));

    // add / sub / mul
    {
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}));
      auto b = DiffValue::leaf(normal_array(rng, {3, 4}));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(add(p[0], p[1]), c34); },
          {a, b});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(sub(p[0], p[1]), c34); },
          {a, b});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(mul(p[0], p[1]), c34); },
          {a, b});
    }
    // divide (denominator away from zero)
    {
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}));
      auto b = DiffValue::leaf(signed_away_from_zero(rng, {3, 4}, 1.0));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(divide(p[0], p[1]), c34); },
          {a, b});
    }
    // scale / neg / square / exp
    {
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}, 0.8));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(scale(p[0], 1.7), c34); },
          {a});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(neg(p[0]), c34); }, {a});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(square(p[0]), c34); }, {a});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(exp(p[0]), c34); }, {a});
    }
    // log (positive inputs)
    {
      auto a = DiffValue::leaf(positive_array(rng, {3, 4}, 0.5));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(log(p[0]), c34); }, {a});
    }
    // matmul / transpose
    {
      auto A = DiffValue::leaf(normal_array(rng, {3, 4}));
      auto B = DiffValue::leaf(normal_array(rng, {4, 2}));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(matmul(p[0], p[1]), c32); },
          {A, B});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(transpose(p[0]), c43); },
          {A});
    }
    // relu (inputs away from the kink)
    {
      auto a = DiffValue::leaf(signed_away_from_zero(rng, {3, 4}, 0.25));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(relu(p[0]), c34); }, {a});
    }
    // sum / mean
    {
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}));
      check_gradients([&](std::span<const DiffValue> p) { return scale(sum(p[0]), 1.3); }, {a});
      check_gradients([&](std::span<const DiffValue> p) { return scale(mean(p[0]), 1.3); }, {a});
    }
    // rowsum / colsum / broadcasts / add_rowvec
    {
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}));
      auto v3 = DiffValue::leaf(normal_array(rng, {3}));
      auto v4 = DiffValue::leaf(normal_array(rng, {4}));
      check_gradients([&](std::span<const DiffValue> p) { return dot(rowsum(p[0]), c3); }, {a});
      check_gradients([&](std::span<const DiffValue> p) { return dot(colsum(p[0]), c4); }, {a});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(broadcast_col(p[0], 4), c34); },
          {v3});
      check_gradients(
          [&](std::span<const DiffValue> p) {
            return weighted_total(broadcast_rows(p[0], 3), c34);
          },
          {v4});
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(add_rowvec(p[0], p[1]), c34); },
          {a, v4});
    }
    // pick / scatter_rows / dot
    {
      std::vector<int> idx(3);
      for (auto& j : idx) j = static_cast<int>(rng.below(4));
      auto a = DiffValue::leaf(normal_array(rng, {3, 4}));
      auto v3 = DiffValue::leaf(normal_array(rng, {3}));
      auto b = DiffValue::leaf(normal_array(rng, {3, 4}));
      check_gradients([&](std::span<const DiffValue> p) { return dot(pick(p[0], idx), c3); }, {a});
      check_gradients(
          [&](std::span<const DiffValue> p) {
            return weighted_total(scatter_rows(p[0], idx, 4), c34);
          },
          {v3});
      check_gradients(
          [&](std::span<const DiffValue> p) { return scale(dot(p[0], p[1]), 0.7); }, {a, b});
    }
    // log_softmax / cross_entropy_nats
    {
      auto logits = DiffValue::leaf(normal_array(rng, {3, 4}, 1.5));
      std::vector<int> labels(3);
      for (auto& j : labels) j = static_cast<int>(rng.below(4));
      check_gradients(
          [&](std::span<const DiffValue> p) { return weighted_total(log_softmax(p[0]), c34); },
          {logits});
      check_gradients(
          [&](std::span<const DiffValue> p) {
            return scale(cross_entropy_nats(p[0], labels), 1.3);
          },
          {logits});
    }
  }
}

TEST_CASE("matmul matches a naive triple-loop oracle") {
  Rng rng(derive_seed(3, "matmul-oracle"));
  const Array A = normal_array(rng, {3, 4});
  const Array B = normal_array(rng, {4, 2});
  auto C = matmul(DiffValue::constant(A), DiffValue::constant(B));
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 2; ++j) {
      double want = 0.0;
      for (int64_t k = 0; k < 4; ++k) want += A.data()[i * 4 + k] * B.data()[k * 2 + j];
      const double got = C.value().data()[i * 2 + j];
      CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("log_softmax of uniform logits is -ln(n) everywhere") {
  Array logits({1, 5});  // zeros
  auto out = log_softmax(DiffValue::constant(logits));
  for (double v : out.value().values())
    CHECK(v == doctest::Approx(-std::log(5.0)).epsilon(1e-15));
}

TEST_CASE("grad of 0.5*theta^2 is theta") {
  auto theta = DiffValue::leaf(Array::scalar(3.0));
  auto loss = scale(square(theta), 0.5);
  auto g = grad(loss, std::vector<DiffValue>{theta});
  CHECK(g[0].value().item() == 3.0);
}

TEST_CASE("params absent from the graph get exact zero gradients") {
  auto a = DiffValue::leaf(Array({2, 2}, {1, 2, 3, 4}));
  auto b = DiffValue::leaf(Array({3}, {5, 6, 7}));
  auto loss = sum(square(a));
  auto g = grad(loss, std::vector<DiffValue>{a, b});
  REQUIRE(g[1].value().same_shape(b.value()));
  for (double x : g[1].value().values()) CHECK(x == 0.0);
  CHECK(g[0].value().data()[3] == 8.0);
}

TEST_CASE("grad requires a scalar loss") {
  auto a = DiffValue::leaf(Array({2, 2}, {1, 2, 3, 4}));
  auto y = square(a);
  CHECK_THROWS_AS((void)grad(y, std::vector<DiffValue>{a}), ContractError);
}

TEST_CASE("create_graph controls differentiability of the gradient") {
  auto theta = DiffValue::leaf(Array::scalar(2.0));
  auto loss = scale(square(square(theta)), 0.25);  // theta^4 / 4

  auto detached = grad(loss, std::vector<DiffValue>{theta});
  CHECK(detached[0].value().item() == 8.0);  // theta^3
  CHECK_FALSE(detached[0].requires_grad());

  auto tracked = grad(loss, std::vector<DiffValue>{theta}, GradOptions{.create_graph = true});
  CHECK(tracked[0].value().item() == 8.0);
  CHECK(tracked[0].requires_grad());

  auto hess = grad_of_grad(tracked[0], std::vector<DiffValue>{theta});
  CHECK(hess[0].value().item() == 12.0);  // 3*theta^2
}

TEST_CASE("grad_of_grad of 0.5*theta^2 is exactly one") {
  auto theta = DiffValue::leaf(Array::scalar(-1.75));
  auto loss = scale(square(theta), 0.5);
  auto g = grad(loss, std::vector<DiffValue>{theta}, GradOptions{.create_graph = true});
  auto h = grad_of_grad(g[0], std::vector<DiffValue>{theta});
  CHECK(h[0].value().item() == 1.0);
}

TEST_CASE("grad_of_grad without create_graph reports the broken contract") {
  auto theta = DiffValue::leaf(Array::scalar(2.0));
  auto loss = scale(square(theta), 0.5);
  auto g = grad(loss, std::vector<DiffValue>{theta});  // create_graph=false
  CHECK_THROWS_AS((void)grad_of_grad(g[0], std::vector<DiffValue>{theta}), ContractError);
}

TEST_CASE("hessian-vector product matches finite differences of grad on a 50-param mlp") {
  const MlpSpec spec = MlpSpec::feed_forward(4, {5}, 4);
  REQUIRE(spec.param_count() == 49);

  Rng rng(derive_seed(7, "hvp"));
  auto base = init_mlp_arrays(spec, rng);
  const Array x = normal_array(rng, {6, 4});
  std::vector<int> labels(6);
  for (auto& j : labels) j = static_cast<int>(rng.below(4));
  std::vector<Array> dir;
  for (const auto& t : base) dir.push_back(normal_array(rng, t.shape()));

  auto loss_at = [&](const std::vector<Array>& values) {
    auto params = arrays_to_leaves(values);
    auto logits = mlp_forward(spec, params, DiffValue::constant(x));
    return std::make_pair(cross_entropy_nats(logits, labels), params);
  };

  // HVP through the double-backward path.
  std::vector<double> hvp;
  {
    auto [loss, params] = loss_at(base);
    auto inner = grad(loss, params, GradOptions{.create_graph = true});
    DiffValue s;
    for (size_t i = 0; i < inner.size(); ++i) {
      auto term = dot(inner[i], DiffValue::constant(dir[i]));
      s = s.defined() ? add(s, term) : term;
    }
    auto h = grad_of_grad(s, params);
    for (const auto& g : h)
      for (double v : g.value().values()) hvp.push_back(v);
  }

  // (grad(theta + h*v) - grad(theta - h*v)) / (2h)
  const double h = 1e-5;
  std::vector<double> fd;
  {
    auto shifted = [&](double sign) {
      std::vector<Array> vals = base;
      for (size_t i = 0; i < vals.size(); ++i) axpy_inplace(vals[i], sign * h, dir[i]);
      auto [loss, params] = loss_at(vals);
      auto g = grad(loss, params);
      std::vector<double> flat;
      for (const auto& gi : g)
        for (double v : gi.value().values()) flat.push_back(v);
      return flat;
    };
    auto gp = shifted(+1.0);
    auto gm = shifted(-1.0);
    for (size_t i = 0; i < gp.size(); ++i) fd.push_back((gp[i] - gm[i]) / (2.0 * h));
  }

  REQUIRE(hvp.size() == fd.size());
  REQUIRE(hvp.size() == 49);
  double num = 0.0, da = 0.0, db = 0.0;
  for (size_t i = 0; i < hvp.size(); ++i) {
    num += (hvp[i] - fd[i]) * (hvp[i] - fd[i]);
    da += hvp[i] * hvp[i];
    db += fd[i] * fd[i];
  }
  const double denom = std::max(std::sqrt(da), std::sqrt(db));
  REQUIRE(denom > 0.0);
  CHECK(std::sqrt(num) <= 1e-4 * denom);
}

TEST_CASE("hvp of a pure quadratic is exact") {
  auto theta = DiffValue::leaf(Array({3}, {1.0, -2.0, 0.5}));
  const Array v({3}, {0.25, 1.0, -3.0});
  auto loss = dot(theta, theta);  // grad = 2*theta, hessian = 2I
  auto inner = grad(loss, std::vector<DiffValue>{theta}, GradOptions{.create_graph = true});
  auto s = dot(inner[0], DiffValue::constant(v));
  auto h = grad_of_grad(s, std::vector<DiffValue>{theta});
  for (int64_t i = 0; i < 3; ++i) CHECK(h[0].value().data()[i] == 2.0 * v.data()[i]);
}

TEST_CASE("backward visits each reachable node exactly once") {
  auto x = DiffValue::leaf(Array::scalar(0.7));
  auto a = square(x);
  auto b = exp(x);
  auto loss = mul(a, b);  // diamond: x feeds both branches

  GradStats stats;
  auto g = grad(loss, std::vector<DiffValue>{x}, {}, &stats);
  CHECK(stats.graph_nodes == 4);  // x, a, b, loss
  CHECK(stats.vjp_calls == 3);    // every non-leaf exactly once

  const double expect = (2.0 * 0.7 + 0.7 * 0.7) * std::exp(0.7);
  CHECK(g[0].value().item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("repeated operand accumulates both contributions") {
  auto a = DiffValue::leaf(Array({2}, {1.0, 2.0}));
  auto g = grad(sum(add(a, a)), std::vector<DiffValue>{a});
  CHECK(g[0].value().data()[0] == 2.0);
  CHECK(g[0].value().data()[1] == 2.0);
}

TEST_CASE("shape mismatches name both shapes") {
  auto a = DiffValue::constant(Array({3, 4}));
  auto b = DiffValue::constant(Array({2, 2}));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3,4]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(a, b), ShapeError);
}

TEST_CASE("log_softmax is finite for extreme logits and rows normalize") {
  Array logits({2, 4}, {1000.0, 0.0, -1000.0, 500.0, -800.0, -800.0, -800.0, -800.0});
  auto out = log_softmax(DiffValue::constant(logits));
  REQUIRE(out.value().all_finite());
  for (int64_t i = 0; i < 2; ++i) {
    double total = 0.0;
    for (int64_t j = 0; j < 4; ++j) {
      const double lp = out.value().data()[i * 4 + j];
      CHECK(lp <= 0.0);
      total += std::exp(lp);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy of uniform logits is ln(n_classes)") {
  Array logits({4, 5});  // zeros
  auto ce = cross_entropy_nats(DiffValue::constant(logits), {0, 1, 2, 3});
  CHECK(ce.value().item() == doctest::Approx(std::log(5.0)).epsilon(1e-15));
}

TEST_CASE("cross entropy rejects out-of-range labels with a usable message") {
  Array logits({2, 5});
  try {
    (void)cross_entropy_nats(DiffValue::constant(logits), {1, 7});
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("7") != std::string::npos);
    CHECK(msg.find("[0,5)") != std::string::npos);
  }
}

TEST_CASE("forward and backward are bit-identical across repeated runs") {
  auto run = [] {
    Rng rng(derive_seed(11, "determinism"));
    const MlpSpec spec = MlpSpec::feed_forward(6, {8, 8}, 3);
    auto params = init_mlp_params(spec, rng);
    const Array x = normal_array(rng, {5, 6});
    std::vector<int> labels = {0, 2, 1, 2, 0};
    auto loss = cross_entropy_nats(mlp_forward(spec, params, DiffValue::constant(x)), labels);
    auto grads = grad(loss, params);
    std::vector<double> flat = {loss.value().item()};
    for (const auto& g : grads)
      for (double v : g.value().values()) flat.push_back(v);
    return flat;
  };
  const auto first = run();
  const auto second = run();
  REQUIRE(first.size() == second.size());
  CHECK(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)) == 0);
}

TEST_CASE("array rank-2 accessors and item() enforce their contracts") {
  Array v({3}, {1, 2, 3});
  CHECK_THROWS_AS((void)v.rows(), ShapeError);
  CHECK_THROWS_AS((void)v.item(), ShapeError);
  CHECK(Array::scalar(4.5).item() == 4.5);
  Array m({2, 3});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.shape_str() == "[2,3]");

  Array y({2}, {1.0, 2.0});
  axpy_inplace(y, 0.5, Array({2}, {4.0, -2.0}));
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 1.0);
}

TEST_CASE("rng streams are deterministic, bounded, and label-separated") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(13) < 13);
  }

  // Box-Muller: moments sanity on a long stream.
  Rng n(3);
  double m1 = 0.0, m2 = 0.0;
  const int kDraws = 20000;
  for (int i = 0; i < kDraws; ++i) {
    const double z = n.normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= kDraws;
  m2 /= kDraws;
  CHECK(std::abs(m1) < 0.03);
  CHECK(std::abs(m2 - 1.0) < 0.05);

  Rng p(9);
  auto perm = p.permutation(10);
  std::vector<bool> seen(10, false);
  for (int v : perm) {
    REQUIRE(v >= 0);
    REQUIRE(v < 10);
    CHECK_FALSE(seen[static_cast<size_t>(v)]);
    seen[static_cast<size_t>(v)] = true;
  }

  CHECK(derive_seed(1, "probe") != derive_seed(1, "div:synth"));
  CHECK(derive_seed(1, "probe") != derive_seed(2, "probe"));
  CHECK(derive_seed(1, "probe") == derive_seed(1, "probe"));
}

TEST_CASE("param vector: layout round trip and flat order") {
  Array w({2, 3}, {1, 2, 3, 4, 5, 6});
  Array b({3}, {7, 8, 9});
  auto pv = ParamVector::from_named({{"layer0.weight", w}, {"layer0.bias", b}});
  REQUIRE(pv.size() == 9);
  CHECK(pv.layout()[0].name == "layer0.weight");
  CHECK(pv.layout()[0].offset == 0);
  CHECK(pv.layout()[1].offset == 6);
  CHECK(pv.tensor(1).values() == b.values());
  auto leaves = pv.to_leaves();
  REQUIRE(leaves.size() == 2);
  CHECK(leaves[0].requires_grad());
  CHECK(leaves[0].value().values() == w.values());
}

TEST_CASE("param vector rejects layouts that do not tile the values") {
  std::vector<ParamDescriptor> overlap = {{"a", {2}, 0}, {"b", {2}, 1}};
  CHECK_THROWS_AS(ParamVector(overlap, std::vector<double>(3, 0.0)), ContractError);
  std::vector<ParamDescriptor> gap = {{"a", {2}, 0}, {"b", {2}, 3}};
  CHECK_THROWS_AS(ParamVector(gap, std::vector<double>(5, 0.0)), ContractError);
  std::vector<ParamDescriptor> short_cover = {{"a", {2}, 0}};
  CHECK_THROWS_AS(ParamVector(short_cover, std::vector<double>(3, 0.0)), ContractError);
}

TEST_CASE("param vector serialization round trips bitwise") {
  Rng rng(derive_seed(5, "pv"));
  auto pv = ParamVector::from_named({{"w", normal_array(rng, {4, 3})},
                                     {"b", normal_array(rng, {3})},
                                     {"head.weight", normal_array(rng, {3, 2})}});
  std::stringstream ss;
  pv.save(ss);
  auto back = ParamVector::load(ss);
  CHECK(back == pv);
  CHECK(back.content_hash() == pv.content_hash());

  const auto path = std::filesystem::temp_directory_path() / "divlab_test_pv.dvpv";
  pv.save_file(path);
  auto from_file = ParamVector::load_file(path);
  CHECK(from_file == pv);
  std::filesystem::remove(path);
}

TEST_CASE("param vector byte layout is pinned") {
  auto pv = ParamVector::from_named({{"w", Array({2}, {1.0, -2.5})}});
  std::stringstream ss;
  pv.save(ss);
  const std::string bytes = ss.str();

  const unsigned char expect[] = {
      'D', 'V', 'P', 'V',
      1, 0, 0, 0,              // version
      1, 0, 0, 0,              // descriptor count
      1, 0, 0, 0,              // name length
      'w',
      1, 0, 0, 0, 0, 0, 0, 0,  // rank
      2, 0, 0, 0, 0, 0, 0, 0,  // dim 0
      0, 0, 0, 0, 0, 0, 0xF0, 0x3F,  // 1.0
      0, 0, 0, 0, 0, 0, 0x04, 0xC0,  // -2.5
  };
  REQUIRE(bytes.size() == sizeof(expect));
  CHECK(std::memcmp(bytes.data(), expect, sizeof(expect)) == 0);
}

TEST_CASE("param vector load rejects corrupt streams") {
  auto pv = ParamVector::from_named({{"w", Array({2}, {1.0, 2.0})}});
  std::stringstream ok;
  pv.save(ok);
  std::string bytes = ok.str();

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream in(bad);
    CHECK_THROWS_AS((void)ParamVector::load(in), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;  // unsupported version
    std::stringstream in(bad);
    CHECK_THROWS_AS((void)ParamVector::load(in), FormatError);
  }
  {
    std::stringstream in(bytes.substr(0, bytes.size() - 4));  // truncated values
    CHECK_THROWS_AS((void)ParamVector::load(in), FormatError);
  }
  CHECK_THROWS_AS((void)ParamVector::load_file("/nonexistent/divlab.dvpv"), MissingInputError);
}

TEST_CASE("content hash tracks name and value changes") {
  auto base = ParamVector::from_named({{"w", Array({2}, {1.0, 2.0})}});
  auto renamed = ParamVector::from_named({{"v", Array({2}, {1.0, 2.0})}});
  auto perturbed = ParamVector::from_named({{"w", Array({2}, {1.0, 2.0000000001})}});
  CHECK(base.content_hash() != renamed.content_hash());
  CHECK(base.content_hash() != perturbed.content_hash());
  CHECK(base.content_hash_hex().size() == 16);
}

TEST_CASE("mlp spec accounting and forward shapes") {
  const MlpSpec probe = MlpSpec::feature_extractor(16, {64, 64});
  CHECK(probe.input_dim() == 16);
  CHECK(probe.output_dim() == 64);
  CHECK(probe.param_count() == 16 * 64 + 64 + 64 * 64 + 64);
  const auto names = mlp_param_names(probe);
  REQUIRE(names.size() == 4);
  CHECK(names[0] == "layer0.weight");
  CHECK(names[3] == "layer1.bias");

  Rng rng(1);
  auto params = init_mlp_params(probe, rng);
  Array x({7, 16});
  for (auto& v : x.values()) v = rng.normal();
  auto y = mlp_forward(probe, params, DiffValue::constant(x));
  CHECK(y.value().rows() == 7);
  CHECK(y.value().cols() == 64);
  for (double v : y.value().values()) CHECK(v >= 0.0);  // relu output

  // biases start at zero, weights scaled-normal
  CHECK(params[1].value().values() == std::vector<double>(64, 0.0));
}
