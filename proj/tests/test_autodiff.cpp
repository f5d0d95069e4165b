#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "seqcount/gradcheck.hpp"
#include "seqcount/ops.hpp"
#include "seqcount/rng.hpp"

using namespace seqcount;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Checks w'Ju for a random direction u and cotangent w: the analytic side
// comes from one backward pass of loss = sum(f(x) * w), the numeric side
// from central differences along u applied to every input jointly.
void check_vjp(const std::function<Tensor(const std::vector<Tensor>&)>& op,
               std::vector<Tensor> inputs, Rng& rng, double tol = 1e-5) {
  const double h = 1e-5;
  std::vector<std::vector<double>> dirs;
  for (auto& t : inputs) {
    std::vector<double> u(t.numel());
    for (auto& x : u) x = rng.uniform(-1.0, 1.0);
    dirs.push_back(std::move(u));
  }

  Tensor probe = op(inputs);
  Tensor w = random_tensor(probe.shape(), rng, -1.0, 1.0, /*requires_grad=*/false);

  double analytic = 0.0;
  {
    for (auto& t : inputs) t.zero_grad();
    ad::Graph g;
    ad::GraphScope scope(g);
    Tensor loss = ad::sum(ad::mul(op(inputs), w));
    g.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].has_grad()) continue;
      for (long j = 0; j < inputs[i].numel(); ++j)
        analytic += inputs[i].grad()[j] * dirs[i][j];
    }
  }

  auto eval = [&]() {
    ad::NoGradGuard ng;
    return ad::sum(ad::mul(op(inputs), w)).item();
  };
  auto shift = [&](double s) {
    for (size_t i = 0; i < inputs.size(); ++i)
      for (long j = 0; j < inputs[i].numel(); ++j) inputs[i].data()[j] += s * dirs[i][j];
  };
  shift(h);
  const double fp = eval();
  shift(-2 * h);
  const double fm = eval();
  shift(h);
  const double numeric = (fp - fm) / (2 * h);

  const double rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  CHECK(rel <= tol);
}

}  // namespace

TEST_CASE("every primitive's VJP matches central finite differences") {
  Rng rng(12345);
  const int trials = 100;

  for (int t = 0; t < trials; ++t) {
    const int m = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6), n = rng.uniform_int(1, 6);
    check_vjp([](const std::vector<Tensor>& in) { return ad::matmul(in[0], in[1]); },
              {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, rng);
  }
  for (int t = 0; t < trials; ++t) {
    const int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(3, 8), w = rng.uniform_int(3, 8);
    check_vjp(
        [](const std::vector<Tensor>& in) {
          return ad::conv2d(in[0], in[1], in[2], /*stride=*/2, /*pad=*/1);
        },
        {random_tensor({cin, h, w}, rng), random_tensor({cout, cin, 3, 3}, rng),
         random_tensor({cout}, rng)},
        rng);
  }
  for (int t = 0; t < trials; ++t) {
    const int n = rng.uniform_int(1, 8);
    check_vjp([](const std::vector<Tensor>& in) { return ad::add(in[0], in[1]); },
              {random_tensor({n}, rng), random_tensor({n}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::add(in[0], in[1]); },
              {random_tensor({1}, rng), random_tensor({n, 2}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::mul(in[0], in[1]); },
              {random_tensor({n}, rng), random_tensor({n}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::mul(in[0], in[1]); },
              {random_tensor({n, 3}, rng), random_tensor({1}, rng)}, rng);
  }
  for (int t = 0; t < trials; ++t) {
    const int n = rng.uniform_int(1, 10);
    check_vjp([](const std::vector<Tensor>& in) { return ad::tanh(in[0]); },
              {random_tensor({n}, rng, -2.0, 2.0)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::sigmoid(in[0]); },
              {random_tensor({n}, rng, -2.0, 2.0)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::exp(in[0]); },
              {random_tensor({n}, rng, -2.0, 2.0)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::log(in[0]); },
              {random_tensor({n}, rng, 0.2, 3.0)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::sum(in[0]); },
              {random_tensor({n, 2}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::mean(in[0]); },
              {random_tensor({n, 3}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::softmax(in[0]); },
              {random_tensor({n}, rng, -3.0, 3.0)}, rng);
  }
  for (int t = 0; t < trials; ++t) {
    const int rows_a = rng.uniform_int(1, 4), rows_b = rng.uniform_int(1, 4);
    const int cols = rng.uniform_int(1, 4);
    check_vjp([](const std::vector<Tensor>& in) { return ad::concat(in, 0); },
              {random_tensor({rows_a, cols}, rng), random_tensor({rows_b, cols}, rng)}, rng);
    check_vjp([](const std::vector<Tensor>& in) { return ad::concat(in, 1); },
              {random_tensor({cols, rows_a}, rng), random_tensor({cols, rows_b}, rng)}, rng);
    check_vjp(
        [rows_a, cols](const std::vector<Tensor>& in) {
          return ad::reshape(in[0], {cols, rows_a});
        },
        {random_tensor({rows_a, cols}, rng)}, rng);
  }
  for (int t = 0; t < trials; ++t) {
    const int c = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const int oh = rng.uniform_int(1, 8), ow = rng.uniform_int(1, 8);
    check_vjp(
        [oh, ow](const std::vector<Tensor>& in) { return ad::upsample_nearest(in[0], oh, ow); },
        {random_tensor({c, h, w}, rng)}, rng);
  }
}

TEST_CASE("softmax identities") {
  const Tensor x = Tensor::from_values({2}, {0.0, std::log(2.0)});
  const Tensor y = ad::softmax(x);
  CHECK(y[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  CHECK(ad::tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const int n = rng.uniform_int(1, 12);
    Tensor v = Tensor::zeros({n});
    for (long i = 0; i < n; ++i) v.data()[i] = rng.uniform(-30.0, 30.0);
    const Tensor p = ad::softmax(v);
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
      CHECK(p[i] >= 0.0);
      total += p[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);

    // Shift invariance.
    const double shift = rng.uniform(-50.0, 50.0);
    Tensor v2 = Tensor::zeros({n});
    for (long i = 0; i < n; ++i) v2.data()[i] = v[i] + shift;
    const Tensor p2 = ad::softmax(v2);
    for (long i = 0; i < n; ++i) CHECK(std::abs(p[i] - p2[i]) <= 1e-12);
  }
}

TEST_CASE("backward basics") {
  {
    Tensor x = Tensor::scalar(0.0, true);
    ad::Graph g;
    ad::GraphScope scope(g);
    Tensor loss = ad::tanh(x);
    g.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  {
    Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    ad::Graph g;
    ad::GraphScope scope(g);
    g.backward(ad::sum(x));
    for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
  }
  {
    // Softmax cross-entropy at logits [0,0], target class 0: grad = p - y.
    Tensor logits = Tensor::from_values({2}, {0.0, 0.0}, true);
    ad::Graph g;
    ad::GraphScope scope(g);
    Tensor onehot = Tensor::from_values({2}, {1.0, 0.0});
    Tensor loss = ad::neg(ad::log(ad::sum(ad::mul(ad::softmax(logits), onehot))));
    g.backward(loss);
    CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("gradient accumulation is linear over paths") {
  Rng rng(77);
  Tensor x = random_tensor({5}, rng);

  auto grad_of = [&x](const std::function<Tensor()>& f) {
    x.zero_grad();
    ad::Graph g;
    ad::GraphScope scope(g);
    g.backward(f());
    return x.grad();
  };

  const auto ga = grad_of([&] { return ad::sum(ad::tanh(x)); });
  const auto gb = grad_of([&] { return ad::sum(ad::mul(x, x)); });
  const auto gsum = grad_of([&] { return ad::add(ad::sum(ad::tanh(x)), ad::sum(ad::mul(x, x))); });
  for (size_t i = 0; i < ga.size(); ++i)
    CHECK(gsum[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-14));
}

TEST_CASE("op errors carry the op name and shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  try {
    ad::matmul(a, b);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,5)") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
  CHECK_THROWS_AS(ad::log(Tensor::from_values({2}, {1.0, 0.0})), std::domain_error);
  CHECK_THROWS_AS(ad::log(Tensor::from_values({1}, {-2.0})), std::domain_error);

  // Non-scalar loss rejected.
  Tensor x = Tensor::zeros({3}, true);
  ad::Graph g;
  ad::GraphScope scope(g);
  Tensor y = ad::tanh(x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("tensors from a dead graph act as constants in a new one") {
  Tensor x = Tensor::scalar(1.5, true);
  Tensor cached;
  {
    ad::Graph g;
    ad::GraphScope scope(g);
    cached = ad::tanh(x);
  }
  ad::Graph g2;
  ad::GraphScope scope(g2);
  x.zero_grad();
  Tensor loss = ad::sum(ad::mul(cached, cached));
  g2.backward(loss);
  // No path to x through the cached value.
  for (double v : x.grad()) CHECK(v == 0.0);
}

TEST_CASE("forward_primitive dispatches every kind") {
  Rng rng(5);
  CHECK(ad::forward_primitive(ad::OpKind::tanh, {Tensor::scalar(0.0)}).item() == 0.0);
  CHECK(ad::forward_primitive(ad::OpKind::sum, {Tensor::from_values({3}, {1, 2, 3})}).item() == 6.0);
  ad::PrimitiveAttrs attrs;
  attrs.new_shape = {4};
  CHECK(ad::forward_primitive(ad::OpKind::reshape, {Tensor::zeros({2, 2})}, attrs).shape() ==
        ad::Shape{4});
  attrs = {};
  attrs.out_h = 2;
  attrs.out_w = 2;
  CHECK(ad::forward_primitive(ad::OpKind::upsample_nearest, {Tensor::zeros({1, 4, 4})}, attrs)
            .shape() == ad::Shape{1, 2, 2});
  CHECK_THROWS_AS(ad::forward_primitive(ad::OpKind::matmul, {Tensor::zeros({2, 2})}),
                  std::invalid_argument);
}

TEST_CASE("grad_check oracle") {
  {
    // f(x) = x^2 at x = 3.
    Tensor x = Tensor::scalar(3.0, true);
    auto f = [&] { return ad::mul(x, x); };
    const auto report = ad::grad_check(f, {{"x", x}}, 1e-5, 1e-6);
    CHECK(report.pass);
    CHECK(report.params[0].max_rel_err <= 1e-6);
  }
  {
    // Constant computation: both sides zero.
    Tensor x = Tensor::scalar(2.0, true);
    auto f = [&] { return ad::sum(ad::mul(x, Tensor::scalar(0.0))); };
    const auto report = ad::grad_check(f, {{"x", x}}, 1e-5, 1e-9);
    CHECK(report.pass);
  }
  {
    // Non-deterministic computation is rejected.
    Tensor x = Tensor::scalar(1.0, true);
    int calls = 0;
    auto f = [&]() mutable {
      ++calls;
      return ad::add_scalar(x, static_cast<double>(calls));
    };
    CHECK_THROWS_AS(ad::grad_check(f, {{"x", x}}, 1e-5, 1e-6), std::runtime_error);
  }
}
