// Gradient rules checked against central differences evaluated by the 64-bit
// build of the engine.
#include <doctest.h>

#include <functional>
#include <cmath>
#include <random>

#include "mf/numeric/grad_check.hpp"
#include "mf/numeric/ops.hpp"

using namespace mf;

namespace {

struct OpCase {
  const char* name;
  // Builds a scalar from the perturbed input and fixed auxiliaries.
  std::function<Tensor(const Tensor&, std::mt19937_64&)> make;
  std::function<Shape(std::mt19937_64&)> shape;
};

std::size_t extent(std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(1, 8)(rng); }

// Weighted sum so that every output coordinate carries a distinct cotangent.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, Tensor::randn(y.shape(), rng)));
}

}  // namespace

TEST_CASE("every op matches central differences on random small tensors") {
  std::vector<OpCase> cases;
  auto mat_shape = [](std::mt19937_64& r) { return Shape{extent(r), extent(r)}; };
  auto cube_shape = [](std::mt19937_64& r) { return Shape{extent(r), extent(r), extent(r)}; };
  cases.push_back({"add", [](const Tensor& x, auto&) { return weighted(ops::add(x, ops::mul(x, x)), 1); }, mat_shape});
  cases.push_back({"sub", [](const Tensor& x, auto& r) { return weighted(ops::sub(Tensor::randn(x.shape(), r), x), 2); }, mat_shape});
  cases.push_back({"mul", [](const Tensor& x, auto& r) { return weighted(ops::mul(x, Tensor::randn(x.shape(), r)), 3); }, mat_shape});
  cases.push_back({"scale", [](const Tensor& x, auto&) { return weighted(ops::scale(x, -1.7), 4); }, mat_shape});
  cases.push_back({"scale_per_batch", [](const Tensor& x, auto& r) {
                     std::vector<Scalar> f(x.dim(0));
                     for (auto& v : f) v = std::normal_distribution<double>()(r);
                     return weighted(ops::scale_per_batch(x, f), 5);
                   }, cube_shape});
  cases.push_back({"add_rows", [](const Tensor& x, auto& r) {
                     auto v = Tensor::randn({x.dim(1)}, r);
                     return weighted(ops::mul(ops::add_rows(x, v), ops::add_rows(x, v)), 6);
                   }, mat_shape});
  cases.push_back({"mul_rows", [](const Tensor& x, auto& r) { return weighted(ops::mul_rows(x, Tensor::randn({x.dim(1)}, r)), 7); }, mat_shape});
  cases.push_back({"mul_rows/vector", [](const Tensor& v, auto& r) {
                     return weighted(ops::mul_rows(Tensor::randn({3, v.dim(0)}, r), v), 8);
                   }, [](auto& r) { return Shape{extent(r)}; }});
  cases.push_back({"add_per_batch", [](const Tensor& v, auto& r) {
                     auto x = Tensor::randn({v.dim(0), 3, v.dim(1)}, r);
                     return weighted(ops::mul(ops::add_per_batch(x, v), ops::add_per_batch(x, v)), 9);
                   }, mat_shape});
  cases.push_back({"mul_per_batch", [](const Tensor& x, auto& r) {
                     auto v = Tensor::randn({x.dim(0), x.dim(2)}, r);
                     return weighted(ops::mul_per_batch(x, v), 10);
                   }, cube_shape});
  cases.push_back({"mul_per_batch/vector", [](const Tensor& v, auto& r) {
                     auto x = Tensor::randn({v.dim(0), 4, v.dim(1)}, r);
                     return weighted(ops::mul_per_batch(x, v), 11);
                   }, mat_shape});
  cases.push_back({"matmul/lhs", [](const Tensor& x, auto& r) { return weighted(ops::matmul(x, Tensor::randn({x.dim(1), 5}, r)), 12); }, mat_shape});
  cases.push_back({"matmul/rhs", [](const Tensor& x, auto& r) { return weighted(ops::matmul(Tensor::randn({4, x.dim(0)}, r), x), 13); }, mat_shape});
  cases.push_back({"bmm", [](const Tensor& x, auto& r) {
                     auto b = Tensor::randn({x.dim(0), x.dim(2), 3}, r);
                     return weighted(ops::add(ops::sum(ops::bmm(x, b)), weighted(ops::bmm(x, b), 14)), 15);
                   }, cube_shape});
  cases.push_back({"bmm/rhs", [](const Tensor& x, auto& r) {
                     auto a = Tensor::randn({x.dim(0), 2, x.dim(1)}, r);
                     return weighted(ops::bmm(a, x), 16);
                   }, cube_shape});
  cases.push_back({"bmm_nt", [](const Tensor& x, auto& r) {
                     auto b = Tensor::randn({x.dim(0), 3, x.dim(2)}, r);
                     return weighted(ops::add(ops::bmm_nt(x, b), ops::bmm_nt(x, x).defined() ? ops::scale(ops::bmm_nt(x, b), 0.5) : Tensor()), 17);
                   }, cube_shape});
  cases.push_back({"bmm_nt/self", [](const Tensor& x, auto&) { return weighted(ops::bmm_nt(x, x), 18); }, cube_shape});
  cases.push_back({"linear", [](const Tensor& x, auto& r) {
                     auto w = Tensor::randn({x.dim(1), 4}, r);
                     auto b = Tensor::randn({4}, r);
                     return weighted(ops::linear(x, w, b), 19);
                   }, mat_shape});
  cases.push_back({"linear/weight", [](const Tensor& w, auto& r) {
                     auto x = Tensor::randn({2, 3, w.dim(0)}, r);
                     return weighted(ops::linear(x, w, Tensor()), 20);
                   }, mat_shape});
  cases.push_back({"linear/bias", [](const Tensor& b, auto& r) {
                     auto x = Tensor::randn({5, 3}, r);
                     auto w = Tensor::randn({3, b.dim(0)}, r);
                     return weighted(ops::mul(ops::linear(x, w, b), ops::linear(x, w, b)), 21);
                   }, [](auto& r) { return Shape{extent(r)}; }});
  cases.push_back({"reshape", [](const Tensor& x, auto&) { return weighted(ops::reshape(x, {x.numel()}), 22); }, mat_shape});
  cases.push_back({"permute", [](const Tensor& x, auto&) { return weighted(ops::permute(x, {2, 0, 1}), 23); }, cube_shape});
  cases.push_back({"transpose", [](const Tensor& x, auto&) { return weighted(ops::transpose(x, 0, 1), 24); }, mat_shape});
  cases.push_back({"concat", [](const Tensor& x, auto& r) {
                     auto other = Tensor::randn({x.dim(0), 2, x.dim(2)}, r);
                     return weighted(ops::concat({x, other, x}, 1), 25);
                   }, cube_shape});
  cases.push_back({"slice_last", [](const Tensor& x, auto&) {
                     const std::size_t d = x.shape().back();
                     return weighted(ops::slice_last(x, d / 2, d - d / 2), 26);
                   }, mat_shape});
  cases.push_back({"softmax", [](const Tensor& x, auto&) { return weighted(ops::softmax(x), 27); }, mat_shape});
  cases.push_back({"masked_softmax", [](const Tensor& x, auto& r) {
                     std::vector<std::size_t> counts(x.dim(0));
                     for (auto& c : counts) c = std::uniform_int_distribution<std::size_t>(0, x.dim(2))(r);
                     return weighted(ops::masked_softmax(x, counts), 28);
                   }, cube_shape});
  cases.push_back({"layer_norm", [](const Tensor& x, auto&) { return weighted(ops::layer_norm(x), 29); },
                   [](auto& r) { return Shape{extent(r), std::max<std::size_t>(4, extent(r))}; }});
  cases.push_back({"gelu", [](const Tensor& x, auto&) { return weighted(ops::gelu(x), 30); }, mat_shape});
  cases.push_back({"embedding", [](const Tensor& table, auto& r) {
                     std::vector<int> idx(6);
                     for (auto& i : idx) i = std::uniform_int_distribution<int>(0, static_cast<int>(table.dim(0)) - 1)(r);
                     return weighted(ops::embedding(table, idx), 31);
                   }, mat_shape});
  cases.push_back({"mean", [](const Tensor& x, auto&) { return ops::mean(ops::mul(x, x)); }, mat_shape});
  cases.push_back({"mse", [](const Tensor& x, auto& r) { return ops::mse(x, Tensor::randn(x.shape(), r)); }, mat_shape});
  cases.push_back({"cross_entropy", [](const Tensor& x, auto& r) {
                     std::vector<int> t(x.dim(0));
                     for (auto& v : t) v = std::uniform_int_distribution<int>(0, static_cast<int>(x.dim(1)) - 1)(r);
                     return ops::cross_entropy(x, t);
                   }, mat_shape});

  for (const auto& c : cases) {
    const std::string op_name = c.name;
    CAPTURE(op_name);
    for (int trial = 0; trial < 100; ++trial) {
      std::mt19937_64 shape_rng(1000 + trial);
      const Shape shape = c.shape(shape_rng);
      auto point = Tensor::randn(shape, shape_rng);
      const std::uint64_t aux_seed = 7 * trial + 1;
      auto report = grad_check(
          [&](const Tensor& x) {
            std::mt19937_64 aux(aux_seed);
            return c.make(x, aux);
          },
          point, {.eps = 1e-3});
      CAPTURE(trial);
      CHECK(report.max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("relu gradient away from the kink") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto point = Tensor::randn({5, 5}, rng);
    for (auto& v : point.values())
      if (std::abs(v) < 0.01) v = 0.5;
    auto report = grad_check([](const Tensor& x) { return weighted(ops::relu(x), 40); }, point);
    CHECK(report.max_relative_error <= 1e-4);
  }
}

TEST_CASE("grad_check on x^2 is exact to 1e-6") {
  auto report = grad_check([](const Tensor& x) { return ops::sum(ops::mul(x, x)); }, Tensor({1}, {3}),
                           {.eps = 1e-3});
  CHECK(report.max_relative_error <= 1e-6);
}

TEST_CASE("grad_check on softmax cross-entropy over 5 logits") {
  const int target[] = {2};
  auto report = grad_check([&](const Tensor& x) { return ops::cross_entropy(x, target); },
                           Tensor({1, 5}, {0.3, -1.2, 0.8, 2.0, -0.1}));
  CHECK(report.max_relative_error <= 1e-4);
  CHECK(report.exempted == 0);
}
