#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "timeprompt/kernels.hpp"
#include "timeprompt/tensor.hpp"

using namespace timeprompt;
using oracle::random_tensor;
using oracle::to_vec;

namespace {

Tensor mat(Shape s, std::vector<double> v) { return Tensor::constant(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("matmul examples") {
  auto eye = mat({2, 2}, {1, 0, 0, 1});
  auto b = mat({2, 2}, {3, 4, 5, 6});
  CHECK(to_vec(matmul(eye, b)) == std::vector<double>{3, 4, 5, 6});

  auto a = mat({2, 2}, {1, 2, 3, 4});
  auto c = mat({2, 2}, {5, 6, 7, 8});
  CHECK(to_vec(matmul(a, c)) == std::vector<double>{19, 22, 43, 50});

  Rng rng(1);
  auto z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 2}, rng));
  CHECK(to_vec(z) == std::vector<double>(4, 0.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul matches loop oracle, batched and broadcast") {
  Rng rng(2);
  auto a = random_tensor({3, 4, 5}, rng);
  auto b = random_tensor({5, 6}, rng);
  auto c = to_vec(matmul(a, b));
  auto av = to_vec(a);
  auto bv = to_vec(b);
  for (std::size_t g = 0; g < 3; ++g) {
    std::vector<double> ag(av.begin() + static_cast<long>(g * 20), av.begin() + static_cast<long>((g + 1) * 20));
    auto ref = oracle::matmul(ag, bv, 4, 5, 6);
    std::vector<double> got(c.begin() + static_cast<long>(g * 24), c.begin() + static_cast<long>((g + 1) * 24));
    CHECK(oracle::max_abs_diff(ref, got) < 1e-12);
  }
}

TEST_CASE("matmul is bilinear") {
  Rng rng(3);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({3, 5}, rng);
  auto lhs = to_vec(matmul(scale(a, 2.5), b));
  auto rhs = to_vec(scale(matmul(a, b), 2.5));
  CHECK(oracle::max_abs_diff(lhs, rhs) < 1e-13);
}

TEST_CASE("softmax examples") {
  auto s = to_vec(softmax(mat({3}, {0, 0, 0}), 0));
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto big = to_vec(softmax(mat({2}, {1000, 1000}), 0));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);

  auto g = to_vec(softmax(mat({3}, {20, 0, 0}), 0));
  const double e = std::exp(-20.0);
  CHECK(std::abs(g[0] - 1.0 / (1.0 + 2.0 * e)) < 1e-15);
  CHECK(std::abs(g[0] - (1.0 - 2.0 * e)) < 1e-15);
  CHECK(std::abs(g[1] - e) < 1e-15);
}

TEST_CASE("softmax sums to one along any axis") {
  Rng rng(4);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto x = random_tensor({3, 4, 5}, rng, 30.0);
    auto y = to_vec(softmax(x, axis));
    auto sums = to_vec(sum(softmax(x, axis), axis));
    for (double v : y) CHECK(v >= 0.0);
    for (double v : sums) CHECK(std::abs(v - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax rejects an empty axis") {
  CHECK_THROWS(softmax(Tensor::zeros({2, 0}), 1));
}

TEST_CASE("backward examples") {
  {
    auto x = Tensor::parameter({3}, {1, 2, 3});
    Tape tape;
    tape.backward(sum_all(x));
    CHECK(to_vec(Tensor::constant({3}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{1, 1, 1});
  }
  {
    auto x = Tensor::parameter({3}, {1, 2, 3});
    Tape tape;
    tape.backward(sum_all(mul(x, x)));
    std::vector<double> g(x.grad().begin(), x.grad().end());
    CHECK(g == std::vector<double>{2, 4, 6});
  }
  {
    auto w = Tensor::parameter({3}, {1, 2, 3});
    auto frozen = Tensor::constant({3}, {4, 5, 6});
    Tape tape;
    tape.backward(sum_all(mul(w, frozen)));
    CHECK_FALSE(frozen.has_grad());
    CHECK(w.has_grad());
  }
}

TEST_CASE("second backward without reset is an error") {
  auto x = Tensor::parameter({2}, {1, 2});
  Tape tape;
  auto loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), GraphError);
  tape.reset();
  auto again = sum_all(mul(x, x));
  CHECK_NOTHROW(tape.backward(again));
}

TEST_CASE("shared node gradient equals the sum over duplicated paths") {
  Rng rng(5);
  auto x = random_tensor({4}, rng, 1.0, true);
  auto w1 = random_tensor({4}, rng);
  auto w2 = random_tensor({4}, rng);
  std::vector<double> shared;
  {
    Tape tape;
    auto h = mul(x, x);  // shared by both branches
    tape.backward(add(sum_all(mul(h, w1)), sum_all(mul(h, w2))));
    shared.assign(x.grad().begin(), x.grad().end());
  }
  x.clear_grad();
  auto x2 = Tensor::parameter({4}, to_vec(x));
  std::vector<double> dup;
  {
    Tape tape;
    auto loss = add(sum_all(mul(mul(x2, x2), w1)), sum_all(mul(mul(x2, x2), w2)));
    tape.backward(loss);
    dup.assign(x2.grad().begin(), x2.grad().end());
  }
  CHECK(oracle::max_abs_diff(shared, dup) < 1e-14);
}

TEST_CASE("finite_diff_check examples") {
  Rng rng(6);
  auto x = random_tensor({4}, rng);
  CHECK(finite_diff_check([](const Tensor& p) { return sum_all(mul(p, p)); }, x) <= 1e-6);
  CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
  CHECK_THROWS(finite_diff_check([](const Tensor& p) { return mul(p, p); }, x));
}

TEST_CASE("finite differences agree for every differentiable op") {
  Rng rng(7);
  const double tol = 1e-4;
  auto w3 = random_tensor({3}, rng);
  auto w6 = random_tensor({2, 3}, rng);
  auto x = random_tensor({2, 3}, rng);
  auto weigh = [&](const Tensor& t) {
    Rng r(99);
    return sum_all(mul(t, random_tensor(t.shape(), r)));
  };
  SUBCASE("add, sub, mul with broadcasting") {
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(add(p, w3)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(add(w6, p)); }, w3) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(sub(w6, p)); }, w3) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(sub(p, w6)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(mul(p, w3)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(mul(w6, p)); }, w3) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(mul(w6, p)); }, Tensor::constant({1}, {0.7})) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(scale(p, -1.5)); }, x) < tol);
  }
  SUBCASE("matmul, both operands, batched") {
    auto b = random_tensor({3, 4}, rng);
    auto a3 = random_tensor({2, 2, 3}, rng);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(matmul(p, b)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(matmul(x, p)); }, b) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(matmul(a3, p)); }, b) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(matmul(p, b)); }, a3) < tol);
  }
  SUBCASE("shape ops") {
    auto t = random_tensor({2, 3, 4}, rng);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(transpose(p, 0, 2)); }, t) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(reshape(p, {4, 6})); }, t) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(concat({p, x, p}, 0)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(concat({p, p}, 1)); }, x) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(slice(p, 1, 1, 3)); }, t) < tol);
  }
  SUBCASE("reductions") {
    auto t = random_tensor({2, 3, 4}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      CHECK(finite_diff_check([&](const Tensor& p) { return weigh(sum(p, axis)); }, t) < tol);
      CHECK(finite_diff_check([&](const Tensor& p) { return weigh(mean(p, axis)); }, t) < tol);
    }
    CHECK(finite_diff_check([&](const Tensor& p) { return mean_all(mul(p, p)); }, t) < tol);
  }
  SUBCASE("softmax, layer norm, gelu") {
    auto t = random_tensor({3, 5}, rng, 2.0);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(softmax(p, 1)); }, t) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(softmax(p, 0)); }, t) < tol);
    auto gamma = random_tensor({5}, rng);
    auto beta = random_tensor({5}, rng);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(layer_norm(p, gamma, beta)); }, t) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(layer_norm(t, p, beta)); }, gamma) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(layer_norm(t, gamma, p)); }, beta) < tol);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(gelu(p)); }, t) < tol);
  }
  SUBCASE("dropout with a fixed seed, gather") {
    auto t = random_tensor({4, 5}, rng);
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(dropout(p, 0.3, 42, true)); }, t) < tol);
    const std::vector<std::size_t> idx{3, 0, 3, 1};
    CHECK(finite_diff_check([&](const Tensor& p) { return weigh(gather_rows(p, idx)); }, t) < tol);
  }
}

TEST_CASE("dropout: eval mode is identity, mask depends only on the seed") {
  Rng rng(8);
  auto x = random_tensor({100}, rng);
  CHECK(to_vec(dropout(x, 0.5, 1, false)) == to_vec(x));
  CHECK(to_vec(dropout(x, 0.5, 1, true)) == to_vec(dropout(x, 0.5, 1, true)));
  CHECK(to_vec(dropout(x, 0.5, 1, true)) != to_vec(dropout(x, 0.5, 2, true)));
  for (double v : to_vec(dropout(Tensor::full({100}, 1.0), 0.25, 3, true))) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
  }
}

TEST_CASE("forward ops on finite inputs stay finite") {
  Rng rng(9);
  auto x = random_tensor({4, 8}, rng, 50.0);
  auto g = Tensor::full({8}, 1.0);
  auto b = Tensor::zeros({8});
  for (const auto& y : {softmax(x, 1), layer_norm(x, g, b), gelu(x), matmul(x, transpose(x, 0, 1))}) {
    for (double v : y.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("mutating a non-leaf is refused") {
  auto x = Tensor::parameter({2}, {1, 2});
  Tape tape;
  auto y = mul(x, x);
  CHECK_THROWS(y.mutable_data());
}

TEST_CASE("parallel kernels agree bit-for-bit with the serial references") {
  Rng rng(10);
  using namespace kernels;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      GemmShape s{3, 3, 37, 29, 41, ta, tb, false};
      auto a = rng.normal_vector(s.batch * s.m * s.k, 0, 1);
      auto b = rng.normal_vector(s.b_batch * s.k * s.n, 0, 1);
      std::vector<double> c1(s.batch * s.m * s.n), c2(c1.size());
      gemm(a.data(), b.data(), c1.data(), s);
      gemm_serial(a.data(), b.data(), c2.data(), s);
      CHECK(c1 == c2);
    }
  }
  GemmShape big{4, 1, 64, 64, 64, false, false, false};
  auto a = rng.normal_vector(4 * 64 * 64, 0, 1);
  auto b = rng.normal_vector(64 * 64, 0, 1);
  std::vector<double> c1(4 * 64 * 64), c2(c1.size());
  gemm(a.data(), b.data(), c1.data(), big);
  gemm_serial(a.data(), b.data(), c2.data(), big);
  CHECK(c1 == c2);

  auto x = rng.normal_vector(300 * 70, 0, 3);
  std::vector<double> y1(x.size()), y2(x.size());
  softmax_rows(x.data(), y1.data(), 300, 70);
  softmax_rows_serial(x.data(), y2.data(), 300, 70);
  CHECK(y1 == y2);
  auto dy = rng.normal_vector(x.size(), 0, 1);
  std::vector<double> d1(x.size(), 0.0), d2(x.size(), 0.0);
  softmax_rows_backward(y1.data(), dy.data(), d1.data(), 300, 70);
  softmax_rows_backward_serial(y1.data(), dy.data(), d2.data(), 300, 70);
  CHECK(d1 == d2);
  gelu(x.data(), y1.data(), x.size());
  gelu_serial(x.data(), y2.data(), x.size());
  CHECK(y1 == y2);
}
