#include <doctest.h>

#include <cmath>

#include "neurodecode/gradcheck.hpp"
#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"

using namespace neurodecode;

namespace {

// Scalar probe: weight op output by a fixed random tensor so the upstream
// gradient is non-uniform, then reduce.
Tensor weighted_sum(const Tensor& y, uint64_t seed) {
  RngStream rng(seed);
  Tensor w = Tensor::uniform(y.shape(), -1.0, 1.0, rng, y.dtype());
  return ops::sum_all(ops::mul(y, w));
}

Tensor random_f64(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngStream rng(seed);
  return Tensor::uniform(std::move(shape), lo, hi, rng, Dtype::f64);
}

}  // namespace

TEST_CASE("closed-form sum of squares") {
  Tensor x = Tensor::from(std::vector<double>{1.0, 2.0}, {2}, Dtype::f64);
  const double err = gradient_check(
      [](const Tensor& v) { return ops::sum_all(ops::mul(v, v)); }, x, 1e-6);
  CHECK(err <= 1e-8);
}

TEST_CASE("linear function is exact for central differences") {
  Tensor x = random_f64({5}, 21);
  const double err = gradient_check(
      [](const Tensor& v) { return ops::sum_all(ops::scalar_mul(v, 3.0)); }, x, 1e-5);
  CHECK(err <= 1e-10);
}

TEST_CASE("matmul gradients vs finite differences") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Tensor a = random_f64({4, 3}, seed);
    Tensor b = random_f64({3, 5}, seed + 100);
    const double err_a = gradient_check(
        [&](const Tensor& v) { return weighted_sum(ops::matmul(v, b), 7); }, a);
    CHECK(err_a <= 1e-6);
    const double err_b = gradient_check(
        [&](const Tensor& v) { return weighted_sum(ops::matmul(a, v), 7); }, b);
    CHECK(err_b <= 1e-6);
  }
}

TEST_CASE("batched and shared-weight matmul gradients") {
  Tensor a = random_f64({2, 3, 4}, 5);
  Tensor b2 = random_f64({4, 6}, 6);
  CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::matmul(v, b2), 8); }, a) <= 1e-6);
  CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::matmul(a, v), 8); }, b2) <= 1e-6);

  Tensor b3 = random_f64({2, 4, 6}, 9);
  CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::matmul(v, b3), 8); }, a) <= 1e-6);
  CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::matmul(a, v), 8); }, b3) <= 1e-6);
}

TEST_CASE("silu gradient at 1 and random shapes") {
  Tensor one = Tensor::from(std::vector<double>{1.0}, {1}, Dtype::f64);
  CHECK(gradient_check([](const Tensor& v) { return ops::sum_all(ops::silu(v)); }, one) <= 1e-6);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({3, 4}, seed, -3.0, 3.0);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::silu(v), seed); }, x) <= 1e-4);
  }
}

TEST_CASE("elementwise and reduction primitive gradients") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 5}, seed * 3 + 1, -2.0, 2.0);
    Tensor other = random_f64({2, 5}, seed * 3 + 2);
    Tensor bias = random_f64({5}, seed * 3 + 3);

    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::add(v, other), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::add(v, bias), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::add(x, v), seed); }, bias) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::mul(v, other), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::mul(x, v), seed); }, bias) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::exp(ops::scalar_mul(v, 0.5)), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::sum_last(v), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::transpose_last(v), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::reshape(v, {5, 2}), seed); }, x) <= 1e-4);
  }
}

TEST_CASE("permute and mask gradients") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 3, 2, 2}, seed + 40);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::permute_0213(v), seed); }, x) <= 1e-4);

    Tensor rows = random_f64({2, 4, 3}, seed + 80);
    Tensor mask = Tensor::zeros({2, 4}, Dtype::f64);
    RngStream mr(seed);
    for (int64_t i = 0; i < 8; ++i) mask.set(i, mr.uniform() < 0.7 ? 1.0 : 0.0);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::mask_rows(v, mask), seed); }, rows) <= 1e-4);
  }
}

TEST_CASE("glu gradient") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({3, 8}, seed + 200, -2.0, 2.0);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::glu(v), seed); }, x) <= 1e-6);
  }
}

TEST_CASE("layer_norm gradients for x, gamma, beta") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({3, 8}, seed + 300, -2.0, 2.0);
    Tensor gamma = random_f64({8}, seed + 301, 0.5, 1.5);
    Tensor beta = random_f64({8}, seed + 302);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::layer_norm(v, gamma, beta), seed); }, x) <= 1e-5);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::layer_norm(x, v, beta), seed); }, gamma) <= 1e-5);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::layer_norm(x, gamma, v), seed); }, beta) <= 1e-5);
  }
}

TEST_CASE("softmax and log_softmax gradients") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 6}, seed + 400, -2.0, 2.0);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::softmax(v), seed); }, x) <= 1e-5);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::log_softmax(v), seed); }, x) <= 1e-6);
  }
}

TEST_CASE("depthwise conv gradients") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 7, 3}, seed + 500);
    Tensor k = random_f64({5, 3}, seed + 501);
    Tensor b = random_f64({3}, seed + 502);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::depthwise_conv1d(v, k, b), seed); }, x) <= 1e-5);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::depthwise_conv1d(x, v, b), seed); }, k) <= 1e-5);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::depthwise_conv1d(x, k, v), seed); }, b) <= 1e-5);
  }
  // Kernel longer than the sequence: zero padding extends.
  Tensor x = random_f64({1, 4, 2}, 600);
  Tensor k = random_f64({9, 2}, 601);
  CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::depthwise_conv1d(v, k, Tensor()), 9); }, x) <= 1e-5);
}

TEST_CASE("unfold gradient") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 9, 3}, seed + 700);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(ops::unfold_patches(v, 4, 2), seed); }, x) <= 1e-5);
  }
}

TEST_CASE("batch_norm train-mode gradient over masked positions") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor x = random_f64({2, 5, 3}, seed + 800);
    Tensor gamma = random_f64({3}, seed + 801, 0.5, 1.5);
    Tensor beta = random_f64({3}, seed + 802);
    Tensor mask = Tensor::zeros({2, 5}, Dtype::f64);
    for (int64_t i = 0; i < 10; ++i) mask.set(i, i % 4 == 3 ? 0.0 : 1.0);

    auto run = [&](const Tensor& xin, const Tensor& g, const Tensor& b) {
      Tensor rm = Tensor::zeros({3}, Dtype::f64);
      Tensor rv = Tensor::full({3}, 1.0, Dtype::f64);
      int64_t seen = 0;
      return ops::batch_norm_1d(xin, g, b, mask, rm, rv, seen, Mode::kTrain);
    };
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(run(v, gamma, beta), seed); }, x) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(run(x, v, beta), seed); }, gamma) <= 1e-4);
    CHECK(gradient_check([&](const Tensor& v) { return weighted_sum(run(x, gamma, v), seed); }, beta) <= 1e-4);
  }
}

TEST_CASE("batch_norm eval-mode gradient uses running stats") {
  Tensor x = random_f64({2, 4, 3}, 900);
  Tensor gamma = random_f64({3}, 901, 0.5, 1.5);
  Tensor beta = random_f64({3}, 902);
  Tensor mask = Tensor::full({2, 4}, 1.0, Dtype::f64);
  Tensor rm = random_f64({3}, 903, -0.5, 0.5);
  Tensor rv = random_f64({3}, 904, 0.5, 2.0);
  int64_t seen = 0;
  CHECK(gradient_check(
            [&](const Tensor& v) {
              Tensor rm2 = rm.clone(), rv2 = rv.clone();
              return weighted_sum(
                  ops::batch_norm_1d(v, gamma, beta, mask, rm2, rv2, seen, Mode::kEval), 11);
            },
            x) <= 1e-5);
}

TEST_CASE("session_linear routes gradients per session") {
  Tensor x = random_f64({2, 3, 4}, 1000);
  std::vector<Tensor> ws{random_f64({4, 4}, 1001), random_f64({4, 4}, 1002)};
  std::vector<Tensor> bs{random_f64({4}, 1003), random_f64({4}, 1004)};
  std::vector<int> ids{1, 0};
  for (auto& w : ws) w.set_requires_grad(true);
  for (auto& b : bs) b.set_requires_grad(true);

  CHECK(gradient_check(
            [&](const Tensor& v) { return weighted_sum(ops::session_linear(v, ids, ws, bs), 3); },
            x) <= 1e-5);
  CHECK(gradient_check(
            [&](const Tensor& v) {
              std::vector<Tensor> w2{v, ws[1]};
              return weighted_sum(ops::session_linear(x, ids, w2, bs), 3);
            },
            ws[0]) <= 1e-5);
  CHECK(gradient_check(
            [&](const Tensor& v) {
              std::vector<Tensor> b2{bs[0], v};
              return weighted_sum(ops::session_linear(x, ids, ws, b2), 3);
            },
            bs[1]) <= 1e-5);

  // A batch with only session 0 must leave session 1 parameter grads empty.
  for (auto& w : ws) w.clear_grad();
  for (auto& b : bs) b.clear_grad();
  std::vector<int> only0{0, 0};
  Tensor xx = x.clone().set_requires_grad(true);
  Tensor loss = ops::sum_all(ops::session_linear(xx, only0, ws, bs));
  loss.backward();
  CHECK(ws[0].grad().defined());
  CHECK_FALSE(ws[1].grad().defined());
}

TEST_CASE("gradient_check flags non-finite intermediates with the op name") {
  Tensor x = Tensor::from(std::vector<double>{-1.0}, {1}, Dtype::f64);
  try {
    gradient_check(
        [](const Tensor& v) {
          // log of exp(v)-2 < 0 -> NaN inside, via elementwise trick
          Tensor bad = ops::exp(ops::scalar_mul(v, 1e6));  // overflow to inf
          return ops::sum_all(bad);
        },
        Tensor::from(std::vector<double>{800.0}, {1}, Dtype::f64));
    FAIL("expected non-finite diagnostic");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
}
