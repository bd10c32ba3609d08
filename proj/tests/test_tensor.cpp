#include <doctest.h>

#include <cmath>
#include <vector>

#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"
#include "neurodecode/tensor.hpp"

using namespace neurodecode;

TEST_CASE("tensor creation and shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3}, Dtype::f32);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dtype() == Dtype::f32);
  for (int64_t i = 0; i < 6; ++i) CHECK(t.at(i) == 0.0);

  Tensor f = Tensor::full({4}, 2.5, Dtype::f64);
  CHECK(f.at(3) == 2.5);

  Tensor id = Tensor::identity(3);
  CHECK(id.at(0) == 1.0);
  CHECK(id.at(1) == 0.0);
  CHECK(id.at(4) == 1.0);
}

TEST_CASE("from rejects mismatched value counts") {
  std::vector<double> v{1, 2, 3};
  CHECK_THROWS_AS(Tensor::from(v, {2, 2}), ShapeError);
}

TEST_CASE("matmul identity and hand-checked products") {
  std::vector<double> m{1, 2, 3, 4};
  Tensor a = Tensor::from(m, {2, 2}, Dtype::f64);
  Tensor out = ops::matmul(Tensor::identity(2, Dtype::f64), a);
  for (int64_t i = 0; i < 4; ++i) CHECK(out.at(i) == m[size_t(i)]);

  std::vector<double> row{1, 2}, col{3, 4};
  Tensor r = Tensor::from(row, {1, 2}, Dtype::f64);
  Tensor c = Tensor::from(col, {2, 1}, Dtype::f64);
  CHECK(ops::matmul(r, c).item() == 11.0);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("reshape is metadata-only and round-trips") {
  Tensor a = Tensor::from(std::vector<double>{1, 2, 3, 4, 5, 6}, {2, 3}, Dtype::f32);
  Tensor b = ops::reshape(a, {3, 2});
  CHECK(b.impl()->data.get() == a.impl()->data.get());  // shared buffer
  Tensor c = ops::reshape(b, {6});
  Tensor d = ops::reshape(c, {2, 3});
  for (int64_t i = 0; i < 6; ++i) CHECK(d.at(i) == a.at(i));
}

TEST_CASE("suffix broadcast add") {
  Tensor x = Tensor::from(std::vector<double>{1, 2, 3, 4, 5, 6}, {2, 3}, Dtype::f64);
  Tensor b = Tensor::from(std::vector<double>{10, 20, 30}, {3}, Dtype::f64);
  Tensor y = ops::add(x, b);
  CHECK(y.at(0) == 11.0);
  CHECK(y.at(5) == 36.0);
  CHECK_THROWS_AS(ops::add(x, Tensor::zeros({2}, Dtype::f64)), ShapeError);
}

TEST_CASE("silu values") {
  Tensor x = Tensor::from(std::vector<double>{0.0, 25.0, -30.0}, {3}, Dtype::f64);
  Tensor y = ops::silu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(std::abs(y.at(1) - 25.0) <= 1e-6);  // silu(x) ~ x for large x
  CHECK(std::abs(y.at(2)) <= 1e-6);
}

TEST_CASE("glu saturated gate and half gate") {
  // gate b = 1e4 -> sigmoid ~ 1 -> out ~ a
  Tensor x = Tensor::from(std::vector<double>{3.0, -2.0, 1e4, 1e4}, {1, 4}, Dtype::f64);
  Tensor y = ops::glu(x);
  CHECK(std::abs(y.at(0) - 3.0) <= 1e-9);
  CHECK(std::abs(y.at(1) + 2.0) <= 1e-9);

  Tensor z = ops::glu(Tensor::from(std::vector<double>{3.0, -2.0, 0.0, 0.0}, {1, 4}, Dtype::f64));
  CHECK(z.at(0) == doctest::Approx(1.5));
  CHECK(z.at(1) == doctest::Approx(-1.0));

  CHECK_THROWS_AS(ops::glu(Tensor::zeros({1, 3}, Dtype::f64)), ShapeError);
}

TEST_CASE("layer_norm degenerate rows") {
  Tensor gamma = Tensor::full({4}, 1.0, Dtype::f64);
  Tensor beta = Tensor::zeros({4}, Dtype::f64);
  Tensor x = Tensor::full({2, 4}, 3.7, Dtype::f64);
  Tensor y = ops::layer_norm(x, gamma, beta);
  for (int64_t i = 0; i < 8; ++i) CHECK(std::abs(y.at(i)) <= 1e-9);

  Tensor beta_c = Tensor::full({4}, 0.25, Dtype::f64);
  Tensor zero_gamma = Tensor::zeros({4}, Dtype::f64);
  Tensor rng_like = Tensor::from(std::vector<double>{1, 2, 3, 4, -1, 0, 2, 5}, {2, 4}, Dtype::f64);
  Tensor z = ops::layer_norm(rng_like, zero_gamma, beta_c);
  for (int64_t i = 0; i < 8; ++i) CHECK(z.at(i) == doctest::Approx(0.25));
}

TEST_CASE("log_softmax rows sum to one and shift invariance") {
  Tensor two = Tensor::from(std::vector<double>{1.0, 1.0}, {1, 2}, Dtype::f64);
  Tensor ls = ops::log_softmax(two);
  CHECK(ls.at(0) == doctest::Approx(std::log(0.5)));
  CHECK(ls.at(1) == doctest::Approx(std::log(0.5)));

  RngStream rng(7);
  Tensor x = Tensor::uniform({3, 8}, -2.0, 2.0, rng, Dtype::f64);
  Tensor y1 = ops::log_softmax(x);
  Tensor shifted = ops::scalar_add(x, 13.5);
  Tensor y2 = ops::log_softmax(shifted);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y1.at(i) == doctest::Approx(y2.at(i)).epsilon(1e-9));

  for (int64_t r = 0; r < 3; ++r) {
    double lse = 0.0;
    for (int64_t j = 0; j < 8; ++j) lse += std::exp(y1.at(r * 8 + j));
    CHECK(std::abs(std::log(lse)) <= 1e-6);
  }
}

TEST_CASE("dropout identity paths and mass preservation") {
  RngStream rng(11);
  Tensor x = Tensor::full({1000}, 1.0, Dtype::f32);
  Tensor y_eval = ops::dropout(x, 0.5, rng, Mode::kEval);
  CHECK(y_eval.impl() == x.impl());  // same handle, exact identity
  Tensor y_p0 = ops::dropout(x, 0.0, rng, Mode::kTrain);
  CHECK(y_p0.impl() == x.impl());
  CHECK_THROWS_AS(ops::dropout(x, 1.0, rng, Mode::kTrain), std::invalid_argument);

  Tensor big = Tensor::full({1000000}, 1.0, Dtype::f32);
  Tensor dropped = ops::dropout(big, 0.5, rng, Mode::kTrain);
  int64_t zeros = 0;
  double sum = 0.0;
  for (int64_t i = 0; i < dropped.numel(); ++i) {
    const double v = dropped.at(i);
    if (v == 0.0) ++zeros;
    sum += v;
  }
  const double zero_frac = double(zeros) / double(dropped.numel());
  CHECK(std::abs(zero_frac - 0.5) <= 0.002);
  CHECK(std::abs(sum / double(dropped.numel()) - 1.0) <= 0.01);
}

TEST_CASE("depthwise conv delta kernel is identity") {
  RngStream rng(3);
  Tensor x = Tensor::uniform({2, 9, 4}, -1.0, 1.0, rng, Dtype::f64);
  Tensor kernel = Tensor::zeros({5, 4}, Dtype::f64);
  for (int64_t c = 0; c < 4; ++c) kernel.set(2 * 4 + c, 1.0);  // center tap
  Tensor y = ops::depthwise_conv1d(x, kernel, Tensor());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));
}

TEST_CASE("depthwise conv mean kernel keeps interior constant") {
  Tensor x = Tensor::full({1, 20, 2}, 3.0, Dtype::f64);
  Tensor kernel = Tensor::full({5, 2}, 1.0 / 5.0, Dtype::f64);
  Tensor y = ops::depthwise_conv1d(x, kernel, Tensor());
  for (int64_t t = 2; t < 18; ++t)
    for (int64_t c = 0; c < 2; ++c) CHECK(y.at((t * 2) + c) == doctest::Approx(3.0));
}

TEST_CASE("unfold patch count and boundary") {
  Tensor x = Tensor::zeros({1, 100, 4});
  CHECK(ops::unfold_patches(x, 14, 4).dim(1) == 22);
  Tensor y = Tensor::zeros({1, 14, 4});
  CHECK(ops::unfold_patches(y, 14, 4).dim(1) == 1);
  CHECK_THROWS_AS(ops::unfold_patches(Tensor::zeros({1, 13, 4}), 14, 4), ShapeError);
}

TEST_CASE("rng determinism and fork independence") {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000000; ++i) {
    if (a.next_u64() != b.next_u64()) {
      FAIL("streams diverged at draw ", i);
    }
  }
  RngStream c(42);
  RngStream f1 = c.fork("augment", 1);
  RngStream f2 = c.fork("augment", 2);
  CHECK(f1.next_u64() != f2.next_u64());
  CHECK(c.counter() == 0);  // forking does not advance the parent
}

TEST_CASE("rng uniform moments") {
  RngStream rng(123);
  double sum = 0.0, sq = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean - 0.5) <= 0.002);
  CHECK(std::abs(var - 1.0 / 12.0) <= 0.001);
}

TEST_CASE("rng normal moments") {
  RngStream rng(9);
  double sum = 0.0, sq = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) <= 0.005);
  CHECK(std::abs(sq / n - 1.0) <= 0.01);
}

TEST_CASE("backward on simple graph") {
  Tensor x = Tensor::from(std::vector<double>{1.0, 2.0}, {2}, Dtype::f64);
  x.set_requires_grad(true);
  Tensor y = ops::sum_all(ops::mul(x, x));  // sum(x^2)
  y.backward();
  Tensor g = x.grad();
  REQUIRE(g.defined());
  CHECK(g.at(0) == doctest::Approx(2.0));
  CHECK(g.at(1) == doctest::Approx(4.0));
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor x = Tensor::zeros({2}, Dtype::f64, true);
  NoGradGuard guard;
  Tensor y = ops::scalar_mul(x, 2.0);
  CHECK_FALSE(y.requires_grad());
}
