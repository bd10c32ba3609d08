#include <doctest.h>

#include <cmath>
#include <vector>

#include "neurodecode/ctc.hpp"
#include "neurodecode/gradcheck.hpp"
#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"

using namespace neurodecode;

namespace {

// Random normalized log-prob tensor [B, N, V] in f64.
Tensor random_log_probs(int64_t b, int64_t n, int64_t v, uint64_t seed) {
  RngStream rng(seed);
  Tensor logits = Tensor::uniform({b, n, v}, -2.0, 2.0, rng, Dtype::f64);
  NoGradGuard ng;
  return ops::log_softmax(logits);
}

Tensor slice_trial(const Tensor& lp, int64_t trial) {
  const int64_t n = lp.dim(1), v = lp.dim(2);
  Tensor out = Tensor::zeros({n, v}, Dtype::f64);
  for (int64_t i = 0; i < n * v; ++i) out.set(i, lp.at(trial * n * v + i));
  return out;
}

}  // namespace

TEST_CASE("single-frame single-alignment case") {
  // One frame, target "a" (token 1 in a tiny vocab), p(a) = 0.25.
  Tensor lp = Tensor::from(std::vector<double>{std::log(0.75), std::log(0.25)}, {1, 1, 2},
                           Dtype::f64);
  CtcBatch batch{lp, {1}, {{1}}};
  const double loss = ctc_loss(batch).item();
  CHECK(loss == doctest::Approx(-std::log(0.25)).epsilon(1e-9));
}

TEST_CASE("two-frame uniform case enumerates three paths") {
  // |V| = 2 (blank, a), uniform 0.5 rows, target "a": paths {aa, .a, a.}.
  Tensor lp = Tensor::from(
      std::vector<double>(4, std::log(0.5)), {1, 2, 2}, Dtype::f64);
  CtcBatch batch{lp, {2}, {{1}}};
  CHECK(ctc_loss(batch).item() == doctest::Approx(-std::log(0.75)).epsilon(1e-9));

  Tensor single = Tensor::from(std::vector<double>(4, std::log(0.5)), {2, 2}, Dtype::f64);
  CHECK(brute_force_ctc(single, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-9));
}

TEST_CASE("brute force edge cases") {
  Tensor lp = Tensor::from(std::vector<double>{std::log(0.5), std::log(0.5)}, {1, 2},
                           Dtype::f64);
  CHECK(std::isinf(brute_force_ctc(lp, {1, 1})));  // needs >= 3 frames
  CHECK(brute_force_ctc(lp, {1}) == doctest::Approx(-std::log(0.5)));
  CHECK_THROWS_AS(brute_force_ctc(Tensor::zeros({11, 2}, Dtype::f64), {1}),
                  std::invalid_argument);
}

TEST_CASE("oracle equivalence over randomized small instances") {
  RngStream rng(31415);
  int cases = 0;
  while (cases < 200) {
    const int64_t v = 2 + static_cast<int64_t>(rng.uniform_int(4));   // 2..5
    const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(8));   // 1..8
    const int64_t l = static_cast<int64_t>(rng.uniform_int(5));       // 0..4
    std::vector<int> target;
    for (int64_t i = 0; i < l; ++i)
      target.push_back(1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(v - 1))));
    int64_t need = l;
    for (size_t i = 1; i < target.size(); ++i)
      if (target[i] == target[i - 1]) ++need;
    if (n < need) continue;  // keep instances feasible

    Tensor lp = random_log_probs(1, n, v, 1000 + static_cast<uint64_t>(cases));
    CtcBatch batch{lp, {n}, {target}};
    const double fast = ctc_loss(batch).item();
    const double brute = brute_force_ctc(slice_trial(lp, 0), target);
    CHECK(std::abs(fast - brute) <= 1e-6);
    ++cases;
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  RngStream rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    const int64_t n = 3 + static_cast<int64_t>(rng.uniform_int(4));  // 3..6
    const int64_t v = 3 + static_cast<int64_t>(rng.uniform_int(3));  // 3..5
    std::vector<int> target{1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(v - 1))),
                            1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(v - 1)))};
    Tensor x = Tensor::uniform({1, n, v}, -1.5, 1.5, rng, Dtype::f64);
    // Probe through log_softmax so rows stay normalized for any perturbation.
    const double err = gradient_check(
        [&](const Tensor& in) {
          CtcBatch batch{ops::log_softmax(in), {n}, {target}};
          return ctc_loss(batch);
        },
        x);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("infeasible trials contribute zero loss and gradient") {
  Tensor lp = random_log_probs(2, 3, 4, 5);
  lp.set_requires_grad(true);
  // Trial 0 feasible (target len 2), trial 1 infeasible (len 4 > 3 frames).
  CtcBatch batch{lp, {3, 3}, {{1, 2}, {1, 2, 3, 1}}};
  int64_t zeroed = 0;
  Tensor loss = ctc_loss(batch, &zeroed);
  CHECK(zeroed == 1);

  CtcBatch only_first{random_log_probs(2, 3, 4, 5), {3, 3}, {{1, 2}, {}}};
  // Means over the batch: infeasible trial contributes exactly 0.
  Tensor lp2 = random_log_probs(1, 3, 4, 5);
  CtcBatch solo{lp2, {3}, {{1, 2}}};
  CHECK(loss.item() == doctest::Approx(ctc_loss(solo).item() / 2.0).epsilon(1e-12));

  loss.backward();
  Tensor g = lp.grad();
  REQUIRE(g.defined());
  const int64_t stride = 3 * 4;
  for (int64_t i = 0; i < stride; ++i) CHECK(g.at(stride + i) == 0.0);  // trial 1 untouched
}

TEST_CASE("blank in target and unnormalized rows are rejected") {
  Tensor lp = random_log_probs(1, 3, 4, 7);
  CHECK_THROWS_AS(ctc_loss(CtcBatch{lp, {3}, {{0}}}), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(CtcBatch{lp, {3}, {{4}}}), std::invalid_argument);

  Tensor bad = Tensor::full({1, 2, 3}, -0.5, Dtype::f64);  // rows do not normalize
  CHECK_THROWS_AS(ctc_loss(CtcBatch{bad, {2}, {{1}}}), std::invalid_argument);
}

TEST_CASE("monotone blank saturation") {
  // Mixing every frame toward the blank (eps -> 1) strictly increases the
  // loss of any non-empty target in the saturated regime.
  RngStream rng(2718);
  for (int rep = 0; rep < 20; ++rep) {
    const int64_t v = 2 + static_cast<int64_t>(rng.uniform_int(4));
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(5));
    std::vector<int> target{1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(v - 1)))};
    if (n >= 3 && rng.uniform() < 0.5)
      target.push_back(1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(v - 1))));

    Tensor base = random_log_probs(1, n, v, 4000 + static_cast<uint64_t>(rep));
    double prev = -1.0;
    for (double eps : {0.9, 0.95, 0.99}) {
      Tensor mixed = Tensor::zeros({1, n, v}, Dtype::f64);
      for (int64_t t = 0; t < n; ++t) {
        for (int64_t k = 0; k < v; ++k) {
          const double p = (1.0 - eps) * std::exp(base.at(t * v + k)) + (k == 0 ? eps : 0.0);
          mixed.set(t * v + k, std::log(p));
        }
      }
      const double loss = ctc_loss(CtcBatch{mixed, {n}, {target}}).item();
      CHECK(loss > prev);
      prev = loss;
    }
  }
}

TEST_CASE("entropy regularizer values and gradient") {
  // Uniform rows over 129 tokens -> H = ln 129.
  Tensor uniform = Tensor::full({1, 4, 129}, -std::log(129.0), Dtype::f64);
  CHECK(entropy_regularizer(uniform, {4}).item() ==
        doctest::Approx(std::log(129.0)).epsilon(1e-9));

  // One-hot-like rows (logit gap 50) -> H ~ 0.
  Tensor peaked = Tensor::full({1, 2, 5}, -50.0, Dtype::f64);
  {
    NoGradGuard ng;
    Tensor logits = Tensor::zeros({1, 2, 5}, Dtype::f64);
    for (int64_t t = 0; t < 2; ++t) logits.set(t * 5 + 1, 50.0);
    peaked = ops::log_softmax(logits);
  }
  CHECK(entropy_regularizer(peaked, {2}).item() <= 1e-6);

  // Gradient of -lambda * H via finite differences.
  RngStream rng(12);
  Tensor x = Tensor::uniform({1, 3, 4}, -1.0, 1.0, rng, Dtype::f64);
  const double err = gradient_check(
      [](const Tensor& in) {
        Tensor lp = ops::log_softmax(in);
        return ops::scalar_mul(entropy_regularizer(lp, {3}), -0.05);
      },
      x);
  CHECK(err <= 1e-5);
}

TEST_CASE("objective combines terms under the configured sign") {
  Tensor lp = random_log_probs(1, 4, 5, 77);
  CtcBatch batch{lp, {4}, {{1, 2}}};
  CtcLossOptions opts;
  opts.lambda = 0.05;
  const LossBreakdown bonus = ctc_objective(batch, opts);
  CHECK(bonus.total == doctest::Approx(bonus.ctc - 0.05 * bonus.entropy_term));

  opts.literal_sign = true;
  const LossBreakdown literal = ctc_objective(batch, opts);
  CHECK(literal.total == doctest::Approx(literal.ctc + 0.05 * literal.entropy_term));
}

TEST_CASE("greedy decode collapse rule") {
  // argmax sequence [98, 98, 0, 98, 99] -> "aab".
  const int v = 101;
  Tensor lp = Tensor::full({5, v}, -20.0, Dtype::f64);
  const int seq[5] = {98, 98, 0, 98, 99};
  for (int t = 0; t < 5; ++t) lp.set(t * v + seq[t], -0.001);
  CHECK(greedy_decode(lp, 5) == "aab");

  Tensor blanks = Tensor::full({4, v}, -20.0, Dtype::f64);
  for (int t = 0; t < 4; ++t) blanks.set(t * v + 0, -0.001);
  CHECK(greedy_decode(blanks, 4).empty());
}

TEST_CASE("greedy decode matches scalar oracle on random distributions") {
  RngStream rng(654);
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(6));
    const int64_t v = 3 + static_cast<int64_t>(rng.uniform_int(60));
    Tensor lp = Tensor::uniform({n, v}, -3.0, 3.0, rng, Dtype::f64);

    // Independent collapse: argmax per frame, skip repeats and blanks.
    std::string expected;
    int prev = -1;
    for (int64_t t = 0; t < n; ++t) {
      int arg = 0;
      for (int64_t k = 1; k < v; ++k)
        if (lp.at(t * v + k) > lp.at(t * v + arg)) arg = static_cast<int>(k);
      if (arg != prev && arg != 0) expected.push_back(static_cast<char>(arg - 1));
      prev = arg;
    }
    // Oracle equality also proves blanks are dropped and runs collapse.
    CHECK(greedy_decode(lp, n) == expected);
  }
}
