#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "neurodecode/ctc.hpp"
#include "neurodecode/gradcheck.hpp"
#include "neurodecode/model.hpp"
#include "neurodecode/weights_io.hpp"

using namespace neurodecode;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.channels = 6;
  cfg.num_sessions = 2;
  cfg.d_model = 8;
  cfg.num_blocks = 1;
  cfg.heads = 2;
  cfg.d_ff = 32;
  cfg.conv_kernel = 5;
  cfg.patch_size = 3;
  cfg.stride = 2;
  cfg.dropout = 0.0;
  cfg.vocab_size = 6;
  cfg.max_pos_len = 64;
  return cfg;
}

Tensor random_batch(int64_t b, int64_t t, int64_t c, uint64_t seed, Dtype dt) {
  RngStream rng(seed);
  return Tensor::uniform({b, t, c}, -1.0, 1.0, rng, dt);
}

Tensor param_by_name(DecoderModel& model, const std::string& name) {
  for (auto& p : model.parameters()) {
    if (p.name == name) return p.tensor;
  }
  FAIL("parameter not found: ", name);
  return Tensor();
}

void zero_param(DecoderModel& model, const std::string& name) {
  Tensor t = param_by_name(model, name);
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), T(0));
  });
}

}  // namespace

TEST_CASE("alignment is an exact silu pass-through at initialization") {
  DecoderModel model(toy_config(), Dtype::f64, 7);
  Tensor x = random_batch(3, 5, 6, 11, Dtype::f64);
  Tensor aligned = model.align(x, {0, 1, 0});
  NoGradGuard ng;
  Tensor plain = ops::silu(x);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(aligned.at(i) == plain.at(i));  // bit-exact
  }
}

TEST_CASE("alignment routes each trial through its own session parameters") {
  DecoderModel model(toy_config(), Dtype::f64, 7);
  Tensor x = random_batch(2, 4, 6, 13, Dtype::f64);
  Tensor before = model.align(x, {0, 1});

  // Perturb session 0; the session-1 trial must stay bit-identical.
  Tensor w0 = param_by_name(model, "align.W.0");
  w0.set(3, w0.at(3) + 0.25);
  Tensor after = model.align(x, {0, 1});

  const int64_t stride = 4 * 6;
  bool trial0_changed = false;
  for (int64_t i = 0; i < stride; ++i) {
    if (after.at(i) != before.at(i)) trial0_changed = true;
    CHECK(after.at(stride + i) == before.at(stride + i));
  }
  CHECK(trial0_changed);

  CHECK_THROWS_AS(model.align(x, {0, 5}), std::out_of_range);
}

TEST_CASE("token-count law holds exhaustively") {
  ModelConfig cfg;  // full-scale defaults: P = 14, S = 4
  CHECK(cfg.token_count(100) == 22);
  CHECK(cfg.token_count(14) == 1);
  for (int64_t t = 14; t <= 2000; ++t) {
    CHECK(cfg.token_count(t) == (t - 14) / 4 + 1);
  }
}

TEST_CASE("zero projection turns tokens into pure positional rows") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 3);
  zero_param(model, "patch.w");
  zero_param(model, "patch.b");
  Tensor x = random_batch(2, 7, 6, 17, Dtype::f64);
  Tensor tokens = model.embed_tokens(x, {0, 1}, {7, 7});
  Tensor table = sinusoidal_table(cfg.max_pos_len, cfg.d_model, Dtype::f64);
  const int64_t n = tokens.dim(1), d = cfg.d_model;
  REQUIRE(n == 3);  // (7-3)/2+1
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < n * d; ++i)
      CHECK(tokens.at(b * n * d + i) == table.at(i));
}

TEST_CASE("positional table is deterministic with the expected values") {
  Tensor a = sinusoidal_table(16, 8, Dtype::f64);
  Tensor b = sinusoidal_table(16, 8, Dtype::f64);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
  CHECK(a.at(0) == 0.0);                       // sin(0)
  CHECK(a.at(1) == 1.0);                       // cos(0)
  CHECK(a.at(8) == doctest::Approx(std::sin(1.0)));
  CHECK(a.at(9) == doctest::Approx(std::cos(1.0)));
}

TEST_CASE("single valid token attends only to itself") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 19);
  // One trial with exactly one valid token (3 frames, patch 3 -> 1 token),
  // padded out to a longer buffer.
  Tensor x = random_batch(1, 9, 6, 23, Dtype::f64);
  ForwardResult fwd_short = model.forward(x, {0}, {3}, Mode::kEval);
  CHECK(fwd_short.token_lengths[0] == 1);
  // Softmax over a single unmasked key is the identity path; the valid row
  // must not depend on padding content at all.
  Tensor x2 = x.clone();
  for (int64_t t = 3; t < 9; ++t)
    for (int64_t c = 0; c < 6; ++c) x2.set((t * 6) + c, 99.0);
  ForwardResult fwd_poison = model.forward(x2, {0}, {3}, Mode::kEval);
  const int64_t v = cfg.vocab_size;
  for (int64_t i = 0; i < v; ++i) {
    CHECK(fwd_short.log_probs.at(i) ==
          doctest::Approx(fwd_poison.log_probs.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("batch permutation equivariance in eval mode") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 29);
  Tensor x = random_batch(2, 7, 6, 31, Dtype::f64);
  ForwardResult fwd = model.forward(x, {0, 1}, {7, 5}, Mode::kEval);

  // Swap the two trials.
  Tensor swapped = Tensor::zeros({2, 7, 6}, Dtype::f64);
  const int64_t stride = 7 * 6;
  for (int64_t i = 0; i < stride; ++i) {
    swapped.set(i, x.at(stride + i));
    swapped.set(stride + i, x.at(i));
  }
  ForwardResult fwd2 = model.forward(swapped, {1, 0}, {5, 7}, Mode::kEval);

  const int64_t out_stride = fwd.log_probs.dim(1) * fwd.log_probs.dim(2);
  for (int64_t i = 0; i < out_stride; ++i) {
    CHECK(fwd.log_probs.at(i) == doctest::Approx(fwd2.log_probs.at(out_stride + i)).epsilon(1e-12));
    CHECK(fwd.log_probs.at(out_stride + i) == doctest::Approx(fwd2.log_probs.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("padding invariance: extra padded frames leave valid outputs unchanged") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 37);
  Tensor x = random_batch(1, 7, 6, 41, Dtype::f64);
  ForwardResult base = model.forward(x, {0}, {7}, Mode::kEval);

  Tensor padded = Tensor::zeros({1, 12, 6}, Dtype::f64);
  for (int64_t i = 0; i < 7 * 6; ++i) padded.set(i, x.at(i));
  ForwardResult ext = model.forward(padded, {0}, {7}, Mode::kEval);

  const int64_t n_valid = base.token_lengths[0];
  REQUIRE(ext.token_lengths[0] == n_valid);
  const int64_t v = cfg.vocab_size;
  for (int64_t t = 0; t < n_valid; ++t) {
    for (int64_t k = 0; k < v; ++k) {
      const double a = base.log_probs.at(t * v + k);
      const double b = ext.log_probs.at(t * v + k);
      CHECK(std::abs(a - b) <= 1e-5);
    }
  }
}

TEST_CASE("head produces normalized rows; zero head gives the uniform distribution") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 43);
  Tensor x = random_batch(2, 7, 6, 47, Dtype::f64);
  ForwardResult fwd = model.forward(x, {0, 1}, {7, 7}, Mode::kEval);
  const int64_t rows = fwd.log_probs.numel() / cfg.vocab_size;
  for (int64_t r = 0; r < rows; ++r) {
    double sum = 0;
    for (int64_t k = 0; k < cfg.vocab_size; ++k)
      sum += std::exp(fwd.log_probs.at(r * cfg.vocab_size + k));
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }

  zero_param(model, "head.w2");
  zero_param(model, "head.b2");
  ForwardResult uniform = model.forward(x, {0, 1}, {7, 7}, Mode::kEval);
  const double expect = std::log(1.0 / static_cast<double>(cfg.vocab_size));
  for (int64_t t = 0; t < uniform.token_lengths[0] * cfg.vocab_size; ++t) {
    CHECK(uniform.log_probs.at(t) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("trial shorter than the patch raises the dedicated error") {
  DecoderModel model(toy_config(), Dtype::f64, 1);
  Tensor x = random_batch(1, 7, 6, 2, Dtype::f64);
  CHECK_THROWS_AS(model.forward(x, {0}, {2}, Mode::kEval), TrialTooShortError);
}

TEST_CASE("parameter count arithmetic") {
  // Hand-enumerated toy total (adapters 2*(36+6)=84, patch 152, block 1960,
  // head 126).
  ModelConfig toy = toy_config();
  toy.conv_kernel = 31;
  const ParamCount pc = count_parameters(toy);
  CHECK(pc.adapters == 84);
  CHECK(pc.without_adapters == 152 + 1960 + 126);
  CHECK(pc.with_adapters == pc.without_adapters + 84);

  DecoderModel model(toy, Dtype::f32, 5);
  CHECK(model.registered_parameter_count() == pc.with_adapters);

  // Full-scale configuration against the published order of magnitude.
  ModelConfig full;  // Table-1 defaults, 45 sessions
  const ParamCount full_pc = count_parameters(full);
  CHECK(full_pc.with_adapters >= 40000000);
  CHECK(full_pc.with_adapters <= 55000000);
  CHECK(full_pc.adapters == 45 * (512 * 512 + 512));

  // Adapter arithmetic: adding sessions adds exactly n * (C^2 + C).
  ModelConfig more = full;
  more.num_sessions = 90;
  CHECK(count_parameters(more).with_adapters - full_pc.with_adapters ==
        45 * (512 * 512 + 512));
}

TEST_CASE("weights round-trip bit-identically") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "nd_model_roundtrip.ckpt").string();
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f32, 53);
  Tensor x = random_batch(2, 7, 6, 59, Dtype::f32);
  ForwardResult before = model.forward(x, {0, 1}, {7, 7}, Mode::kEval);

  save_model_weights(model, path);
  DecoderModel restored(cfg, Dtype::f32, 999);  // different init, overwritten by load
  load_model_weights(restored, path);
  ForwardResult after = restored.forward(x, {0, 1}, {7, 7}, Mode::kEval);
  REQUIRE(before.log_probs.numel() == after.log_probs.numel());
  for (int64_t i = 0; i < before.log_probs.numel(); ++i) {
    CHECK(before.log_probs.at(i) == after.log_probs.at(i));
  }
  fs::remove(path);
}

TEST_CASE("corrupt and mismatched weight files are rejected") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "nd_model_corrupt.ckpt").string();
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f32, 61);
  save_model_weights(model, path);

  // Truncate the blob.
  const auto full_size = fs::file_size(path);
  fs::resize_file(path, full_size - 64);
  DecoderModel target(cfg, Dtype::f32, 1);
  CHECK_THROWS_AS(load_model_weights(target, path), IoError);

  // Shape mismatch: a wider model must name the offending tensor.
  save_model_weights(model, path);
  ModelConfig wide = cfg;
  wide.d_model = 16;
  DecoderModel wide_model(wide, Dtype::f32, 1);
  try {
    load_model_weights(wide_model, path);
    FAIL("expected CheckpointMismatchError");
  } catch (const CheckpointMismatchError& e) {
    CHECK(std::string(e.what()).find("patch.w") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("full toy model passes finite-difference checks") {
  ModelConfig cfg = toy_config();
  DecoderModel model(cfg, Dtype::f64, 71);
  Tensor x = random_batch(2, 7, 6, 73, Dtype::f64);
  const std::vector<int> sessions{0, 1};
  const std::vector<int64_t> valid{7, 5};
  const std::vector<std::vector<int>> targets{{1, 3}, {2}};

  auto loss = [&]() -> Tensor {
    ForwardResult fwd = model.forward(x, sessions, valid, Mode::kTrain, nullptr);
    CtcLossOptions opts;
    opts.lambda = 0.05;
    return ctc_objective({fwd.log_probs, fwd.token_lengths, targets}, opts).total_tensor;
  };

  for (auto& p : model.parameters()) {
    const double err = gradient_check_inplace(loss, p.tensor, 1e-5);
    INFO("parameter ", p.name);
    CHECK(err <= 1e-4);
  }
}
