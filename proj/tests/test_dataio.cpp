#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "neurodecode/ctc.hpp"
#include "neurodecode/dataio.hpp"
#include "neurodecode/error.hpp"
#include "neurodecode/model.hpp"

using namespace neurodecode;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("nd_dataio_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::vector<TrialData> random_trials(int n, int64_t channels, int n_sessions,
                                     uint64_t seed) {
  RngStream rng(seed);
  std::vector<TrialData> trials;
  for (int i = 0; i < n; ++i) {
    TrialData t;
    t.record.trial_id = "t" + std::to_string(i);
    t.record.session_id = i % n_sessions;
    t.record.frames = 3 + static_cast<int64_t>(rng.uniform_int(8));
    t.record.features.resize(static_cast<size_t>(t.record.frames * channels));
    for (auto& v : t.record.features) v = static_cast<float>(rng.normal());
    t.record.transcript = i % 3 == 0 ? "the cat" : "said so";
    t.split = i % 5 == 4 ? Split::kVal : Split::kTrain;
    trials.push_back(std::move(t));
  }
  return trials;
}

std::vector<SessionInfo> sessions3() {
  return {{"s0", 0}, {"s1", 1}, {"s2", 2}};
}

}  // namespace

TEST_CASE("dataset round-trips bit-exactly") {
  TempDir dir;
  const auto trials = random_trials(100, 5, 3, 77);
  write_dataset(dir.path.string(), 5, sessions3(), trials);

  const Dataset ds = Dataset::open(dir.path.string());
  CHECK(ds.channels() == 5);
  REQUIRE(ds.size() == 100);
  for (size_t i = 0; i < 100; ++i) {
    const TrialRecord rec = ds.load_trial(i);
    CHECK(rec.trial_id == trials[i].record.trial_id);
    CHECK(rec.session_id == trials[i].record.session_id);
    CHECK(rec.transcript == trials[i].record.transcript);
    REQUIRE(rec.features.size() == trials[i].record.features.size());
    for (size_t j = 0; j < rec.features.size(); ++j) {
      CHECK(rec.features[j] == trials[i].record.features[j]);  // bit-exact
    }
  }
}

TEST_CASE("corrupting the binary region is caught per trial") {
  TempDir dir;
  const auto trials = random_trials(10, 4, 2, 78);
  write_dataset(dir.path.string(), 4, {{"s0", 0}, {"s1", 1}}, trials);

  // Flip one byte inside trial 3's features.
  const Dataset ds = Dataset::open(dir.path.string());
  const uint64_t offset = ds.manifest().trials[3].offset;
  {
    std::fstream bin(dir.path / "features.bin",
                     std::ios::in | std::ios::out | std::ios::binary);
    bin.seekg(static_cast<std::streamoff>(offset + 2));
    char c = static_cast<char>(bin.get());
    bin.seekp(static_cast<std::streamoff>(offset + 2));
    bin.put(static_cast<char>(c ^ 0x40));
  }
  const Dataset corrupted = Dataset::open(dir.path.string());
  CHECK_NOTHROW(corrupted.load_trial(2));
  try {
    corrupted.load_trial(3);
    FAIL("expected checksum error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("t3") != std::string::npos);
  }
}

TEST_CASE("empty dataset and unknown version") {
  TempDir dir;
  write_dataset(dir.path.string(), 4, {}, {});
  const Dataset ds = Dataset::open(dir.path.string());
  CHECK(ds.size() == 0);
  CHECK(ds.indices_of(Split::kTrain).empty());

  // Corrupt the blob version byte.
  {
    std::fstream bin(dir.path / "features.bin",
                     std::ios::in | std::ios::out | std::ios::binary);
    bin.put(static_cast<char>(9));
  }
  CHECK_THROWS_AS(Dataset::open(dir.path.string()), IoError);
}

TEST_CASE("manifest validation rejects bad session ordering") {
  TempDir dir;
  auto trials = random_trials(4, 3, 2, 79);
  CHECK_THROWS_AS(
      write_dataset(dir.path.string(), 3, {{"s0", 5}, {"s1", 5}}, trials),
      IoError);
}

TEST_CASE("splits are disjoint and exhaustive") {
  TempDir dir;
  const auto trials = random_trials(50, 3, 3, 80);
  write_dataset(dir.path.string(), 3, sessions3(), trials);
  const Dataset ds = Dataset::open(dir.path.string());
  std::set<size_t> seen;
  size_t total = 0;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (size_t i : ds.indices_of(s)) {
      CHECK(seen.insert(i).second);  // disjoint
      ++total;
    }
  }
  CHECK(total == ds.size());  // exhaustive
}

TEST_CASE("batching pads with zeros and covers every trial once per epoch") {
  TempDir dir;
  std::vector<TrialData> trials;
  for (int i = 0; i < 7; ++i) {
    TrialData t;
    t.record.trial_id = "t" + std::to_string(i);
    t.record.session_id = 0;
    t.record.frames = 10 + 2 * i;
    t.record.features.assign(static_cast<size_t>(t.record.frames * 2), 1.0f);
    t.record.transcript = "ab";
    t.split = Split::kTrain;
    trials.push_back(t);
  }
  write_dataset(dir.path.string(), 2, {{"s0", 0}}, trials);
  const Dataset ds = Dataset::open(dir.path.string());

  RngStream shuffle(3);
  const BatchPlan plan = make_batches(ds, Split::kTrain, 3, &shuffle, 1);
  std::set<size_t> covered;
  for (const auto& b : plan.batches)
    for (size_t i : b) CHECK(covered.insert(i).second);
  CHECK(covered.size() == 7);

  // Same seed, same order.
  RngStream shuffle2(3);
  const BatchPlan plan2 = make_batches(ds, Split::kTrain, 3, &shuffle2, 1);
  CHECK(plan.batches == plan2.batches);

  const Batch batch = load_batch(ds, {0, 3}, Dtype::f32);
  CHECK(batch.features.dim(1) == 16);  // padded to the longer trial
  CHECK(batch.valid_lengths == std::vector<int64_t>{10, 16});
  // Padding region is zero.
  for (int64_t t = 10; t < 16; ++t)
    for (int64_t c = 0; c < 2; ++c) CHECK(batch.features.at((0 * 16 + t) * 2 + c) == 0.0);
  CHECK(batch.targets[0] == std::vector<int>{98, 99});  // "ab"
}

TEST_CASE("short trials are skipped with a log entry") {
  TempDir dir;
  auto trials = random_trials(6, 3, 2, 81);
  trials[2].record.frames = 2;
  trials[2].record.features.assign(6, 0.5f);
  write_dataset(dir.path.string(), 3, {{"s0", 0}, {"s1", 1}}, trials);
  const Dataset ds = Dataset::open(dir.path.string());
  const BatchPlan plan = make_batches(ds, Split::kTrain, 4, nullptr, 3);
  bool skipped = false;
  for (const auto& s : plan.skipped)
    if (s.find("t2") != std::string::npos) skipped = true;
  CHECK(skipped);
}

TEST_CASE("padding poisoning: masks, not pad values, drive the loss") {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.num_sessions = 1;
  cfg.d_model = 8;
  cfg.num_blocks = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.conv_kernel = 5;
  cfg.patch_size = 3;
  cfg.stride = 2;
  cfg.dropout = 0.0;
  cfg.vocab_size = 5;
  cfg.max_pos_len = 32;
  DecoderModel model(cfg, Dtype::f64, 7);

  RngStream rng(9);
  Tensor x = Tensor::uniform({2, 9, 4}, -1.0, 1.0, rng, Dtype::f64);
  const std::vector<int64_t> valid{9, 5};
  // Zero the padding of trial 1 (frames 5..8).
  for (int64_t t = 5; t < 9; ++t)
    for (int64_t c = 0; c < 4; ++c) x.set((9 + t) * 4 + c, 0.0);

  auto loss_of = [&](const Tensor& input) {
    ForwardResult fwd = model.forward(input, {0, 0}, valid, Mode::kEval);
    CtcBatch batch{fwd.log_probs, fwd.token_lengths, {{1, 2}, {3}}};
    CtcLossOptions opts;
    return ctc_objective(batch, opts).total;
  };
  const double clean = loss_of(x);

  Tensor poisoned = x.clone();
  for (int64_t t = 5; t < 9; ++t)
    for (int64_t c = 0; c < 4; ++c)
      poisoned.set((9 + t) * 4 + c, std::numeric_limits<double>::quiet_NaN());
  const double poisoned_loss = loss_of(poisoned);
  CHECK(std::isfinite(poisoned_loss));
  CHECK(std::abs(clean - poisoned_loss) <= 1e-6);
}

TEST_CASE("synthetic templates render exactly without noise") {
  SynthSpec spec;
  spec.channels = 6;
  spec.n_sessions = 2;
  spec.frames_per_char = 1;
  spec.noise = 0.0;
  const SynthModel model = make_synth_model(spec, 42);

  RngStream rng(1);
  const auto frames = render_trial(model, spec, "ab", 0, rng);
  REQUIRE(frames.size() == 12);
  const size_t ia = model.alphabet.find('a');
  const size_t ib = model.alphabet.find('b');
  for (int64_t c = 0; c < 6; ++c) {
    CHECK(frames[static_cast<size_t>(c)] == model.templates[ia][static_cast<size_t>(c)]);
    CHECK(frames[static_cast<size_t>(6 + c)] == model.templates[ib][static_cast<size_t>(c)]);
  }
}

TEST_CASE("session distortion is the documented affine map") {
  SynthSpec spec;
  spec.channels = 5;
  spec.n_sessions = 3;
  spec.frames_per_char = 2;
  spec.noise = 0.0;
  spec.drift = 0.2;
  spec.offset_drift = 0.1;
  const SynthModel model = make_synth_model(spec, 17);

  RngStream r1(4), r2(4);
  const auto base = render_trial(model, spec, "the", 0, r1);
  const auto moved = render_trial(model, spec, "the", 2, r2);
  const auto& m = model.session_matrix[2];
  const auto& o = model.session_offset[2];
  const int64_t c = spec.channels;
  for (size_t t = 0; t < base.size() / static_cast<size_t>(c); ++t) {
    for (int64_t i = 0; i < c; ++i) {
      double expect = o[static_cast<size_t>(i)];
      for (int64_t j = 0; j < c; ++j) {
        expect += m[static_cast<size_t>(i * c + j)] * base[t * static_cast<size_t>(c) + static_cast<size_t>(j)];
      }
      CHECK(moved[t * static_cast<size_t>(c) + static_cast<size_t>(i)] ==
            doctest::Approx(expect).epsilon(1e-5));
    }
  }

  // Session 0 distortion is the identity.
  for (int64_t i = 0; i < c; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      CHECK(model.session_matrix[0][static_cast<size_t>(i * c + j)] == (i == j ? 1.0f : 0.0f));
    }
    CHECK(model.session_offset[0][static_cast<size_t>(i)] == 0.0f);
  }
}

TEST_CASE("noiseless frames classify perfectly by nearest template") {
  SynthSpec spec;
  spec.channels = 8;
  spec.n_sessions = 1;
  spec.n_train = 20;
  spec.n_val = 0;
  spec.frames_per_char = 3;
  spec.noise = 0.0;
  const SynthDataset ds = generate_synthetic(spec, 7);
  REQUIRE(ds.trials.size() == 20);

  for (const auto& t : ds.trials) {
    const auto& rec = t.record;
    for (size_t i = 0; i < rec.transcript.size(); ++i) {
      // Nearest template of the first frame of each character segment.
      const float* frame = rec.features.data() + i * 3 * 8;
      double best = 1e30;
      size_t best_idx = 0;
      for (size_t k = 0; k < ds.model.templates.size(); ++k) {
        double d = 0;
        for (int64_t c = 0; c < 8; ++c) {
          const double diff = frame[c] - ds.model.templates[k][static_cast<size_t>(c)];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_idx = k;
        }
      }
      CHECK(ds.model.alphabet[best_idx] == rec.transcript[i]);
    }
  }
}

TEST_CASE("generated datasets have balanced splits and valid manifests") {
  SynthSpec spec;  // defaults: 300 train, 50 val, 3 sessions
  const SynthDataset synth = generate_synthetic(spec, 11);
  CHECK(synth.trials.size() == 350);
  CHECK(synth.sessions.size() == 3);

  TempDir dir;
  write_dataset(dir.path.string(), spec.channels, synth.sessions, synth.trials);
  const Dataset ds = Dataset::open(dir.path.string());
  CHECK(ds.indices_of(Split::kTrain).size() == 300);
  CHECK(ds.indices_of(Split::kVal).size() == 50);
  // Sessions appear in every split.
  std::set<int> train_sessions;
  for (size_t i : ds.indices_of(Split::kTrain))
    train_sessions.insert(ds.manifest().trials[i].session_id);
  CHECK(train_sessions.size() == 3);
}

TEST_CASE("synthetic generation is deterministic per seed") {
  SynthSpec spec;
  spec.n_train = 10;
  spec.n_val = 2;
  const SynthDataset a = generate_synthetic(spec, 5);
  const SynthDataset b = generate_synthetic(spec, 5);
  REQUIRE(a.trials.size() == b.trials.size());
  for (size_t i = 0; i < a.trials.size(); ++i) {
    CHECK(a.trials[i].record.transcript == b.trials[i].record.transcript);
    CHECK(a.trials[i].record.features == b.trials[i].record.features);
  }
  const SynthDataset c = generate_synthetic(spec, 6);
  bool any_diff = false;
  for (size_t i = 0; i < a.trials.size() && !any_diff; ++i) {
    if (a.trials[i].record.transcript != c.trials[i].record.transcript ||
        a.trials[i].record.features != c.trials[i].record.features) {
      any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("alphabet validation") {
  SynthSpec spec;
  spec.alphabet = "abc";  // no space
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.alphabet = "abc ";  // missing letters used by the word list
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
