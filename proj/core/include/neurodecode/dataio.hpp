#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurodecode/rng.hpp"
#include "neurodecode/tensor.hpp"
#include "neurodecode/vocab.hpp"

namespace neurodecode {

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct TrialRecord {
  std::string trial_id;
  int session_id = 0;
  int64_t frames = 0;               // T; channels come from the dataset
  std::vector<float> features;      // row-major T x C
  std::string transcript;
};

struct SessionInfo {
  std::string name;
  int64_t date_ordinal = 0;  // strictly increasing with session index
};

struct TrialMeta {
  std::string trial_id;
  int session_id = 0;
  Split split = Split::kTrain;
  int64_t frames = 0;
  uint64_t offset = 0;  // byte position into features.bin
  uint32_t crc32 = 0;
  std::string transcript;
};

struct DatasetManifest {
  int64_t channels = 0;
  std::vector<SessionInfo> sessions;
  std::vector<TrialMeta> trials;
  void validate() const;
};

struct TrialData {
  TrialRecord record;
  Split split = Split::kTrain;
};

// Directory layout: manifest.json + features.bin (leading version byte, then
// little-endian f32 features per trial; integrity via per-trial CRC32).
void write_dataset(const std::string& dir, int64_t channels,
                   const std::vector<SessionInfo>& sessions,
                   const std::vector<TrialData>& trials);

class Dataset {
 public:
  static Dataset open(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  int64_t channels() const { return manifest_.channels; }
  size_t size() const { return manifest_.trials.size(); }

  // Reads one trial; throws IoError naming the trial on CRC mismatch.
  TrialRecord load_trial(size_t index) const;

  std::vector<size_t> indices_of(Split split) const;

 private:
  DatasetManifest manifest_;
  std::string features_path_;
};

uint32_t crc32_bytes(const void* data, size_t len);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor features;                        // [B, maxT, C], zero padded
  std::vector<int64_t> valid_lengths;     // frames per trial
  std::vector<int> session_ids;
  std::vector<std::vector<int>> targets;  // encoded transcripts
  std::vector<std::string> references;
  std::vector<std::string> trial_ids;
};

struct BatchPlan {
  std::vector<std::vector<size_t>> batches;  // trial indices per batch
  std::vector<std::string> skipped;          // too-short trials, logged
};

// Shuffles when a stream is given (training); deterministic order otherwise.
// Trials shorter than min_frames are skipped and logged.
BatchPlan make_batches(const Dataset& ds, Split split, int64_t batch_size,
                       RngStream* shuffle, int64_t min_frames);

Batch load_batch(const Dataset& ds, const std::vector<size_t>& indices, Dtype dtype,
                 const CharVocab& vocab = CharVocab());

// ---------------------------------------------------------------------------
// Synthetic data generation
// ---------------------------------------------------------------------------

// Desk-scale stand-in for real recordings: per-character template vectors
// emitted frames_per_char times with Gaussian noise, then distorted by a
// per-session affine map whose magnitude grows with the session index
// (session 0 is the identity).
struct SynthSpec {
  int64_t channels = 32;
  int64_t n_sessions = 3;
  int64_t n_train = 300;
  int64_t n_val = 50;
  int64_t n_test = 0;
  int64_t frames_per_char = 8;
  int64_t min_words = 2;
  int64_t max_words = 4;
  double noise = 0.5;         // observation noise on top of templates
  double drift = 0.1;         // per-session-step distortion scale
  double offset_drift = 0.05; // per-session-step bias scale
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz ";

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

struct SynthModel {
  std::string alphabet;
  std::vector<std::vector<float>> templates;       // one per alphabet char
  std::vector<std::vector<float>> session_matrix;  // [n_sessions] C*C row-major
  std::vector<std::vector<float>> session_offset;  // [n_sessions] C
};

SynthModel make_synth_model(const SynthSpec& spec, uint64_t seed);

// Emits frames_per_char frames per character plus noise, then applies the
// session distortion.
std::vector<float> render_trial(const SynthModel& model, const SynthSpec& spec,
                                const std::string& sentence, int session,
                                RngStream& rng);

struct SynthDataset {
  std::vector<SessionInfo> sessions;
  std::vector<TrialData> trials;
  SynthModel model;
};

SynthDataset generate_synthetic(const SynthSpec& spec, uint64_t seed);

}  // namespace neurodecode
