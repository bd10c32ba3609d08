#include <algorithm>
#include <cmath>
#include <set>

#include "neurodecode/dataio.hpp"
#include "neurodecode/error.hpp"

namespace neurodecode {

namespace {

// Fixed word list the sentence sampler draws from; lowercase plus space only.
const char* kWords[] = {
    "the",  "and",  "you",   "that", "was",  "for",  "are",  "with", "his",  "they",
    "have", "this", "from",  "one",  "had",  "word", "but",  "not",  "what", "all",
    "were", "when", "your",  "can",  "said", "there", "use", "each", "she",  "how",
    "their", "will", "other", "about", "out", "many", "then", "them", "these", "some",
};
constexpr size_t kNumWords = sizeof(kWords) / sizeof(kWords[0]);

}  // namespace

void SynthSpec::validate() const {
  if (channels < 1) throw ConfigError("synth: channels must be >= 1");
  if (n_sessions < 1) throw ConfigError("synth: n_sessions must be >= 1");
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ConfigError("synth: trial counts must be >= 0");
  if (frames_per_char < 1) throw ConfigError("synth: frames_per_char must be >= 1");
  if (min_words < 1 || max_words < min_words) {
    throw ConfigError("synth: require 1 <= min_words <= max_words");
  }
  if (noise < 0 || drift < 0 || offset_drift < 0) {
    throw ConfigError("synth: noise and drift scales must be >= 0");
  }
  if (alphabet.find(' ') == std::string::npos) {
    throw ConfigError("synth: alphabet must include the space character");
  }
  std::set<char> allowed(alphabet.begin(), alphabet.end());
  for (char ch : alphabet) {
    if (static_cast<unsigned char>(ch) > 127) {
      throw ConfigError("synth: alphabet must be 7-bit encodable");
    }
  }
  for (size_t w = 0; w < kNumWords; ++w) {
    for (const char* p = kWords[w]; *p; ++p) {
      if (!allowed.count(*p)) {
        throw ConfigError(std::string("synth: alphabet is missing '") + *p +
                          "' required by the word list");
      }
    }
  }
}

SynthModel make_synth_model(const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  SynthModel model;
  model.alphabet = spec.alphabet;
  RngStream rng = RngStream(seed).fork("synth-model");

  const int64_t c = spec.channels;
  for (size_t i = 0; i < spec.alphabet.size(); ++i) {
    std::vector<float> u(static_cast<size_t>(c));
    for (auto& v : u) v = static_cast<float>(rng.normal());
    model.templates.push_back(std::move(u));
  }

  // One fixed random direction R shared by all sessions; session s applies
  // M_s = I + s * drift * R and o_s = s * offset_drift * r.
  std::vector<double> r_mat(static_cast<size_t>(c * c));
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  for (auto& v : r_mat) v = rng.normal() * scale;
  std::vector<double> r_vec(static_cast<size_t>(c));
  for (auto& v : r_vec) v = rng.normal();

  for (int64_t s = 0; s < spec.n_sessions; ++s) {
    std::vector<float> m(static_cast<size_t>(c * c), 0.0f);
    for (int64_t i = 0; i < c; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        double v = s * spec.drift * r_mat[static_cast<size_t>(i * c + j)];
        if (i == j) v += 1.0;
        m[static_cast<size_t>(i * c + j)] = static_cast<float>(v);
      }
    }
    std::vector<float> o(static_cast<size_t>(c));
    for (int64_t i = 0; i < c; ++i) {
      o[static_cast<size_t>(i)] = static_cast<float>(s * spec.offset_drift * r_vec[static_cast<size_t>(i)]);
    }
    model.session_matrix.push_back(std::move(m));
    model.session_offset.push_back(std::move(o));
  }
  return model;
}

std::vector<float> render_trial(const SynthModel& model, const SynthSpec& spec,
                                const std::string& sentence, int session,
                                RngStream& rng) {
  const int64_t c = spec.channels;
  const int64_t frames = static_cast<int64_t>(sentence.size()) * spec.frames_per_char;
  std::vector<float> clean(static_cast<size_t>(frames * c));
  for (size_t i = 0; i < sentence.size(); ++i) {
    const size_t ci = model.alphabet.find(sentence[i]);
    if (ci == std::string::npos) {
      throw ConfigError(std::string("render_trial: character '") + sentence[i] +
                        "' not in the alphabet");
    }
    const auto& u = model.templates[ci];
    for (int64_t f = 0; f < spec.frames_per_char; ++f) {
      float* row = clean.data() + (static_cast<int64_t>(i) * spec.frames_per_char + f) * c;
      for (int64_t ch = 0; ch < c; ++ch) {
        row[ch] = u[static_cast<size_t>(ch)] +
                  static_cast<float>(spec.noise * rng.normal());
      }
    }
  }

  const auto& m = model.session_matrix.at(static_cast<size_t>(session));
  const auto& o = model.session_offset.at(static_cast<size_t>(session));
  std::vector<float> out(clean.size());
  for (int64_t t = 0; t < frames; ++t) {
    const float* row = clean.data() + t * c;
    float* dst = out.data() + t * c;
    for (int64_t i = 0; i < c; ++i) {
      double acc = o[static_cast<size_t>(i)];
      for (int64_t j = 0; j < c; ++j) {
        acc += m[static_cast<size_t>(i * c + j)] * row[j];
      }
      dst[i] = static_cast<float>(acc);
    }
  }
  return out;
}

SynthDataset generate_synthetic(const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  SynthDataset ds;
  ds.model = make_synth_model(spec, seed);
  for (int64_t s = 0; s < spec.n_sessions; ++s) {
    ds.sessions.push_back({"session-" + std::to_string(s), s});
  }

  RngStream rng = RngStream(seed).fork("synth-data");
  const int64_t total = spec.n_train + spec.n_val + spec.n_test;
  for (int64_t i = 0; i < total; ++i) {
    RngStream trial_rng = rng.fork("trial", static_cast<uint64_t>(i));
    const int64_t n_words =
        spec.min_words + static_cast<int64_t>(trial_rng.uniform_int(
                             static_cast<uint64_t>(spec.max_words - spec.min_words + 1)));
    std::string sentence;
    for (int64_t w = 0; w < n_words; ++w) {
      if (w) sentence.push_back(' ');
      sentence += kWords[trial_rng.uniform_int(kNumWords)];
    }
    const int session = static_cast<int>(i % spec.n_sessions);

    TrialData td;
    td.record.trial_id = "trial-" + std::to_string(100000 + i).substr(1);
    td.record.session_id = session;
    td.record.transcript = sentence;
    td.record.frames = static_cast<int64_t>(sentence.size()) * spec.frames_per_char;
    td.record.features = render_trial(ds.model, spec, sentence, session, trial_rng);
    td.split = i < spec.n_train ? Split::kTrain
               : (i < spec.n_train + spec.n_val ? Split::kVal : Split::kTest);
    ds.trials.push_back(std::move(td));
  }
  return ds;
}

}  // namespace neurodecode
