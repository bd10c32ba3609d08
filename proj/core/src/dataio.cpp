#include "neurodecode/dataio.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "neurodecode/error.hpp"

namespace neurodecode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr uint8_t kBlobVersion = 1;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

uint32_t crc32_bytes(const void* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void DatasetManifest::validate() const {
  if (channels < 1) throw IoError("manifest: channels must be >= 1");
  for (size_t i = 1; i < sessions.size(); ++i) {
    if (sessions[i].date_ordinal <= sessions[i - 1].date_ordinal) {
      throw IoError("manifest: session date ordinals must be strictly increasing");
    }
  }
  for (const auto& t : trials) {
    if (t.session_id < 0 || t.session_id >= static_cast<int>(sessions.size())) {
      throw IoError("manifest: trial '" + t.trial_id + "' references unknown session " +
                    std::to_string(t.session_id));
    }
    if (t.frames < 1) throw IoError("manifest: trial '" + t.trial_id + "' has no frames");
  }
}

void write_dataset(const std::string& dir, int64_t channels,
                   const std::vector<SessionInfo>& sessions,
                   const std::vector<TrialData>& trials) {
  {  // validate before touching the filesystem
    DatasetManifest check;
    check.channels = channels;
    check.sessions = sessions;
    for (const auto& t : trials) {
      TrialMeta m;
      m.trial_id = t.record.trial_id;
      m.session_id = t.record.session_id;
      m.frames = t.record.frames;
      check.trials.push_back(std::move(m));
    }
    check.validate();
  }
  fs::create_directories(dir);
  const fs::path bin_path = fs::path(dir) / "features.bin";
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("write_dataset: cannot open '" + bin_path.string() + "'");
  bin.put(static_cast<char>(kBlobVersion));

  json jtrials = json::array();
  uint64_t offset = 1;  // version byte
  for (const auto& t : trials) {
    const auto& rec = t.record;
    if (static_cast<int64_t>(rec.features.size()) != rec.frames * channels) {
      throw IoError("write_dataset: trial '" + rec.trial_id + "' feature size mismatch");
    }
    const size_t nbytes = rec.features.size() * sizeof(float);
    bin.write(reinterpret_cast<const char*>(rec.features.data()),
              static_cast<std::streamsize>(nbytes));
    json jt;
    jt["trial_id"] = rec.trial_id;
    jt["session_id"] = rec.session_id;
    jt["split"] = split_name(t.split);
    jt["frames"] = rec.frames;
    jt["offset"] = offset;
    jt["crc32"] = crc32_bytes(rec.features.data(), nbytes);
    jt["transcript"] = rec.transcript;
    jtrials.push_back(std::move(jt));
    offset += nbytes;
  }
  if (!bin) throw IoError("write_dataset: short write to '" + bin_path.string() + "'");
  bin.close();

  json manifest;
  manifest["version"] = 1;
  manifest["channels"] = channels;
  json jsessions = json::array();
  for (const auto& s : sessions) {
    jsessions.push_back({{"name", s.name}, {"date_ordinal", s.date_ordinal}});
  }
  manifest["sessions"] = std::move(jsessions);
  manifest["trials"] = std::move(jtrials);

  const fs::path man_path = fs::path(dir) / "manifest.json";
  std::ofstream man(man_path, std::ios::trunc);
  if (!man) throw IoError("write_dataset: cannot open '" + man_path.string() + "'");
  man << manifest.dump(2) << "\n";
}

Dataset Dataset::open(const std::string& dir) {
  const fs::path man_path = fs::path(dir) / "manifest.json";
  std::ifstream man(man_path);
  if (!man) throw IoError("Dataset::open: cannot read '" + man_path.string() + "'");
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw IoError("Dataset::open: corrupt manifest: " + std::string(e.what()));
  }
  if (manifest.value("version", 0) != 1) {
    throw IoError("Dataset::open: unknown dataset version");
  }

  Dataset ds;
  ds.manifest_.channels = manifest.at("channels").get<int64_t>();
  for (const auto& s : manifest.at("sessions")) {
    ds.manifest_.sessions.push_back(
        {s.at("name").get<std::string>(), s.at("date_ordinal").get<int64_t>()});
  }
  for (const auto& t : manifest.at("trials")) {
    TrialMeta meta;
    meta.trial_id = t.at("trial_id").get<std::string>();
    meta.session_id = t.at("session_id").get<int>();
    meta.split = split_from_name(t.at("split").get<std::string>());
    meta.frames = t.at("frames").get<int64_t>();
    meta.offset = t.at("offset").get<uint64_t>();
    meta.crc32 = t.at("crc32").get<uint32_t>();
    meta.transcript = t.at("transcript").get<std::string>();
    ds.manifest_.trials.push_back(std::move(meta));
  }
  ds.manifest_.validate();
  ds.features_path_ = (fs::path(dir) / "features.bin").string();

  std::ifstream bin(ds.features_path_, std::ios::binary);
  if (!bin) throw IoError("Dataset::open: cannot read '" + ds.features_path_ + "'");
  const int version = bin.get();
  if (version != kBlobVersion) {
    throw IoError("Dataset::open: unknown features.bin version " + std::to_string(version));
  }
  return ds;
}

TrialRecord Dataset::load_trial(size_t index) const {
  const TrialMeta& meta = manifest_.trials.at(index);
  TrialRecord rec;
  rec.trial_id = meta.trial_id;
  rec.session_id = meta.session_id;
  rec.frames = meta.frames;
  rec.transcript = meta.transcript;
  rec.features.resize(static_cast<size_t>(meta.frames * manifest_.channels));

  std::ifstream bin(features_path_, std::ios::binary);
  if (!bin) throw IoError("load_trial: cannot read '" + features_path_ + "'");
  bin.seekg(static_cast<std::streamoff>(meta.offset));
  bin.read(reinterpret_cast<char*>(rec.features.data()),
           static_cast<std::streamsize>(rec.features.size() * sizeof(float)));
  if (!bin) {
    throw IoError("load_trial: truncated read for trial '" + meta.trial_id + "'");
  }
  const uint32_t crc = crc32_bytes(rec.features.data(), rec.features.size() * sizeof(float));
  if (crc != meta.crc32) {
    throw IoError("load_trial: checksum mismatch for trial '" + meta.trial_id + "'");
  }
  return rec;
}

std::vector<size_t> Dataset::indices_of(Split split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < manifest_.trials.size(); ++i) {
    if (manifest_.trials[i].split == split) out.push_back(i);
  }
  return out;
}

BatchPlan make_batches(const Dataset& ds, Split split, int64_t batch_size,
                       RngStream* shuffle, int64_t min_frames) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  BatchPlan plan;
  std::vector<size_t> order;
  for (size_t idx : ds.indices_of(split)) {
    if (ds.manifest().trials[idx].frames < min_frames) {
      plan.skipped.push_back("trial '" + ds.manifest().trials[idx].trial_id + "' skipped (" +
                             std::to_string(ds.manifest().trials[idx].frames) + " frames < " +
                             std::to_string(min_frames) + ")");
      continue;
    }
    order.push_back(idx);
  }
  if (shuffle != nullptr) {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle->uniform_int(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

Batch load_batch(const Dataset& ds, const std::vector<size_t>& indices, Dtype dtype,
                 const CharVocab& vocab) {
  if (indices.empty()) throw ConfigError("load_batch: empty index list");
  Batch batch;
  std::vector<TrialRecord> records;
  records.reserve(indices.size());
  int64_t max_t = 0;
  for (size_t idx : indices) {
    records.push_back(ds.load_trial(idx));
    max_t = std::max(max_t, records.back().frames);
  }
  const int64_t bsz = static_cast<int64_t>(records.size());
  const int64_t c = ds.channels();
  batch.features = Tensor::zeros({bsz, max_t, c}, dtype);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto out = batch.features.data<T>();
    for (int64_t b = 0; b < bsz; ++b) {
      const auto& rec = records[static_cast<size_t>(b)];
      for (size_t i = 0; i < rec.features.size(); ++i) {
        out[static_cast<size_t>(b * max_t * c) + i] = static_cast<T>(rec.features[i]);
      }
    }
  });
  for (const auto& rec : records) {
    batch.valid_lengths.push_back(rec.frames);
    batch.session_ids.push_back(rec.session_id);
    batch.targets.push_back(vocab.encode(rec.transcript));
    batch.references.push_back(rec.transcript);
    batch.trial_ids.push_back(rec.trial_id);
  }
  return batch;
}

}  // namespace neurodecode
