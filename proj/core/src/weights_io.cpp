#include "neurodecode/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "neurodecode/error.hpp"

namespace neurodecode {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[4] = {'N', 'D', 'W', 'T'};
constexpr uint32_t kVersion = 1;

using nlohmann::json;

size_t tensor_nbytes(const Tensor& t) {
  return static_cast<size_t>(t.numel()) * dtype_size(t.dtype());
}

const void* tensor_bytes(const Tensor& t) {
  const void* p = nullptr;
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    p = static_cast<const void*>(t.data<T>().data());
  });
  return p;
}

void* tensor_bytes_mut(Tensor& t) {
  void* p = nullptr;
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    p = static_cast<void*>(t.data<T>().data());
  });
  return p;
}

}  // namespace

void write_weight_file(const std::string& path, const WeightFile& file) {
  json manifest;
  manifest["meta"] = json::parse(file.meta_json);
  json tensors = json::object();
  // Offsets follow manifest key order (sorted), so output is deterministic.
  std::map<std::string, const Tensor*> ordered;
  for (const auto& [name, tensor] : file.tensors) {
    if (!ordered.emplace(name, &tensor).second) {
      throw IoError("write_weight_file: duplicate tensor name '" + name + "'");
    }
  }
  uint64_t offset = 0;
  for (const auto& [name, tensor] : ordered) {
    json entry;
    entry["shape"] = tensor->shape();
    entry["dtype"] = dtype_name(tensor->dtype());
    entry["offset"] = offset;
    entry["nbytes"] = tensor_nbytes(*tensor);
    tensors[name] = entry;
    offset += tensor_nbytes(*tensor);
  }
  manifest["tensors"] = tensors;
  const std::string manifest_text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_weight_file: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  const uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t mlen = manifest_text.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(manifest_text.data(), static_cast<std::streamsize>(mlen));
  for (const auto& [name, tensor] : ordered) {
    out.write(static_cast<const char*>(tensor_bytes(*tensor)),
              static_cast<std::streamsize>(tensor_nbytes(*tensor)));
  }
  if (!out) throw IoError("write_weight_file: short write to '" + path + "'");
}

WeightFile read_weight_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_weight_file: cannot open '" + path + "'");
  char magic[4];
  uint32_t version = 0;
  uint64_t mlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("read_weight_file: '" + path + "' is not a weight file (bad magic)");
  }
  if (version != kVersion) {
    throw IoError("read_weight_file: unsupported version " + std::to_string(version));
  }
  std::string manifest_text(mlen, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IoError("read_weight_file: truncated manifest in '" + path + "'");

  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw IoError("read_weight_file: corrupt manifest in '" + path + "': " + e.what());
  }

  WeightFile file;
  file.meta_json = manifest.at("meta").dump();
  const std::streampos blob_start = in.tellg();
  in.seekg(0, std::ios::end);
  const uint64_t blob_size = static_cast<uint64_t>(in.tellg() - blob_start);

  for (const auto& [name, entry] : manifest.at("tensors").items()) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::string dt_name = entry.at("dtype").get<std::string>();
    const Dtype dt = dt_name == "f32" ? Dtype::f32 : Dtype::f64;
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const uint64_t nbytes = entry.at("nbytes").get<uint64_t>();
    if (nbytes != shape_numel(shape) * dtype_size(dt)) {
      throw IoError("read_weight_file: inconsistent size for tensor '" + name + "'");
    }
    if (offset + nbytes > blob_size) {
      throw IoError("read_weight_file: '" + path + "' is truncated (tensor '" + name + "')");
    }
    Tensor t = Tensor::zeros(shape, dt);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    in.read(static_cast<char*>(tensor_bytes_mut(t)), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("read_weight_file: short read for tensor '" + name + "'");
    file.tensors.emplace_back(name, std::move(t));
  }
  return file;
}

void copy_into_named(const std::vector<ParamInfo>& dst,
                     const std::vector<std::pair<std::string, Tensor>>& src,
                     const std::string& context) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, tensor] : src) index[name] = &tensor;
  for (const auto& param : dst) {
    auto it = index.find(param.name);
    if (it == index.end()) {
      throw CheckpointMismatchError(context + ": tensor '" + param.name + "' missing from file");
    }
    const Tensor& stored = *it->second;
    if (stored.shape() != param.tensor.shape()) {
      throw CheckpointMismatchError(context + ": tensor '" + param.name + "' has shape " +
                                    shape_str(stored.shape()) + ", model expects " +
                                    shape_str(param.tensor.shape()));
    }
    if (stored.dtype() != param.tensor.dtype()) {
      throw CheckpointMismatchError(context + ": tensor '" + param.name + "' dtype mismatch");
    }
    Tensor target = param.tensor;
    dispatch_dtype(target.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto d = target.data<T>();
      auto s = stored.data<T>();
      std::copy(s.begin(), s.end(), d.begin());
    });
  }
}

void save_model_weights(const DecoderModel& model, const std::string& path) {
  WeightFile file;
  json meta;
  meta["kind"] = "model";
  meta["model_config"] = json::parse(model_config_to_json(model.config()));
  file.meta_json = meta.dump();
  for (const auto& p : model.named_tensors()) file.tensors.emplace_back(p.name, p.tensor);
  write_weight_file(path, file);
}

void load_model_weights(DecoderModel& model, const std::string& path) {
  const WeightFile file = read_weight_file(path);
  copy_into_named(model.named_tensors(), file.tensors, "load_model_weights");
}

ModelConfig peek_model_config(const std::string& path) {
  const WeightFile file = read_weight_file(path);
  const json meta = json::parse(file.meta_json);
  if (!meta.contains("model_config")) {
    throw CheckpointMismatchError("peek_model_config: '" + path + "' carries no model config");
  }
  return model_config_from_json(meta.at("model_config").dump());
}

}  // namespace neurodecode
