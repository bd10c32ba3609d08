#pragma once

#include <string>
#include <utility>
#include <vector>

#include "neurodecode/model.hpp"
#include "neurodecode/tensor.hpp"

namespace neurodecode {

// Generic weight container: a JSON manifest (tensor name -> shape, dtype,
// byte offset) followed by one little-endian IEEE-754 blob. Checkpoints and
// model files share this layout and differ only in their meta document.
struct WeightFile {
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_weight_file(const std::string& path, const WeightFile& file);
// Throws IoError on magic/version/size/offset corruption.
WeightFile read_weight_file(const std::string& path);

// Model serialization on top of the container; the manifest carries the
// ModelConfig so a checkpoint is self-describing.
void save_model_weights(const DecoderModel& model, const std::string& path);

// Copies stored tensors into the live model. Throws CheckpointMismatchError
// naming the first tensor whose shape or dtype disagrees, or that is missing.
void load_model_weights(DecoderModel& model, const std::string& path);

// Reads only the embedded ModelConfig (for constructing a matching model).
ModelConfig peek_model_config(const std::string& path);

// Copies values from matching named tensors (shape-checked), used by both
// load_model_weights and the optimizer-state section of checkpoints.
void copy_into_named(const std::vector<ParamInfo>& dst,
                     const std::vector<std::pair<std::string, Tensor>>& src,
                     const std::string& context);

}  // namespace neurodecode
