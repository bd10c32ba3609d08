#include "neurodecode/runconfig.hpp"

#include <fstream>

#include <json.hpp>

#include "neurodecode/error.hpp"

namespace neurodecode {

using nlohmann::json;

namespace {

// Reads key into field only when present, so absent keys keep defaults.
template <typename T>
void opt(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json model_to_json(const ModelConfig& m) {
  return json{{"channels", m.channels},
              {"num_sessions", m.num_sessions},
              {"d_model", m.d_model},
              {"num_blocks", m.num_blocks},
              {"heads", m.heads},
              {"d_ff", m.d_ff},
              {"conv_kernel", m.conv_kernel},
              {"patch_size", m.patch_size},
              {"stride", m.stride},
              {"dropout", m.dropout},
              {"vocab_size", m.vocab_size},
              {"max_pos_len", m.max_pos_len}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  opt(j, "channels", m.channels);
  opt(j, "num_sessions", m.num_sessions);
  opt(j, "d_model", m.d_model);
  opt(j, "num_blocks", m.num_blocks);
  opt(j, "heads", m.heads);
  opt(j, "d_ff", m.d_ff);
  opt(j, "conv_kernel", m.conv_kernel);
  opt(j, "patch_size", m.patch_size);
  opt(j, "stride", m.stride);
  opt(j, "dropout", m.dropout);
  opt(j, "vocab_size", m.vocab_size);
  opt(j, "max_pos_len", m.max_pos_len);
  return m;
}

json augment_to_json(const AugmentConfig& a) {
  return json{{"sigma_white", a.sigma_white},
              {"sigma_offset", a.sigma_offset},
              {"sigma_walk", a.sigma_walk},
              {"max_cut", a.max_cut},
              {"warp_alpha", a.warp_alpha},
              {"n_masks", a.n_masks},
              {"mask_len", a.mask_len},
              {"p_drop", a.p_drop},
              {"smooth_sigma", a.smooth_sigma},
              {"smooth_support", a.smooth_support},
              {"enable_white", a.enable_white},
              {"enable_offset", a.enable_offset},
              {"enable_walk", a.enable_walk},
              {"enable_cut", a.enable_cut},
              {"enable_warp", a.enable_warp},
              {"enable_mask", a.enable_mask},
              {"enable_drop", a.enable_drop},
              {"enable_smooth", a.enable_smooth}};
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig a;
  opt(j, "sigma_white", a.sigma_white);
  opt(j, "sigma_offset", a.sigma_offset);
  opt(j, "sigma_walk", a.sigma_walk);
  opt(j, "max_cut", a.max_cut);
  opt(j, "warp_alpha", a.warp_alpha);
  opt(j, "n_masks", a.n_masks);
  opt(j, "mask_len", a.mask_len);
  opt(j, "p_drop", a.p_drop);
  opt(j, "smooth_sigma", a.smooth_sigma);
  opt(j, "smooth_support", a.smooth_support);
  opt(j, "enable_white", a.enable_white);
  opt(j, "enable_offset", a.enable_offset);
  opt(j, "enable_walk", a.enable_walk);
  opt(j, "enable_cut", a.enable_cut);
  opt(j, "enable_warp", a.enable_warp);
  opt(j, "enable_mask", a.enable_mask);
  opt(j, "enable_drop", a.enable_drop);
  opt(j, "enable_smooth", a.enable_smooth);
  return a;
}

json optim_to_json(const OptimConfig& o) {
  return json{{"base_lr", o.base_lr},
              {"day_lr", o.day_lr},
              {"weight_decay", o.weight_decay},
              {"day_weight_decay", o.day_weight_decay},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"eps", o.eps},
              {"warmup_steps", o.warmup_steps},
              {"epochs", o.epochs},
              {"batch_size", o.batch_size},
              {"swa_enabled", o.swa_enabled},
              {"swa_last_k", o.swa_last_k},
              {"grad_clip", o.grad_clip},
              {"entropy_lambda", o.entropy_lambda},
              {"entropy_literal_sign", o.entropy_literal_sign},
              {"seed", o.seed}};
}

OptimConfig optim_from_json(const json& j) {
  OptimConfig o;
  opt(j, "base_lr", o.base_lr);
  opt(j, "day_lr", o.day_lr);
  opt(j, "weight_decay", o.weight_decay);
  opt(j, "day_weight_decay", o.day_weight_decay);
  opt(j, "beta1", o.beta1);
  opt(j, "beta2", o.beta2);
  opt(j, "eps", o.eps);
  opt(j, "warmup_steps", o.warmup_steps);
  opt(j, "epochs", o.epochs);
  opt(j, "batch_size", o.batch_size);
  opt(j, "swa_enabled", o.swa_enabled);
  opt(j, "swa_last_k", o.swa_last_k);
  opt(j, "grad_clip", o.grad_clip);
  opt(j, "entropy_lambda", o.entropy_lambda);
  opt(j, "entropy_literal_sign", o.entropy_literal_sign);
  opt(j, "seed", o.seed);
  return o;
}

json synth_to_json(const SynthSpec& s) {
  return json{{"channels", s.channels},
              {"n_sessions", s.n_sessions},
              {"n_train", s.n_train},
              {"n_val", s.n_val},
              {"n_test", s.n_test},
              {"frames_per_char", s.frames_per_char},
              {"min_words", s.min_words},
              {"max_words", s.max_words},
              {"noise", s.noise},
              {"drift", s.drift},
              {"offset_drift", s.offset_drift},
              {"alphabet", s.alphabet}};
}

SynthSpec synth_from_json(const json& j) {
  SynthSpec s;
  opt(j, "channels", s.channels);
  opt(j, "n_sessions", s.n_sessions);
  opt(j, "n_train", s.n_train);
  opt(j, "n_val", s.n_val);
  opt(j, "n_test", s.n_test);
  opt(j, "frames_per_char", s.frames_per_char);
  opt(j, "min_words", s.min_words);
  opt(j, "max_words", s.max_words);
  opt(j, "noise", s.noise);
  opt(j, "drift", s.drift);
  opt(j, "offset_drift", s.offset_drift);
  opt(j, "alphabet", s.alphabet);
  return s;
}

json parse_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  return model_to_json(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  return model_from_json(parse_or_throw(text, "model config"));
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = model_to_json(cfg.model);
  j["augment"] = augment_to_json(cfg.augment);
  j["optim"] = optim_to_json(cfg.optim);
  j["synth"] = synth_to_json(cfg.synth);
  j["data_path"] = cfg.data_path;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse_or_throw(text, "run config");
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
  if (j.contains("augment")) cfg.augment = augment_from_json(j.at("augment"));
  if (j.contains("optim")) cfg.optim = optim_from_json(j.at("optim"));
  if (j.contains("synth")) cfg.synth = synth_from_json(j.at("synth"));
  opt(j, "data_path", cfg.data_path);
  opt(j, "out_dir", cfg.out_dir);
  opt(j, "seed", cfg.seed);
  return cfg;
}

RunConfig load_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

void write_run_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << run_config_to_json(cfg);
}

}  // namespace neurodecode
