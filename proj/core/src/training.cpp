#include "neurodecode/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "neurodecode/editdist.hpp"
#include "neurodecode/error.hpp"

namespace neurodecode {

namespace fs = std::filesystem;
using nlohmann::json;

void OptimConfig::validate() const {
  if (base_lr < 0 || day_lr < 0) throw ConfigError("optim: learning rates must be >= 0");
  if (weight_decay < 0 || day_weight_decay < 0) throw ConfigError("optim: weight decay must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("optim: betas must be in [0, 1)");
  }
  if (eps <= 0) throw ConfigError("optim: eps must be > 0");
  if (warmup_steps < 0) throw ConfigError("optim: warmup_steps must be >= 0");
  if (epochs < 0) throw ConfigError("optim: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("optim: batch_size must be >= 1");
  if (swa_last_k < 1) throw ConfigError("optim: swa_last_k must be >= 1");
  if (grad_clip < 0) throw ConfigError("optim: grad_clip must be >= 0");
}

GroupLr lr_schedule(int64_t step, const OptimConfig& cfg) {
  double factor = 1.0;
  if (cfg.warmup_steps > 0) {
    factor = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
  }
  return {cfg.base_lr * factor, cfg.day_lr * factor};
}

AdamW::AdamW(std::vector<ParamInfo> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  }
}

AdamW::StepResult AdamW::step(const GroupLr& lr) {
  StepResult result;

  // Global gradient norm across both groups; non-finite anywhere skips the
  // whole step.
  double sq_norm = 0.0;
  bool finite = true;
  for (const auto& p : params_) {
    Tensor g = p.tensor.grad();
    if (!g.defined()) continue;
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (T x : g.data<T>()) {
        const double v = static_cast<double>(x);
        if (!std::isfinite(v)) finite = false;
        sq_norm += v * v;
      }
    });
  }
  if (!finite || !std::isfinite(sq_norm)) {
    return result;  // applied stays false
  }
  result.grad_norm = std::sqrt(sq_norm);
  double scale = 1.0;
  if (cfg_.grad_clip > 0 && result.grad_norm > cfg_.grad_clip) {
    scale = cfg_.grad_clip / result.grad_norm;
    result.clipped = true;
  }

  const int64_t t = steps_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));

  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor g = params_[i].tensor.grad();
    if (!g.defined()) continue;  // untouched parameters stay untouched
    const bool day = params_[i].day_group;
    const double lr_i = day ? lr.day : lr.base;
    const double wd_i = day ? cfg_.day_weight_decay : cfg_.weight_decay;
    Tensor& param = params_[i].tensor;
    dispatch_dtype(param.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto p = param.data<T>();
      auto gv = g.data<T>();
      auto m = m_[i].data<T>();
      auto v = v_[i].data<T>();
      for (size_t j = 0; j < p.size(); ++j) {
        const double grad = static_cast<double>(gv[j]) * scale;
        double pj = static_cast<double>(p[j]);
        pj -= lr_i * wd_i * pj;  // decoupled decay
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * grad;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * grad * grad;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        pj -= lr_i * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        p[j] = static_cast<T>(pj);
      }
    });
  }
  ++steps_;
  result.applied = true;
  return result;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<std::pair<std::string, Tensor>> AdamW::state_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("optim.m." + params_[i].name, m_[i]);
    out.emplace_back("optim.v." + params_[i].name, v_[i]);
  }
  return out;
}

void AdamW::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::vector<ParamInfo> dst;
  for (size_t i = 0; i < params_.size(); ++i) {
    dst.push_back({"optim.m." + params_[i].name, m_[i], false});
    dst.push_back({"optim.v." + params_[i].name, v_[i], false});
  }
  copy_into_named(dst, tensors, "AdamW::load_state");
}

std::vector<std::pair<std::string, Tensor>> swa_average(
    const std::deque<std::vector<std::pair<std::string, Tensor>>>& snapshots) {
  if (snapshots.empty()) throw ConfigError("swa_average: no snapshots");
  const auto& first = snapshots.front();
  std::vector<std::pair<std::string, Tensor>> avg;
  for (const auto& [name, tensor] : first) {
    avg.emplace_back(name, Tensor::zeros(tensor.shape(), tensor.dtype()));
  }
  const double w = 1.0 / static_cast<double>(snapshots.size());
  for (const auto& snap : snapshots) {
    if (snap.size() != first.size()) throw ConfigError("swa_average: snapshot size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
      const auto& [name, tensor] = snap[i];
      if (name != avg[i].first || tensor.shape() != avg[i].second.shape()) {
        throw ConfigError("swa_average: tensor '" + name + "' shape or order mismatch");
      }
      dispatch_dtype(tensor.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dst = avg[i].second.data<T>();
        auto src = tensor.data<T>();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<T>(w * static_cast<double>(src[j]));
      });
    }
  }
  return avg;
}

namespace {

Tensor slice_log_probs(const Tensor& lp, int64_t trial) {
  const int64_t n = lp.dim(1), v = lp.dim(2);
  Tensor out = Tensor::zeros({n, v}, lp.dtype());
  dispatch_dtype(lp.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = lp.data<T>();
    auto dst = out.data<T>();
    std::copy(src.begin() + trial * n * v, src.begin() + (trial + 1) * n * v, dst.begin());
  });
  return out;
}

}  // namespace

CerPair validation_cer(DecoderModel& model, const Dataset& ds, Split split,
                       const AugmentConfig& acfg, int64_t batch_size) {
  NoGradGuard no_grad;
  const int64_t min_frames = model.config().patch_size;
  BatchPlan plan = make_batches(ds, split, batch_size, nullptr, min_frames);
  RngStream aug_rng(0);  // eval pipeline is deterministic (smoothing only)

  int64_t total_edits = 0, total_chars = 0, n = 0;
  double macro_sum = 0.0;
  for (const auto& indices : plan.batches) {
    Batch batch = load_batch(ds, indices, model.dtype());
    AugmentedBatch aug = apply_pipeline(batch.features, batch.valid_lengths, acfg,
                                        Mode::kEval, aug_rng, min_frames);
    ForwardResult fwd = model.forward(aug.features, batch.session_ids, aug.valid_lengths,
                                      Mode::kEval);
    for (size_t i = 0; i < indices.size(); ++i) {
      const std::string hyp = greedy_decode(slice_log_probs(fwd.log_probs, static_cast<int64_t>(i)),
                                            fwd.token_lengths[i]);
      const CerResult r = cer(batch.references[i], hyp);
      total_edits += r.distance;
      total_chars += static_cast<int64_t>(batch.references[i].size());
      macro_sum += r.cer;
      ++n;
    }
  }
  CerPair out;
  out.micro = total_chars > 0 ? static_cast<double>(total_edits) / static_cast<double>(total_chars) : 0.0;
  out.macro_mean = n > 0 ? macro_sum / static_cast<double>(n) : 0.0;
  return out;
}

void write_checkpoint(const std::string& path, const DecoderModel& model,
                      const AdamW* optimizer, int64_t epoch, double val_cer,
                      uint64_t seed) {
  WeightFile file;
  json meta;
  meta["kind"] = "checkpoint";
  meta["model_config"] = json::parse(model_config_to_json(model.config()));
  meta["epoch"] = epoch;
  meta["val_cer"] = val_cer;
  meta["seed"] = seed;
  meta["optim_steps"] = optimizer ? optimizer->steps_taken() : 0;
  file.meta_json = meta.dump();
  for (const auto& p : model.named_tensors()) file.tensors.emplace_back(p.name, p.tensor);
  if (optimizer) {
    for (auto& [name, tensor] : optimizer->state_tensors()) file.tensors.emplace_back(name, tensor);
  }
  write_weight_file(path, file);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const WeightFile file = read_weight_file(path);
  const json meta = json::parse(file.meta_json);
  CheckpointMeta out;
  out.epoch = meta.value("epoch", int64_t(-1));
  out.val_cer = meta.value("val_cer", 0.0);
  out.seed = meta.value("seed", uint64_t(0));
  out.optim_steps = meta.value("optim_steps", int64_t(0));
  if (meta.contains("model_config")) {
    out.model_config = model_config_from_json(meta.at("model_config").dump());
  }
  return out;
}

CheckpointMeta load_checkpoint(const std::string& path, DecoderModel& model,
                               AdamW* optimizer) {
  const WeightFile file = read_weight_file(path);
  copy_into_named(model.named_tensors(), file.tensors, "load_checkpoint");
  if (optimizer) {
    std::vector<std::pair<std::string, Tensor>> optim_tensors;
    for (const auto& [name, tensor] : file.tensors) {
      if (name.rfind("optim.", 0) == 0) optim_tensors.emplace_back(name, tensor);
    }
    optimizer->load_state(optim_tensors);
  }
  CheckpointMeta meta = read_checkpoint_meta(path);
  if (optimizer) optimizer->set_steps_taken(meta.optim_steps);
  return meta;
}

TrainResult train_loop(const Dataset& ds, const ModelConfig& mcfg,
                       const AugmentConfig& acfg, const OptimConfig& ocfg,
                       uint64_t seed, const std::string& out_dir,
                       const TrainOptions& opts) {
  ocfg.validate();
  acfg.validate();
  for (const auto& trial : ds.manifest().trials) {
    if (trial.session_id >= mcfg.num_sessions) {
      throw ConfigError("train: dataset session " + std::to_string(trial.session_id) +
                        " exceeds model num_sessions " + std::to_string(mcfg.num_sessions));
    }
  }
  fs::create_directories(out_dir);

  DecoderModel model(mcfg, Dtype::f32, seed, opts.freeze_alignment);
  AdamW optimizer(model.parameters(), ocfg);

  TrainResult result;
  result.best_val_cer = std::numeric_limits<double>::infinity();
  result.last_path = (fs::path(out_dir) / "last.ckpt").string();
  result.best_path = (fs::path(out_dir) / "best.ckpt").string();
  const std::string history_path = (fs::path(out_dir) / "history.jsonl").string();

  int64_t start_epoch = 0;
  if (!opts.resume_from.empty()) {
    const CheckpointMeta meta = load_checkpoint(opts.resume_from, model, &optimizer);
    start_epoch = meta.epoch + 1;
  }
  std::ofstream history(history_path,
                        start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!history) throw IoError("train: cannot open '" + history_path + "'");

  if (ocfg.epochs == 0 || start_epoch >= ocfg.epochs) {
    write_checkpoint(result.last_path, model, &optimizer, start_epoch - 1, -1.0, seed);
    write_checkpoint(result.best_path, model, &optimizer, start_epoch - 1, -1.0, seed);
    return result;
  }

  const int64_t min_frames = mcfg.patch_size;
  std::deque<std::vector<std::pair<std::string, Tensor>>> swa_snapshots;

  for (int64_t epoch = start_epoch; epoch < ocfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;

    RngStream shuffle_rng = RngStream(seed).fork("shuffle", static_cast<uint64_t>(epoch));
    RngStream dropout_rng = RngStream(seed).fork("dropout", static_cast<uint64_t>(epoch));
    const BatchPlan plan = make_batches(ds, Split::kTrain, ocfg.batch_size, &shuffle_rng,
                                        min_frames);
    double loss_sum = 0.0, ctc_sum = 0.0, ent_sum = 0.0;
    int64_t steps_in_epoch = 0;

    for (size_t bi = 0; bi < plan.batches.size(); ++bi) {
      Batch batch = load_batch(ds, plan.batches[bi], Dtype::f32);
      RngStream aug_rng = RngStream(seed).fork("augment",
                                               static_cast<uint64_t>(epoch) * 1000003u + bi);
      AugmentedBatch aug = apply_pipeline(batch.features, batch.valid_lengths, acfg,
                                          Mode::kTrain, aug_rng, min_frames);
      Tensor feats = aug.features;
      feats.set_requires_grad(true);  // root of the differentiable graph

      ForwardResult fwd = model.forward(feats, batch.session_ids, aug.valid_lengths,
                                        Mode::kTrain, &dropout_rng);
      CtcLossOptions loss_opts;
      loss_opts.lambda = ocfg.entropy_lambda;
      loss_opts.literal_sign = ocfg.entropy_literal_sign;
      loss_opts.include_entropy = ocfg.entropy_lambda != 0.0;
      LossBreakdown lb = ctc_objective({fwd.log_probs, fwd.token_lengths, batch.targets},
                                       loss_opts);
      if (!std::isfinite(lb.total)) {
        // Divergence: the previous epoch's checkpoints stay on disk.
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(bi));
      }
      lb.total_tensor.backward();
      const GroupLr lrs = lr_schedule(optimizer.steps_taken(), ocfg);
      const AdamW::StepResult sr = optimizer.step(lrs);
      optimizer.zero_grad();
      if (!sr.applied) {
        ++rec.skipped_steps;
        if (!opts.quiet) {
          std::cerr << "train: skipped step with non-finite gradient (epoch " << epoch
                    << ", batch " << bi << ")\n";
        }
      }
      loss_sum += lb.total;
      ctc_sum += lb.ctc;
      ent_sum += lb.entropy_term;
      rec.zeroed_trials += lb.zeroed_trials;
      ++steps_in_epoch;
    }

    const CerPair val = validation_cer(model, ds, Split::kVal, acfg, ocfg.batch_size);
    const GroupLr lrs = lr_schedule(optimizer.steps_taken(), ocfg);
    rec.train_loss = steps_in_epoch ? loss_sum / static_cast<double>(steps_in_epoch) : 0.0;
    rec.ctc = steps_in_epoch ? ctc_sum / static_cast<double>(steps_in_epoch) : 0.0;
    rec.entropy_term = steps_in_epoch ? ent_sum / static_cast<double>(steps_in_epoch) : 0.0;
    rec.val_cer = val.micro;
    rec.val_cer_macro = val.macro_mean;
    rec.lr_base = lrs.base;
    rec.lr_day = lrs.day;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);

    json line;
    line["epoch"] = rec.epoch;
    line["train_loss"] = rec.train_loss;
    line["ctc"] = rec.ctc;
    line["entropy_term"] = rec.entropy_term;
    line["val_cer"] = rec.val_cer;
    line["val_cer_macro"] = rec.val_cer_macro;
    line["lr_base"] = rec.lr_base;
    line["lr_day"] = rec.lr_day;
    line["wall_seconds"] = rec.wall_seconds;
    line["zeroed_trials"] = rec.zeroed_trials;
    line["skipped_steps"] = rec.skipped_steps;
    history << line.dump() << "\n";
    history.flush();
    if (!opts.quiet) {
      std::cerr << "epoch " << epoch << ": loss " << rec.train_loss << ", val CER "
                << rec.val_cer << " (" << rec.wall_seconds << " s)\n";
    }

    write_checkpoint(result.last_path, model, &optimizer, epoch, val.micro, seed);
    if (val.micro < result.best_val_cer) {
      result.best_val_cer = val.micro;
      result.best_epoch = epoch;
      write_checkpoint(result.best_path, model, &optimizer, epoch, val.micro, seed);
    }

    if (ocfg.swa_enabled) {
      std::vector<std::pair<std::string, Tensor>> snap;
      for (const auto& p : model.named_tensors()) snap.emplace_back(p.name, p.tensor.clone());
      swa_snapshots.push_back(std::move(snap));
      if (static_cast<int64_t>(swa_snapshots.size()) > ocfg.swa_last_k) {
        swa_snapshots.pop_front();
      }
    }
  }

  if (ocfg.swa_enabled && !swa_snapshots.empty()) {
    const auto averaged = swa_average(swa_snapshots);
    copy_into_named(model.named_tensors(), averaged, "swa");
    model.reset_bn_running_stats();
    {  // one stats pass over training data, smoothing-only augmentation
      NoGradGuard no_grad;
      RngStream aug_rng(0);
      const BatchPlan plan = make_batches(ds, Split::kTrain, ocfg.batch_size, nullptr,
                                          min_frames);
      for (const auto& indices : plan.batches) {
        Batch batch = load_batch(ds, indices, Dtype::f32);
        AugmentedBatch aug = apply_pipeline(batch.features, batch.valid_lengths, acfg,
                                            Mode::kEval, aug_rng, min_frames);
        model.forward(aug.features, batch.session_ids, aug.valid_lengths, Mode::kBnRecalib);
      }
    }
    const CerPair swa_cer = validation_cer(model, ds, Split::kVal, acfg, ocfg.batch_size);
    result.swa_val_cer = swa_cer.micro;
    result.swa_path = (fs::path(out_dir) / "swa.ckpt").string();
    write_checkpoint(result.swa_path, model, nullptr, ocfg.epochs - 1, swa_cer.micro, seed);
  }
  return result;
}

}  // namespace neurodecode
