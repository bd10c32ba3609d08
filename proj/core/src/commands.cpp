#include "neurodecode/commands.hpp"

#include <filesystem>
#include <functional>
#include <iostream>

#include <json.hpp>

#include "neurodecode/ctc.hpp"
#include "neurodecode/error.hpp"
#include "neurodecode/evalreport.hpp"
#include "neurodecode/weights_io.hpp"

namespace neurodecode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_mapped(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const TrialTooShortError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

DecoderModel model_from_checkpoint(const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) {
    throw CheckpointMismatchError("checkpoint '" + checkpoint + "' does not exist");
  }
  const ModelConfig mcfg = peek_model_config(checkpoint);
  DecoderModel model(mcfg, Dtype::f32, 0);
  load_model_weights(model, checkpoint);
  return model;
}

void check_dataset_compatible(const DecoderModel& model, const Dataset& ds) {
  if (ds.channels() != model.config().channels) {
    throw CheckpointMismatchError(
        "dataset has " + std::to_string(ds.channels()) + " channels, checkpoint expects " +
        std::to_string(model.config().channels));
  }
  for (const auto& t : ds.manifest().trials) {
    if (t.session_id >= model.config().num_sessions) {
      throw CheckpointMismatchError("dataset session " + std::to_string(t.session_id) +
                                    " exceeds checkpoint num_sessions " +
                                    std::to_string(model.config().num_sessions));
    }
  }
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg) {
  return run_mapped([&] {
    const SynthDataset synth = generate_synthetic(cfg.synth, cfg.seed);
    write_dataset(cfg.data_path, cfg.synth.channels, synth.sessions, synth.trials);

    RunConfig resolved = cfg;
    write_run_config_file(resolved, (fs::path(cfg.data_path) / "run_config.json").string());

    int64_t n_train = 0, n_val = 0, n_test = 0;
    for (const auto& t : synth.trials) {
      if (t.split == Split::kTrain) ++n_train;
      else if (t.split == Split::kVal) ++n_val;
      else ++n_test;
    }
    json summary;
    summary["path"] = cfg.data_path;
    summary["channels"] = cfg.synth.channels;
    summary["sessions"] = synth.sessions.size();
    summary["train_trials"] = n_train;
    summary["val_trials"] = n_val;
    summary["test_trials"] = n_test;
    std::cout << summary.dump() << "\n";
  });
}

int cmd_train(const RunConfig& cfg, const TrainFlags& flags) {
  return run_mapped([&] {
    const Dataset ds = Dataset::open(cfg.data_path);

    RunConfig resolved = cfg;
    // The dataset is authoritative for the adapter count.
    resolved.model.num_sessions = static_cast<int64_t>(ds.manifest().sessions.size());
    if (flags.no_augment) resolved.augment.disable_stochastic();

    const ParamCount pc = count_parameters(resolved.model);
    std::cerr << "model parameters: " << pc.with_adapters << " ("
              << pc.without_adapters << " excluding " << resolved.model.num_sessions
              << " session adapters)\n";

    fs::create_directories(resolved.out_dir);
    write_run_config_file(resolved, (fs::path(resolved.out_dir) / "run_config.json").string());

    TrainOptions opts;
    opts.freeze_alignment = flags.no_align;
    opts.resume_from = flags.resume_from;
    opts.quiet = flags.quiet;
    const TrainResult result = train_loop(ds, resolved.model, resolved.augment,
                                          resolved.optim, resolved.seed, resolved.out_dir,
                                          opts);
    json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["best_val_cer"] = result.best_val_cer;
    summary["best_checkpoint"] = result.best_path;
    summary["last_checkpoint"] = result.last_path;
    if (!result.swa_path.empty()) {
      summary["swa_checkpoint"] = result.swa_path;
      summary["swa_val_cer"] = result.swa_val_cer;
    }
    std::cout << summary.dump() << "\n";
  });
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, Split split) {
  return run_mapped([&] {
    DecoderModel model = model_from_checkpoint(checkpoint);
    const Dataset ds = Dataset::open(cfg.data_path);
    check_dataset_compatible(model, ds);

    const EvalReport report =
        evaluate_split(model, ds, split, cfg.augment, cfg.optim.batch_size);
    fs::create_directories(cfg.out_dir);
    emit_report(report, cfg.out_dir);
    write_run_config_file(cfg, (fs::path(cfg.out_dir) / "run_config.json").string());
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

    json summary;
    summary["split"] = split_name(split);
    summary["n_utterances"] = report.utterances.size();
    summary["micro_cer"] = report.micro_cer;
    summary["macro_cer"] = report.macro_cer;
    summary["report_dir"] = cfg.out_dir;
    std::cout << summary.dump() << "\n";
  });
}

int cmd_decode(const RunConfig& cfg, const std::string& checkpoint,
               const std::string& trial_path, const DecodeFlags& flags) {
  return run_mapped([&] {
    DecoderModel model = model_from_checkpoint(checkpoint);
    const Dataset ds = Dataset::open(trial_path);
    check_dataset_compatible(model, ds);
    if (flags.trial_index < 0 || static_cast<size_t>(flags.trial_index) >= ds.size()) {
      throw ConfigError("trial index " + std::to_string(flags.trial_index) +
                        " out of range (dataset has " + std::to_string(ds.size()) +
                        " trials)");
    }
    const TrialRecord rec = ds.load_trial(static_cast<size_t>(flags.trial_index));
    if (rec.frames < model.config().patch_size) {
      throw TrialTooShortError("trial '" + rec.trial_id + "' has " +
                               std::to_string(rec.frames) + " frames, the model needs >= " +
                               std::to_string(model.config().patch_size));
    }

    Batch batch = load_batch(ds, {static_cast<size_t>(flags.trial_index)}, Dtype::f32);
    NoGradGuard no_grad;
    RngStream aug_rng(0);
    AugmentedBatch aug = apply_pipeline(batch.features, batch.valid_lengths, cfg.augment,
                                        Mode::kEval, aug_rng, model.config().patch_size);
    ForwardResult fwd = model.forward(aug.features, batch.session_ids, aug.valid_lengths,
                                      Mode::kEval);
    const int64_t n = fwd.log_probs.dim(1), v = fwd.log_probs.dim(2);
    Tensor lp = Tensor::zeros({n, v}, fwd.log_probs.dtype());
    dispatch_dtype(lp.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto src = fwd.log_probs.data<T>();
      auto dst = lp.data<T>();
      std::copy(src.begin(), src.begin() + n * v, dst.begin());
    });
    if (flags.with_frames) {
      const auto frames = greedy_frame_argmax(lp, fwd.token_lengths[0]);
      std::cout << "frames:";
      for (int f : frames) std::cout << " " << f;
      std::cout << "\n";
    }
    std::cout << greedy_decode(lp, fwd.token_lengths[0]) << "\n";
  });
}

}  // namespace neurodecode
