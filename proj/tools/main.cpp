// neurodecode: character-level neural speech decoding pipeline.
//
// Subcommands: gen-data, train, eval, decode. A single JSON config file
// supplies defaults; command-line flags override it (flags > file > defaults).
// NEURODECODE_THREADS caps internal parallelism.

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "neurodecode/commands.hpp"
#include "neurodecode/error.hpp"

using namespace neurodecode;

int main(int argc, char** argv) {
  CLI::App app{"character-level neural speech decoder"};
  app.require_subcommand(1);
  app.footer("Environment: NEURODECODE_THREADS caps internal parallelism.");

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> data_path;
  app.add_option("--config", config_path, "JSON run config file");
  app.add_option("--seed", seed, "override the run seed");
  app.add_option("--out", out_dir, "override the output directory");
  app.add_option("--data", data_path, "override the dataset directory");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");

  auto* train = app.add_subcommand("train", "train a decoder");
  std::optional<int64_t> epochs, batch_size;
  TrainFlags train_flags;
  bool swa = false;
  train->add_option("--epochs", epochs, "override epoch count");
  train->add_option("--batch-size", batch_size, "override batch size");
  train->add_flag("--no-augment", train_flags.no_augment,
                  "disable all stochastic augmentations (smoothing stays)");
  train->add_flag("--no-align", train_flags.no_align,
                  "freeze session adapters at identity");
  train->add_flag("--swa", swa, "average the last checkpoints after training");
  train->add_option("--resume", train_flags.resume_from, "resume from a checkpoint");
  train->add_flag("--quiet", train_flags.quiet, "suppress per-epoch progress");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and emit reports");
  std::string eval_checkpoint;
  std::string eval_split = "val";
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* decode = app.add_subcommand("decode", "decode one trial to text");
  std::string decode_checkpoint, trial_path;
  DecodeFlags decode_flags;
  decode->add_option("checkpoint", decode_checkpoint, "checkpoint file")->required();
  decode->add_option("trial", trial_path, "dataset directory holding the trial")->required();
  decode->add_flag("--with-frames", decode_flags.with_frames,
                   "also print per-frame argmax token indices");
  decode->add_option("--trial-index", decode_flags.trial_index,
                     "which trial of the dataset to decode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_run_config_file(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (seed) {
    cfg.seed = *seed;
    cfg.optim.seed = *seed;
  }
  if (out_dir) cfg.out_dir = *out_dir;
  if (data_path) cfg.data_path = *data_path;
  if (epochs) cfg.optim.epochs = *epochs;
  if (batch_size) cfg.optim.batch_size = *batch_size;
  if (swa) cfg.optim.swa_enabled = true;

  if (gen->parsed()) {
    // --out names the dataset directory for this command.
    if (out_dir) cfg.data_path = *out_dir;
    return cmd_gen_data(cfg);
  }
  if (train->parsed()) return cmd_train(cfg, train_flags);
  if (eval->parsed()) return cmd_eval(cfg, eval_checkpoint, split_from_name(eval_split));
  if (decode->parsed()) return cmd_decode(cfg, decode_checkpoint, trial_path, decode_flags);
  return 2;
}
