#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmon/numerics/optim.hpp"
#include "harmon/pipelines/pipelines.hpp"

namespace harmon::train {

// One training stage: per-group learning rates (the decoder runs 10x the
// encoder/LLM rate), task-mix ratio text : image-to-text : text-to-image,
// frozen parameter groups, and the caption-dropout rate.
struct StageConfig {
  int id = 1;
  int steps = 2000;
  int batch = 32;
  double lr_decoder = 1e-3;
  double lr_encoder = 1e-4;
  double lr_llm = 1e-4;
  std::array<int, 3> ratio{0, 1, 2};
  int image_size = 32;
  double caption_dropout_p = 0.1;
  // Stage-I style class-conditional captions: the first object's shape word
  // stands in for the caption.
  bool class_captions = false;
  std::vector<std::string> frozen_groups;
  double grad_clip = 1.0;  // global-norm cap; 0 disables

  void validate() const;  // ConfigError on nonsense
};

// The three-stage desk recipe (id in 1..3).
StageConfig desk_stage(int id);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/desk";
  int scenes = 10000;
  int text_lines = 4096;
  int checkpoint_every = 500;  // steps between latest.ckpt writes
  int log_every = 100;         // stdout progress period; 0 = silent
  // Halt this invocation after N optimizer steps (0 = run to completion),
  // writing latest.ckpt at the stopping point; resume continues from there.
  int stop_after = 0;
  std::vector<StageConfig> stages{desk_stage(1), desk_stage(2), desk_stage(3)};

  static TrainConfig desk();
};

// Training corpus held in memory: rendered scenes (index-addressed substreams
// of `seed`, so indices >= n_scenes stay free for held-out evaluation sets)
// plus caption-grammar sentences for the text stream.
struct DataPool {
  std::vector<data::ImageSample> scenes;
  std::vector<std::string> texts;
};
DataPool make_pool(std::uint64_t seed, int n_scenes, int n_texts, int image_size);

// Task drawn with probability proportional to ratio. ConfigError when the
// ratio is all zero or has a negative entry.
pipe::Task sample_task(const std::array<int, 3>& ratio, num::Rng& rng);

// Replaces each caption independently with the empty prompt at rate p.
// ConfigError on a non-generation batch or p outside [0,1].
template <typename T>
void caption_dropout(const pipe::ModelBundle<T>& model, pipe::TaskBatch<T>& batch, double p,
                     num::Rng& rng);

// Draws the task, the samples, and (for generation) the dropout in one rng
// stream, so a step is a pure function of the rng state.
template <typename T>
pipe::TaskBatch<T> next_batch(const pipe::ModelBundle<T>& model, const DataPool& pool,
                              const StageConfig& cfg, num::Rng& rng);

struct StepRecord {
  int stage = 0;
  int step = 0;  // within the stage
  pipe::Task task = pipe::Task::text;
  double loss = 0.0;
  double lr_decoder = 0.0;
  double lr_llm = 0.0;

  nlohmann::json to_json() const;
};

struct RunManifest {
  std::uint64_t seed = 0;
  std::vector<StepRecord> log;
  std::vector<std::string> checkpoints;

  nlohmann::json to_json() const;
};

// Sets group learning rates, applies freezes, and materializes gradient
// buffers for every trainable parameter so a task that skips a subgraph still
// yields a well-defined (zero) gradient there.
template <typename T>
void apply_stage(pipe::ModelBundle<T>& model, num::OptimizerState<T>& opt, const StageConfig& cfg);

// One batch, one backward, optional global-norm clip, one AdamW update.
// NumericsError with step diagnostics when the loss is not finite.
template <typename T>
StepRecord train_step(pipe::ModelBundle<T>& model, num::OptimizerState<T>& opt,
                      const StageConfig& cfg, const DataPool& pool, num::Rng& rng, int step_index);

// Runs cfg.stages in order, appending to the manifest and writing atomic
// checkpoints (latest.ckpt every checkpoint_every steps, stage<id>.ckpt at
// stage ends, final.ckpt at the end) plus train_log.jsonl / manifest.json
// under cfg.out_dir. With resume_from, restores parameters, optimizer
// moments, and the rng, then continues mid-run; subsequent step losses are
// bit-identical to an uninterrupted run.
template <typename T>
RunManifest run_training(pipe::ModelBundle<T>& model, const TrainConfig& cfg, const DataPool& pool,
                         const std::string& resume_from = "");

// Mean loss over the first / last `window` records of one task across the
// whole log. ConfigError when no records match.
double mean_task_loss_first(const RunManifest& man, pipe::Task task, int window);
double mean_task_loss_last(const RunManifest& man, pipe::Task task, int window);

}  // namespace harmon::train
