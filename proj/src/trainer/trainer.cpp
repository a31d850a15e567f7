#include "harmon/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "harmon/common.hpp"
#include "harmon/numerics/checkpoint.hpp"
#include "harmon/numerics/ops.hpp"

namespace harmon::train {

namespace fs = std::filesystem;

namespace {

const char* task_name(pipe::Task t) {
  switch (t) {
    case pipe::Task::text: return "text";
    case pipe::Task::image_to_text: return "i2t";
    case pipe::Task::text_to_image: return "t2i";
  }
  return "?";
}

// Distinct stream ids so pool text, scene indices, and the training loop never
// share a substream of the run seed.
constexpr std::uint64_t kTextStream = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kTrainStream = 0x6c62272e07bb0142ull;

template <typename T>
std::vector<const data::ImageSample*> pick_scenes(const DataPool& pool, int n, num::Rng& rng) {
  if (pool.scenes.empty()) throw ConfigError("trainer: the data pool has no scenes");
  std::vector<const data::ImageSample*> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(&pool.scenes[static_cast<std::size_t>(
        rng.next_int(0, static_cast<int>(pool.scenes.size()) - 1))]);
  return out;
}

void atomic_write_text(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("trainer: cannot open " + tmp);
    out << body;
  }
  fs::rename(tmp, path);
}

}  // namespace

void StageConfig::validate() const {
  if (steps <= 0 || batch <= 0) throw ConfigError("stage: steps and batch must be positive");
  if (ratio[0] < 0 || ratio[1] < 0 || ratio[2] < 0)
    throw ConfigError("stage: negative data-ratio entry");
  if (ratio[0] + ratio[1] + ratio[2] == 0) throw ConfigError("stage: all-zero data ratio");
  if (caption_dropout_p < 0.0 || caption_dropout_p > 1.0)
    throw ConfigError("stage: caption dropout outside [0,1]");
  if (lr_decoder < 0.0 || lr_encoder < 0.0 || lr_llm < 0.0)
    throw ConfigError("stage: negative learning rate");
  if (grad_clip < 0.0) throw ConfigError("stage: negative gradient clip");
}

StageConfig desk_stage(int id) {
  StageConfig c;
  c.id = id;
  switch (id) {
    case 1:
      c.steps = 2000;
      c.ratio = {0, 1, 2};
      c.class_captions = true;
      c.frozen_groups = {"llm"};
      c.lr_decoder = 1e-3;
      c.lr_encoder = 1e-4;
      c.lr_llm = 1e-4;
      break;
    case 2:
      c.steps = 2000;
      c.ratio = {1, 3, 8};
      c.lr_decoder = 1e-3;
      c.lr_encoder = 1e-4;
      c.lr_llm = 1e-4;
      break;
    case 3:
      c.steps = 1000;
      c.ratio = {1, 3, 16};
      c.lr_decoder = 2e-4;
      c.lr_encoder = 2e-5;
      c.lr_llm = 2e-5;
      break;
    default:
      throw ConfigError("desk_stage: id must be 1, 2, or 3");
  }
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

DataPool make_pool(std::uint64_t seed, int n_scenes, int n_texts, int image_size) {
  if (n_scenes <= 0) throw ConfigError("make_pool: need at least one scene");
  DataPool pool;
  pool.scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i)
    pool.scenes.push_back(data::make_sample(seed, static_cast<std::uint64_t>(i), image_size));
  if (n_texts > 0) {
    num::Rng rng = num::Rng(seed).split(kTextStream);
    pool.texts = data::text_corpus(rng, n_texts);
  }
  return pool;
}

pipe::Task sample_task(const std::array<int, 3>& ratio, num::Rng& rng) {
  if (ratio[0] < 0 || ratio[1] < 0 || ratio[2] < 0)
    throw ConfigError("sample_task: negative ratio entry");
  const int total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0) throw ConfigError("sample_task: all-zero ratio");
  const int draw = static_cast<int>(rng.next_int(0, total - 1));
  if (draw < ratio[0]) return pipe::Task::text;
  if (draw < ratio[0] + ratio[1]) return pipe::Task::image_to_text;
  return pipe::Task::text_to_image;
}

template <typename T>
void caption_dropout(const pipe::ModelBundle<T>& model, pipe::TaskBatch<T>& batch, double p,
                     num::Rng& rng) {
  if (batch.task != pipe::Task::text_to_image)
    throw ConfigError("caption_dropout: only generation batches have captions");
  if (p < 0.0 || p > 1.0) throw ConfigError("caption_dropout: p outside [0,1]");
  auto uncond = tok::build_gen_prompt(model.vocab(), "");
  const int pad = model.config().gen_prompt_pad;
  std::vector<int> uncond_row = uncond.ids;
  uncond_row.resize(static_cast<std::size_t>(pad), tok::Vocab::kPad);
  for (std::size_t i = 0; i < batch.tokens.size(); ++i)
    if (rng.next_uniform() < p) {
      batch.captions[i].clear();
      batch.tokens[i] = uncond_row;
      batch.prompt_len[i] = uncond.length();
    }
}

template <typename T>
pipe::TaskBatch<T> next_batch(const pipe::ModelBundle<T>& model, const DataPool& pool,
                              const StageConfig& cfg, num::Rng& rng) {
  const pipe::Task task = sample_task(cfg.ratio, rng);
  if (task == pipe::Task::text) {
    if (pool.texts.empty()) throw ConfigError("trainer: text batch drawn but the pool has no text");
    std::vector<std::string> lines;
    lines.reserve(static_cast<std::size_t>(cfg.batch));
    for (int i = 0; i < cfg.batch; ++i)
      lines.push_back(pool.texts[static_cast<std::size_t>(
          rng.next_int(0, static_cast<int>(pool.texts.size()) - 1))]);
    return pipe::make_text_batch(model, lines);
  }

  auto picks = pick_scenes<T>(pool, cfg.batch, rng);
  std::vector<data::ImageSample> samples;
  samples.reserve(picks.size());
  for (auto* p : picks) samples.push_back(*p);

  if (task == pipe::Task::image_to_text) return pipe::make_und_batch(model, samples, rng);

  std::vector<std::string> captions;
  captions.reserve(samples.size());
  for (const auto& s : samples)
    captions.push_back(cfg.class_captions ? data::shape_word(s.spec.objects.front().shape)
                                          : s.caption);
  auto batch = pipe::make_gen_batch(model, samples, captions);
  caption_dropout(model, batch, cfg.caption_dropout_p, rng);
  return batch;
}

template <typename T>
void apply_stage(pipe::ModelBundle<T>& model, num::OptimizerState<T>& opt,
                 const StageConfig& cfg) {
  cfg.validate();
  if (cfg.image_size != model.config().mar.image_size)
    throw ConfigError("stage: resolution changes across stages are not enabled");
  auto& ps = model.params();
  opt.group_lr["decoder"] = cfg.lr_decoder;
  opt.group_lr["encoder"] = cfg.lr_encoder;
  opt.group_lr["llm"] = cfg.lr_llm;
  opt.lr = cfg.lr_encoder;
  for (const char* g : {"encoder", "decoder", "llm"}) ps.set_trainable_group(g, true);
  for (const auto& g : cfg.frozen_groups) ps.set_trainable_group(g, false);
  for (const auto& name : ps.names())
    if (ps.at(name).trainable) (void)ps.tensor(name);  // materialize grad buffers
}

template <typename T>
StepRecord train_step(pipe::ModelBundle<T>& model, num::OptimizerState<T>& opt,
                      const StageConfig& cfg, const DataPool& pool, num::Rng& rng,
                      int step_index) {
  auto batch = next_batch(model, pool, cfg, rng);
  auto& ps = model.params();
  ps.zero_grads();
  auto stats = pipe::unified_forward(model, batch, rng);
  const double loss = static_cast<double>(stats.loss.item());
  if (!std::isfinite(loss))
    throw NumericsError("training diverged: non-finite loss at stage " + std::to_string(cfg.id) +
                        " step " + std::to_string(step_index) + " task " + task_name(batch.task));
  num::backward(stats.loss);
  if (cfg.grad_clip > 0.0) {
    const double norm = ps.grad_norm();
    if (norm > cfg.grad_clip) ps.scale_grads(cfg.grad_clip / norm);
  }
  num::adamw_step(ps, opt);
  return {cfg.id, step_index, batch.task, loss, cfg.lr_decoder, cfg.lr_llm};
}

nlohmann::json StepRecord::to_json() const {
  return {{"stage", stage},          {"step", step}, {"task", task_name(task)},
          {"loss", loss},            {"lr_decoder", lr_decoder},
          {"lr_llm", lr_llm}};
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["checkpoints"] = checkpoints;
  auto& log_j = j["log"] = nlohmann::json::array();
  for (const auto& r : log) log_j.push_back(r.to_json());
  return j;
}

namespace {

template <typename T>
void save_training_checkpoint(const std::string& path, pipe::ModelBundle<T>& model,
                              const num::OptimizerState<T>& opt, std::uint64_t seed,
                              int stage_index, int next_step, const num::Rng& rng) {
  num::CheckpointData ck;
  num::pack_params(model.params(), ck);
  num::pack_optim(opt, ck);
  ck.meta["run"] = {{"seed", seed},
                    {"stage_index", stage_index},
                    {"next_step", next_step},
                    {"rng_key", rng.key()},
                    {"rng_counter", rng.counter()}};
  ck.meta["model"] = model.config().to_json();
  num::save_checkpoint(path, ck);
}

}  // namespace

template <typename T>
RunManifest run_training(pipe::ModelBundle<T>& model, const TrainConfig& cfg, const DataPool& pool,
                         const std::string& resume_from) {
  if (cfg.stages.empty()) throw ConfigError("run_training: no stages configured");
  fs::create_directories(cfg.out_dir);

  RunManifest man;
  man.seed = cfg.seed;
  num::OptimizerState<T> opt;
  num::Rng rng = num::Rng(cfg.seed).split(kTrainStream);
  int start_stage = 0, start_step = 0;

  if (!resume_from.empty()) {
    auto ck = num::load_checkpoint(resume_from);
    if (!ck.meta.contains("run")) throw CheckpointError("resume: not a training checkpoint");
    num::unpack_params(ck, model.params());
    num::unpack_optim(ck, opt);
    const auto& run = ck.meta["run"];
    start_stage = run["stage_index"].get<int>();
    start_step = run["next_step"].get<int>();
    rng = num::Rng::restore(run["rng_key"].get<std::uint64_t>(),
                            run["rng_counter"].get<std::uint64_t>());
  }

  std::ofstream log_file(cfg.out_dir + "/train_log.jsonl",
                         resume_from.empty() ? std::ios::trunc : std::ios::app);
  const std::string latest = cfg.out_dir + "/latest.ckpt";
  int executed = 0;

  for (std::size_t si = static_cast<std::size_t>(start_stage); si < cfg.stages.size(); ++si) {
    const StageConfig& sc = cfg.stages[si];
    apply_stage(model, opt, sc);
    const int first = si == static_cast<std::size_t>(start_stage) ? start_step : 0;
    for (int step = first; step < sc.steps; ++step) {
      StepRecord rec = train_step(model, opt, sc, pool, rng, step);
      man.log.push_back(rec);
      log_file << rec.to_json().dump() << '\n';
      ++executed;
      if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) {
        std::printf("[stage %d] step %d/%d task %s loss %.4f\n", sc.id, step + 1, sc.steps,
                    task_name(rec.task), rec.loss);
        std::fflush(stdout);
      }
      const bool stage_done = step + 1 == sc.steps;
      const bool halting = cfg.stop_after > 0 && executed >= cfg.stop_after;
      if (stage_done || halting ||
          (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)) {
        const int ns = stage_done ? 0 : step + 1;
        const int nsi = stage_done ? static_cast<int>(si) + 1 : static_cast<int>(si);
        save_training_checkpoint(latest, model, opt, cfg.seed, nsi, ns, rng);
      }
      if (halting) return man;
    }
    const std::string stage_path = cfg.out_dir + "/stage" + std::to_string(sc.id) + ".ckpt";
    save_training_checkpoint(stage_path, model, opt, cfg.seed, static_cast<int>(si) + 1, 0, rng);
    man.checkpoints.push_back(stage_path);
  }

  const std::string final_path = cfg.out_dir + "/final.ckpt";
  save_training_checkpoint(final_path, model, opt, cfg.seed, static_cast<int>(cfg.stages.size()),
                           0, rng);
  man.checkpoints.push_back(final_path);
  atomic_write_text(cfg.out_dir + "/manifest.json", man.to_json().dump(2) + "\n");
  return man;
}

namespace {

double mean_task_loss(const RunManifest& man, pipe::Task task, int window, bool from_front) {
  if (window <= 0) throw ConfigError("mean_task_loss: window must be positive");
  std::vector<double> losses;
  for (const auto& r : man.log)
    if (r.task == task) losses.push_back(r.loss);
  if (losses.empty()) throw ConfigError("mean_task_loss: no records for the task");
  const int n = std::min<int>(window, static_cast<int>(losses.size()));
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    sum += from_front ? losses[static_cast<std::size_t>(i)]
                      : losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  return sum / n;
}

}  // namespace

double mean_task_loss_first(const RunManifest& man, pipe::Task task, int window) {
  return mean_task_loss(man, task, window, true);
}
double mean_task_loss_last(const RunManifest& man, pipe::Task task, int window) {
  return mean_task_loss(man, task, window, false);
}

#define HARMON_TRAIN_INSTANTIATE(T)                                                            \
  template void caption_dropout<T>(const pipe::ModelBundle<T>&, pipe::TaskBatch<T>&, double,   \
                                   num::Rng&);                                                 \
  template pipe::TaskBatch<T> next_batch<T>(const pipe::ModelBundle<T>&, const DataPool&,      \
                                            const StageConfig&, num::Rng&);                    \
  template void apply_stage<T>(pipe::ModelBundle<T>&, num::OptimizerState<T>&,                 \
                               const StageConfig&);                                            \
  template StepRecord train_step<T>(pipe::ModelBundle<T>&, num::OptimizerState<T>&,            \
                                    const StageConfig&, const DataPool&, num::Rng&, int);      \
  template RunManifest run_training<T>(pipe::ModelBundle<T>&, const TrainConfig&,              \
                                       const DataPool&, const std::string&);

HARMON_TRAIN_INSTANTIATE(float)
HARMON_TRAIN_INSTANTIATE(double)
#undef HARMON_TRAIN_INSTANTIATE

}  // namespace harmon::train
