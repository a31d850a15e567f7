#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmon/pipelines/pipelines.hpp"
#include "harmon/synthdata/judge.hpp"
#include "harmon/trainer/trainer.hpp"

namespace harmon::eval {

// Stable fingerprint of a model configuration; stamped into every report so a
// number can always be traced back to the exact shape that produced it.
std::string config_fingerprint(const pipe::BundleConfig& cfg);

// ---------------------------------------------------------------------------
// Attribute-compliance scoring of generated images ("toy GenEval"): a pixel
// judge recovers the scene and exact attribute match is scored per category.
// No learned grader anywhere in the path.

enum class GenCategory { single_obj, two_obj, counting, colors, position, color_attr };

struct GenEvalReport {
  std::array<double, 6> category{};  // indexed by GenCategory
  double overall = 0.0;              // unweighted mean of the six
  int prompts_per_category = 0;
  std::string config_hash;
  std::uint64_t seed = 0;

  static const std::array<std::string, 6>& category_names();
  double at(GenCategory c) const { return category[static_cast<int>(c)]; }
  nlohmann::json to_json() const;
  std::string table() const;
};

// A category's test case: the symbolic target plus the caption handed to the
// generator. The spec is what the judge scores against.
struct GenPrompt {
  GenCategory category;
  data::SceneSpec spec;
  std::string caption;
};

GenPrompt sample_gen_prompt(GenCategory c, num::Rng& rng);

// Category criterion on the judged pixels:
//   single_obj  some object of the prompted shape
//   two_obj     per-shape counts cover the prompt's
//   counting    exact object count
//   colors      shape+color binding present
//   position    shape+quadrant binding present
//   color_attr  both shape+color bindings present
bool prompt_satisfied(const GenPrompt& p, const data::JudgedScene& judged);

// Pixels for one prompt. Real models read only the caption; oracle generators
// in tests may read the spec.
using Generator = std::function<std::vector<float>(const GenPrompt&, num::Rng&)>;

GenEvalReport geneval_toy(const Generator& gen, int image_size, int n_prompts, num::Rng& rng);

template <typename T>
GenEvalReport geneval_toy(const pipe::ModelBundle<T>& model, int n_prompts, num::Rng& rng,
                          const pipe::GenOptions& opt = {});

// ---------------------------------------------------------------------------
// Linear probing of the visual encoder: mean-pooled nothing-masked encoder
// outputs, one linear layer trained by softmax regression, held-out top-1.

struct ProbeReport {
  std::string encoder_id;
  std::string feature_source;
  double accuracy = 0.0;
  int n_train = 0, n_heldout = 0, n_classes = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
};

// Multinomial logistic regression from zero init (convex: no rng needed).
// Returns the row-major [dim+1, n_classes] weight matrix, bias row last.
std::vector<double> fit_softmax_probe(const std::vector<std::vector<double>>& x,
                                      const std::vector<int>& y, int n_classes,
                                      int steps = 400, double lr = 0.5);
double probe_accuracy(const std::vector<double>& w, int n_classes,
                      const std::vector<std::vector<double>>& x, const std::vector<int>& y);

// One feature row per sample: encoder outputs with every patch visible,
// mean-pooled over all slots (buffer included).
template <typename T>
std::vector<std::vector<double>> probe_features(const pipe::ModelBundle<T>& model,
                                                const std::vector<data::ImageSample>& samples);

// Shape-class probe over single-object scenes (multi-object samples are
// skipped). EvalError when the filtered training set has fewer than two
// classes or either side is empty.
template <typename T>
ProbeReport linear_probe(const pipe::ModelBundle<T>& model,
                         const std::vector<data::ImageSample>& train,
                         const std::vector<data::ImageSample>& heldout);

// ---------------------------------------------------------------------------
// Gaussian-moment distance between two feature sets:
//   ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^{1/2})
// with the product root taken through the symmetric PSD square root and
// covariances regularized by +1e-6 I. EvalError on < 2 samples or dim mismatch.
double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b);

// ---------------------------------------------------------------------------
// Question answering against the scene's own QA list; exact string match.

struct QaReport {
  double accuracy = 0.0;        // all questions
  double color_accuracy = 0.0;  // "what color ..." subset
  int n_questions = 0, n_color_questions = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
};

template <typename T>
QaReport qa_eval(const pipe::ModelBundle<T>& model, const std::vector<data::ImageSample>& scenes);

// ---------------------------------------------------------------------------
// Co-training ablation: three runs from identical seeds and configs differing
// only in the task mix (generation-only 0:0:1, understanding-only 0:1:0, and
// the configured unified mix), each scored on both tasks.

struct AblationConfig {
  pipe::BundleConfig bundle;
  train::TrainConfig train;
  int eval_prompts = 16;    // per category
  int heldout_scenes = 32;  // QA scenes drawn past the training pool
  std::uint64_t eval_seed = 1234;
};

struct AblationArm {
  std::string name;
  GenEvalReport gen;
  QaReport qa;
};

struct AblationReport {
  AblationArm unified, gen_only, und_only;
  double geneval_delta = 0.0;  // unified - gen_only, overall
  double qa_delta = 0.0;       // unified - und_only, accuracy
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
  std::string table() const;
};

AblationReport ablation_unified_vs_single(const AblationConfig& cfg);

}  // namespace harmon::eval
