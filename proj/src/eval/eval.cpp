#include "harmon/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "harmon/common.hpp"
#include "harmon/synthdata/dataset.hpp"

namespace harmon::eval {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool same_shape(data::JudgedShape j, data::ShapeKind s) {
  switch (s) {
    case data::ShapeKind::square: return j == data::JudgedShape::square;
    case data::ShapeKind::disk: return j == data::JudgedShape::disk;
    case data::ShapeKind::triangle: return j == data::JudgedShape::triangle;
  }
  return false;
}

// Distinct quadrants, iid shape/color, canonical order.
data::SceneSpec random_spec(int count, num::Rng& rng) {
  std::vector<int> quads{0, 1, 2, 3};
  rng.shuffle(quads);
  data::SceneSpec spec;
  for (int i = 0; i < count; ++i) {
    data::SceneObject o;
    o.shape = static_cast<data::ShapeKind>(rng.next_int(0, 2));
    o.color = static_cast<data::ColorName>(rng.next_int(0, 3));
    o.quadrant = static_cast<data::Quadrant>(quads[i]);
    spec.objects.push_back(o);
  }
  spec.canonicalize();
  return spec;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string config_fingerprint(const pipe::BundleConfig& c) {
  std::ostringstream s;
  s << c.mar.image_size << ' ' << c.mar.patch << ' ' << c.mar.n_buffer << ' ' << c.mar.width << ' '
    << c.mar.enc_layers << ' ' << c.mar.dec_layers << ' ' << c.mar.heads << ' ' << c.lm.layers
    << ' ' << c.lm.heads << ' ' << c.lm.width << ' ' << c.lm.vocab << ' ' << c.lm.max_seq << ' '
    << c.lm.mar_width << ' ' << c.head.patch_dim << ' ' << c.head.cond_dim << ' '
    << c.head.t_emb_dim << ' ' << c.head.hidden << ' ' << c.head.hidden_layers << ' '
    << c.diffusion_T << ' ' << c.diffusion_sample_steps << ' ' << c.gen_prompt_pad << ' '
    << c.train_mask_min;
  return hex64(fnv1a(s.str()));
}

// --------------------------------------------------------------------------
// Attribute-compliance scoring

const std::array<std::string, 6>& GenEvalReport::category_names() {
  static const std::array<std::string, 6> names{"Single Obj.", "Two Obj.",  "Counting",
                                               "Colors",      "Position",  "Color Attri."};
  return names;
}

nlohmann::json GenEvalReport::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (int i = 0; i < 6; ++i)
    cats.push_back({{"name", category_names()[i]}, {"accuracy", category[i]}});
  return {{"categories", cats},
          {"overall", overall},
          {"prompts_per_category", prompts_per_category},
          {"config", config_hash},
          {"seed", seed}};
}

std::string GenEvalReport::table() const {
  std::ostringstream out;
  char line[64];
  for (int i = 0; i < 6; ++i) {
    std::snprintf(line, sizeof(line), "%-14s %.4f\n", category_names()[i].c_str(), category[i]);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-14s %.4f\n", "Overall", overall);
  out << line;
  return out.str();
}

GenPrompt sample_gen_prompt(GenCategory c, num::Rng& rng) {
  GenPrompt p;
  p.category = c;
  switch (c) {
    case GenCategory::single_obj:
    case GenCategory::colors:
    case GenCategory::position: p.spec = random_spec(1, rng); break;
    case GenCategory::two_obj: p.spec = random_spec(2, rng); break;
    // Plural counts only: a one-object counting prompt would duplicate the
    // single-object category and let any lone blob pass.
    case GenCategory::counting: p.spec = random_spec(rng.next_int(2, 3), rng); break;
    case GenCategory::color_attr:
      // Distinct shapes and colors keep both bindings unambiguous.
      do {
        p.spec = random_spec(2, rng);
      } while (p.spec.objects[0].shape == p.spec.objects[1].shape ||
               p.spec.objects[0].color == p.spec.objects[1].color);
      break;
  }
  p.caption = data::caption(p.spec);
  return p;
}

bool prompt_satisfied(const GenPrompt& p, const data::JudgedScene& judged) {
  const auto& want = p.spec.objects;
  auto any_of_judged = [&](auto&& pred) {
    return std::any_of(judged.objects.begin(), judged.objects.end(), pred);
  };
  switch (p.category) {
    case GenCategory::single_obj:
      return any_of_judged(
          [&](const data::JudgedObject& j) { return same_shape(j.shape, want[0].shape); });
    case GenCategory::two_obj: {
      std::array<int, 3> need{}, have{};
      for (const auto& o : want) need[static_cast<int>(o.shape)] += 1;
      for (const auto& j : judged.objects)
        for (int s = 0; s < 3; ++s)
          if (same_shape(j.shape, static_cast<data::ShapeKind>(s))) have[s] += 1;
      for (int s = 0; s < 3; ++s)
        if (have[s] < need[s]) return false;
      return true;
    }
    case GenCategory::counting: return judged.objects.size() == want.size();
    case GenCategory::colors:
      return any_of_judged([&](const data::JudgedObject& j) {
        return same_shape(j.shape, want[0].shape) && j.color == want[0].color;
      });
    case GenCategory::position:
      return any_of_judged([&](const data::JudgedObject& j) {
        return same_shape(j.shape, want[0].shape) && j.quadrant == want[0].quadrant;
      });
    case GenCategory::color_attr:
      return std::all_of(want.begin(), want.end(), [&](const data::SceneObject& o) {
        return any_of_judged([&](const data::JudgedObject& j) {
          return same_shape(j.shape, o.shape) && j.color == o.color;
        });
      });
  }
  return false;
}

GenEvalReport geneval_toy(const Generator& gen, int image_size, int n_prompts, num::Rng& rng) {
  if (n_prompts < 1) throw EvalError("geneval_toy: need at least one prompt per category");
  GenEvalReport rep;
  rep.prompts_per_category = n_prompts;
  rep.seed = rng.key();
  rep.config_hash = "external-generator";
  double total = 0.0;
  for (int c = 0; c < 6; ++c) {
    int hits = 0;
    for (int i = 0; i < n_prompts; ++i) {
      auto prompt = sample_gen_prompt(static_cast<GenCategory>(c), rng);
      auto pixels = gen(prompt, rng);
      hits += prompt_satisfied(prompt, data::judge(pixels, image_size)) ? 1 : 0;
    }
    rep.category[c] = hits / static_cast<double>(n_prompts);
    total += rep.category[c];
  }
  rep.overall = total / 6.0;
  return rep;
}

template <typename T>
GenEvalReport geneval_toy(const pipe::ModelBundle<T>& model, int n_prompts, num::Rng& rng,
                          const pipe::GenOptions& opt) {
  Generator g = [&](const GenPrompt& p, num::Rng& r) {
    auto px = pipe::generate_image(model, p.caption, r, opt);
    return std::vector<float>(px.begin(), px.end());
  };
  auto rep = geneval_toy(g, model.config().mar.image_size, n_prompts, rng);
  rep.config_hash = config_fingerprint(model.config());
  return rep;
}

// --------------------------------------------------------------------------
// Linear probing

nlohmann::json ProbeReport::to_json() const {
  return {{"encoder", encoder_id}, {"feature_source", feature_source}, {"accuracy", accuracy},
          {"n_train", n_train},    {"n_heldout", n_heldout},           {"n_classes", n_classes},
          {"config", config_hash}, {"seed", seed}};
}

std::vector<double> fit_softmax_probe(const std::vector<std::vector<double>>& x,
                                      const std::vector<int>& y, int n_classes, int steps,
                                      double lr) {
  if (x.empty() || x.size() != y.size()) throw EvalError("probe: empty or mismatched training set");
  if (n_classes < 2) throw EvalError("probe: need at least two classes");
  const std::size_t d = x[0].size();
  if (d == 0) throw EvalError("probe: empty feature rows");
  std::vector<int> seen_class(n_classes, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != d) throw EvalError("probe: ragged feature rows");
    if (y[i] < 0 || y[i] >= n_classes) throw EvalError("probe: label out of range");
    seen_class[static_cast<std::size_t>(y[i])] = 1;
  }
  if (std::accumulate(seen_class.begin(), seen_class.end(), 0) < 2)
    throw EvalError("probe: degenerate single-class set");

  const std::size_t rows = d + 1;  // bias row last
  const auto C = static_cast<std::size_t>(n_classes);
  std::vector<double> w(rows * C, 0.0), grad(rows * C), p(C);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (int it = 0; it < steps; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        double z = w[d * C + c];
        for (std::size_t k = 0; k < d; ++k) z += x[i][k] * w[k * C + c];
        p[c] = z;
      }
      const double zmax = *std::max_element(p.begin(), p.end());
      double norm = 0.0;
      for (auto& z : p) norm += (z = std::exp(z - zmax));
      for (std::size_t c = 0; c < C; ++c) {
        const double err = p[c] / norm - (static_cast<int>(c) == y[i] ? 1.0 : 0.0);
        for (std::size_t k = 0; k < d; ++k) grad[k * C + c] += x[i][k] * err;
        grad[d * C + c] += err;
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * inv_n * grad[j];
  }
  return w;
}

double probe_accuracy(const std::vector<double>& w, int n_classes,
                      const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  if (x.empty() || x.size() != y.size()) throw EvalError("probe: empty or mismatched eval set");
  const std::size_t d = x[0].size();
  const auto C = static_cast<std::size_t>(n_classes);
  if (w.size() != (d + 1) * C) throw EvalError("probe: weight size does not match features");
  int hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != d) throw EvalError("probe: ragged feature rows");
    std::size_t best = 0;
    double best_z = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      double z = w[d * C + c];
      for (std::size_t k = 0; k < d; ++k) z += x[i][k] * w[k * C + c];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    hits += static_cast<int>(best) == y[i] ? 1 : 0;
  }
  return hits / static_cast<double>(x.size());
}

template <typename T>
std::vector<std::vector<double>> probe_features(const pipe::ModelBundle<T>& model,
                                                const std::vector<data::ImageSample>& samples) {
  if (samples.empty()) throw EvalError("probe_features: no samples");
  num::NoGradGuard inference;
  const auto& mc = model.config().mar;
  const int hw = mc.hw(), pd = mc.patch_dim();
  const int slots = mc.n_buffer + hw;
  std::vector<int> all(static_cast<std::size_t>(hw));
  std::iota(all.begin(), all.end(), 0);

  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const auto B = static_cast<int>(std::min(chunk, samples.size() - start));
    auto patches = num::Tensor<T>::zeros({B, hw, pd});
    for (int b = 0; b < B; ++b) {
      const auto& px = samples[start + static_cast<std::size_t>(b)].pixels;
      std::vector<T> cast(px.begin(), px.end());
      auto seq = mar::patchify<T>(cast, mc.image_size, mc.patch);
      std::copy(seq.patches.begin(), seq.patches.end(),
                patches.data() + static_cast<std::ptrdiff_t>(b) * hw * pd);
    }
    auto enc = model.visual().encode(patches, std::vector<std::vector<int>>(B, all));
    const T* z = enc.z.data();
    for (int b = 0; b < B; ++b) {
      std::vector<double> row(static_cast<std::size_t>(mc.width), 0.0);
      for (int s = 0; s < slots; ++s)
        for (int k = 0; k < mc.width; ++k)
          row[static_cast<std::size_t>(k)] += z[(static_cast<std::ptrdiff_t>(b) * slots + s) * mc.width + k];
      for (auto& v : row) v /= slots;
      out.push_back(std::move(row));
    }
  }
  return out;
}

namespace {

// Single-object scenes only; label = shape class.
void shape_probe_set(const std::vector<data::ImageSample>& samples,
                     std::vector<data::ImageSample>& kept, std::vector<int>& labels) {
  for (const auto& s : samples)
    if (s.spec.objects.size() == 1) {
      kept.push_back(s);
      labels.push_back(static_cast<int>(s.spec.objects[0].shape));
    }
}

}  // namespace

template <typename T>
ProbeReport linear_probe(const pipe::ModelBundle<T>& model,
                         const std::vector<data::ImageSample>& train,
                         const std::vector<data::ImageSample>& heldout) {
  std::vector<data::ImageSample> tr, he;
  std::vector<int> ytr, yhe;
  shape_probe_set(train, tr, ytr);
  shape_probe_set(heldout, he, yhe);
  if (tr.empty() || he.empty())
    throw EvalError("linear_probe: no single-object scenes on one side");
  auto w = fit_softmax_probe(probe_features(model, tr), ytr, 3);

  ProbeReport rep;
  rep.config_hash = config_fingerprint(model.config());
  rep.encoder_id = "mar-encoder-" + rep.config_hash.substr(0, 8);
  rep.feature_source = "encoder mean-pool, nothing masked";
  rep.accuracy = probe_accuracy(w, 3, probe_features(model, he), yhe);
  rep.n_train = static_cast<int>(tr.size());
  rep.n_heldout = static_cast<int>(he.size());
  rep.n_classes = 3;
  return rep;
}

// --------------------------------------------------------------------------
// Question answering

nlohmann::json QaReport::to_json() const {
  return {{"accuracy", accuracy},
          {"color_accuracy", color_accuracy},
          {"n_questions", n_questions},
          {"n_color_questions", n_color_questions},
          {"config", config_hash},
          {"seed", seed}};
}

template <typename T>
QaReport qa_eval(const pipe::ModelBundle<T>& model, const std::vector<data::ImageSample>& scenes) {
  if (scenes.empty()) throw EvalError("qa_eval: no scenes");
  int n = 0, hits = 0, n_color = 0, color_hits = 0;
  for (const auto& s : scenes) {
    const std::vector<T> px(s.pixels.begin(), s.pixels.end());
    for (const auto& qa : s.qa) {
      const bool ok = pipe::answer_question(model, px, qa.question) == qa.answer;
      n += 1;
      hits += ok ? 1 : 0;
      if (qa.question.rfind("what color", 0) == 0) {
        n_color += 1;
        color_hits += ok ? 1 : 0;
      }
    }
  }
  if (n == 0) throw EvalError("qa_eval: scenes carry no questions");
  QaReport rep;
  rep.accuracy = hits / static_cast<double>(n);
  rep.color_accuracy = n_color > 0 ? color_hits / static_cast<double>(n_color) : 0.0;
  rep.n_questions = n;
  rep.n_color_questions = n_color;
  rep.config_hash = config_fingerprint(model.config());
  return rep;
}

// --------------------------------------------------------------------------
// Co-training ablation

nlohmann::json AblationReport::to_json() const {
  auto arm = [](const AblationArm& a) {
    return nlohmann::json{{"name", a.name}, {"geneval", a.gen.to_json()}, {"qa", a.qa.to_json()}};
  };
  return {{"arms", {arm(unified), arm(gen_only), arm(und_only)}},
          {"geneval_delta_unified_minus_gen_only", geneval_delta},
          {"qa_delta_unified_minus_und_only", qa_delta},
          {"config", config_hash},
          {"seed", seed}};
}

std::string AblationReport::table() const {
  std::ostringstream out;
  char line[96];
  std::snprintf(line, sizeof(line), "%-10s %-16s %-10s\n", "arm", "geneval-overall", "qa-acc");
  out << line;
  for (const auto* a : {&unified, &gen_only, &und_only}) {
    std::snprintf(line, sizeof(line), "%-10s %-16.4f %-10.4f\n", a->name.c_str(), a->gen.overall,
                  a->qa.accuracy);
    out << line;
  }
  std::snprintf(line, sizeof(line), "geneval delta (unified - gen_only): %+.4f\n", geneval_delta);
  out << line;
  std::snprintf(line, sizeof(line), "qa delta (unified - und_only): %+.4f\n", qa_delta);
  out << line;
  return out.str();
}

AblationReport ablation_unified_vs_single(const AblationConfig& cfg) {
  if (cfg.train.stages.empty()) throw ConfigError("ablation: no training stages configured");
  if (cfg.heldout_scenes < 1) throw ConfigError("ablation: need held-out scenes");
  const int image_size = cfg.bundle.mar.image_size;
  auto pool =
      train::make_pool(cfg.train.seed, cfg.train.scenes, cfg.train.text_lines, image_size);
  std::vector<data::ImageSample> heldout;
  heldout.reserve(static_cast<std::size_t>(cfg.heldout_scenes));
  for (int i = 0; i < cfg.heldout_scenes; ++i)
    heldout.push_back(data::make_sample(cfg.train.seed,
                                        static_cast<std::uint64_t>(cfg.train.scenes + i),
                                        image_size));

  // Arms share the init seed, data pool, training stream, and eval stream; only
  // the task mix differs.
  auto run_arm = [&](const std::string& name,
                     std::optional<std::array<int, 3>> ratio) -> AblationArm {
    pipe::ModelBundle<float> model(cfg.bundle, cfg.train.seed);
    train::TrainConfig tc = cfg.train;
    tc.out_dir = cfg.train.out_dir + "/" + name;
    if (ratio)
      for (auto& stage : tc.stages) stage.ratio = *ratio;
    train::run_training(model, tc, pool);

    AblationArm arm;
    arm.name = name;
    num::Rng gen_rng(cfg.eval_seed);
    arm.gen = geneval_toy(model, cfg.eval_prompts, gen_rng);
    arm.gen.seed = cfg.eval_seed;
    arm.qa = qa_eval(model, heldout);
    arm.qa.seed = cfg.eval_seed;
    return arm;
  };

  AblationReport rep;
  rep.unified = run_arm("unified", std::nullopt);
  rep.gen_only = run_arm("gen_only", std::array<int, 3>{0, 0, 1});
  rep.und_only = run_arm("und_only", std::array<int, 3>{0, 1, 0});
  rep.geneval_delta = rep.unified.gen.overall - rep.gen_only.gen.overall;
  rep.qa_delta = rep.unified.qa.accuracy - rep.und_only.qa.accuracy;
  rep.config_hash = config_fingerprint(cfg.bundle);
  rep.seed = cfg.train.seed;
  return rep;
}

#define HARMON_EVAL_INSTANTIATE(T)                                                              \
  template GenEvalReport geneval_toy<T>(const pipe::ModelBundle<T>&, int, num::Rng&,            \
                                        const pipe::GenOptions&);                               \
  template std::vector<std::vector<double>> probe_features<T>(                                  \
      const pipe::ModelBundle<T>&, const std::vector<data::ImageSample>&);                      \
  template ProbeReport linear_probe<T>(const pipe::ModelBundle<T>&,                             \
                                       const std::vector<data::ImageSample>&,                   \
                                       const std::vector<data::ImageSample>&);                  \
  template QaReport qa_eval<T>(const pipe::ModelBundle<T>&, const std::vector<data::ImageSample>&);

HARMON_EVAL_INSTANTIATE(float)
HARMON_EVAL_INSTANTIATE(double)

#undef HARMON_EVAL_INSTANTIATE

}  // namespace harmon::eval
