#include "harmon/pipelines/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "harmon/common.hpp"
#include "harmon/numerics/ops.hpp"

namespace harmon::pipe {

namespace {

// Right-pads to `width` with PAD; LengthError on overflow.
std::vector<int> pad_row(std::vector<int> ids, int width) {
  if (static_cast<int>(ids.size()) > width)
    throw LengthError("pipelines: token row longer than the padded width");
  ids.resize(width, tok::Vocab::kPad);
  return ids;
}

// Stacks per-image pixel vectors into a [B, hw, patch_dim] patch tensor.
template <typename T>
num::Tensor<T> patch_stack(const BundleConfig& cfg, const std::vector<std::vector<T>>& images) {
  const auto& mc = cfg.mar;
  const int hw = mc.hw(), pd = mc.patch_dim();
  const int B = static_cast<int>(images.size());
  std::vector<T> flat(static_cast<std::size_t>(B) * hw * pd);
  for (int b = 0; b < B; ++b) {
    auto seq = mar::patchify(images[b], mc.image_size, mc.patch);
    std::copy(seq.patches.begin(), seq.patches.end(), flat.begin() + static_cast<std::size_t>(b) * hw * pd);
  }
  return num::Tensor<T>::from_data({B, hw, pd}, flat);
}

// Next-token cross-entropy under the batch's per-position weights.
template <typename T>
ForwardStats<T> weighted_lm_loss(const typename llm::LlmModel<T>::ForwardOut& out,
                                 const TaskBatch<T>& batch) {
  const int B = out.logits.dim(0), S = out.logits.dim(1), V = out.logits.dim(2);
  auto rows = num::reshape(num::slice_seq(out.logits, 0, S - 1),
                                {B * (S - 1), V});
  std::vector<int> targets;
  std::vector<T> w;
  targets.reserve(static_cast<std::size_t>(B) * (S - 1));
  w.reserve(targets.capacity());
  int supervised = 0;
  for (int b = 0; b < B; ++b)
    for (int i = 1; i < S; ++i) {
      targets.push_back(batch.tokens[b][i]);
      const T wi = batch.weights[b][i];
      w.push_back(wi);
      if (wi != T(0)) ++supervised;
    }
  return {num::cross_entropy(rows, targets, w), supervised};
}

template <typename T>
void check_batch(const TaskBatch<T>& batch) {
  const std::size_t B = batch.tokens.size();
  if (B == 0) throw ShapeError("pipelines: empty batch");
  const std::size_t S = batch.tokens[0].size();
  for (const auto& row : batch.tokens)
    if (row.size() != S) throw ShapeError("pipelines: ragged token rows");
  if (batch.task != Task::text_to_image) {
    if (batch.weights.size() != B) throw ShapeError("pipelines: weights/token row mismatch");
    for (const auto& row : batch.weights)
      if (row.size() != S) throw ShapeError("pipelines: ragged weight rows");
  }
  if (batch.task != Task::text && batch.images.size() != B)
    throw ShapeError("pipelines: images/token row mismatch");
}

}  // namespace

template <typename T>
TaskBatch<T> make_text_batch(const ModelBundle<T>& model, const std::vector<std::string>& texts) {
  const auto& v = model.vocab();
  TaskBatch<T> batch;
  batch.task = Task::text;
  std::size_t max_len = 0;
  std::vector<std::vector<int>> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) {
    std::vector<int> ids{tok::Vocab::kBos};
    for (int id : tok::tokenize(v, t)) ids.push_back(id);
    ids.push_back(tok::Vocab::kEos);
    max_len = std::max(max_len, ids.size());
    rows.push_back(std::move(ids));
  }
  for (auto& ids : rows) {
    const std::size_t real = ids.size();
    auto padded = pad_row(std::move(ids), static_cast<int>(max_len));
    std::vector<T> w(max_len, T(0));
    for (std::size_t i = 1; i < real; ++i) w[i] = T(1);
    batch.tokens.push_back(std::move(padded));
    batch.weights.push_back(std::move(w));
  }
  return batch;
}

template <typename T>
TaskBatch<T> make_und_batch(const ModelBundle<T>& model,
                            const std::vector<data::ImageSample>& samples, num::Rng& rng) {
  const auto& v = model.vocab();
  const int slot = model.full_slots();
  TaskBatch<T> batch;
  batch.task = Task::image_to_text;
  batch.slot_len = slot;
  std::size_t max_len = 0;
  std::vector<std::vector<int>> rows;
  std::vector<std::pair<int, int>> answer_spans;  // (start, len)
  for (const auto& s : samples) {
    if (s.qa.empty()) throw ShapeError("pipelines: sample without QA pairs");
    const auto& qa = s.qa[static_cast<std::size_t>(rng.next_int(0, static_cast<int>(s.qa.size()) - 1))];
    auto seq = tok::build_und_prompt(v, qa.question, slot);
    if (batch.slot_start < 0) batch.slot_start = seq.find(tok::SpanKind::image_slot).start;
    tok::append_answer(v, seq, qa.answer);
    auto a = seq.find(tok::SpanKind::answer);
    answer_spans.emplace_back(a.start, a.len);
    max_len = std::max(max_len, seq.ids.size());
    rows.push_back(std::move(seq.ids));
    batch.images.emplace_back(s.pixels.begin(), s.pixels.end());
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto padded = pad_row(std::move(rows[r]), static_cast<int>(max_len));
    std::vector<T> w(max_len, T(0));
    for (int i = answer_spans[r].first; i < answer_spans[r].first + answer_spans[r].second; ++i)
      w[static_cast<std::size_t>(i)] = T(1);
    batch.tokens.push_back(std::move(padded));
    batch.weights.push_back(std::move(w));
  }
  return batch;
}

template <typename T>
TaskBatch<T> make_gen_batch(const ModelBundle<T>& model,
                            const std::vector<data::ImageSample>& samples,
                            const std::vector<std::string>& captions) {
  if (samples.size() != captions.size())
    throw ShapeError("pipelines: captions/samples size mismatch");
  const auto& v = model.vocab();
  const int pad = model.config().gen_prompt_pad;
  TaskBatch<T> batch;
  batch.task = Task::text_to_image;
  batch.captions = captions;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto seq = tok::build_gen_prompt(v, captions[i]);
    batch.prompt_len.push_back(seq.length());
    batch.tokens.push_back(pad_row(std::move(seq.ids), pad));
    batch.images.emplace_back(samples[i].pixels.begin(), samples[i].pixels.end());
  }
  return batch;
}

template <typename T>
ForwardStats<T> unified_forward(const ModelBundle<T>& model, const TaskBatch<T>& batch,
                                num::Rng& rng) {
  check_batch(batch);
  const auto& lm = model.lm();
  const int B = static_cast<int>(batch.tokens.size());

  if (batch.task == Task::text) {
    auto out = lm.forward(lm.embed_tokens(batch.tokens));
    return weighted_lm_loss<T>(out, batch);
  }

  if (batch.task == Task::image_to_text) {
    if (batch.slot_start < 0 || batch.slot_len != model.full_slots())
      throw ShapeError("pipelines: understanding batch with a bad visual slot");
    auto patches = patch_stack(model.config(), batch.images);
    const int hw = model.config().mar.hw();
    std::vector<int> all(hw);
    std::iota(all.begin(), all.end(), 0);
    auto enc = model.visual().encode(patches, std::vector<std::vector<int>>(B, all));
    auto vis = lm.project_in(enc.z);
    std::vector<int> slot(static_cast<std::size_t>(batch.slot_len));
    std::iota(slot.begin(), slot.end(), batch.slot_start);
    auto embeds = num::scatter_seq(lm.embed_tokens(batch.tokens),
                                        std::vector<std::vector<int>>(B, slot), vis);
    auto out = lm.forward(embeds);
    return weighted_lm_loss<T>(out, batch);
  }

  // text_to_image
  if (static_cast<int>(batch.prompt_len.size()) != B)
    throw ShapeError("pipelines: generation batch without prompt lengths");
  const auto& cfg = model.config();
  const int hw = cfg.mar.hw(), pad = cfg.gen_prompt_pad, width = cfg.mar.width;
  const int pd = cfg.mar.patch_dim();
  auto patches = patch_stack(cfg, batch.images);

  const int m_lo = std::min(hw, std::max(1, static_cast<int>(std::ceil(cfg.train_mask_min * hw))));
  const int m = static_cast<int>(rng.next_int(m_lo, hw));
  std::vector<std::vector<int>> masks(static_cast<std::size_t>(B)), seen(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    masks[static_cast<std::size_t>(b)] = mar::sample_mask(hw, m, rng);
    seen[static_cast<std::size_t>(b)] = mar::mask_complement(masks[static_cast<std::size_t>(b)], hw);
  }

  auto enc = model.visual().encode(patches, seen);
  const int L = enc.z.dim(1);
  auto embeds = num::concat_seq(lm.embed_tokens(batch.tokens), lm.project_in(enc.z));
  std::vector<std::vector<char>> key_valid(static_cast<std::size_t>(B),
                                           std::vector<char>(static_cast<std::size_t>(pad + L), 1));
  for (int b = 0; b < B; ++b)
    for (int j = batch.prompt_len[static_cast<std::size_t>(b)]; j < pad; ++j)
      key_valid[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] = 0;

  auto out = lm.forward(embeds, nullptr, true, &key_valid);
  auto cond = model.visual().decode(lm.extract_updated(out.hidden, pad, L), masks);
  auto x_gt = num::gather_seq(patches, masks);
  auto loss = diff::diffusion_loss(model.head(), model.noise(),
                                   num::reshape(x_gt, {B * m, pd}),
                                   num::reshape(cond, {B * m, width}), rng);
  return {loss, B * m};
}

template <typename T>
std::vector<T> generate_image(const ModelBundle<T>& model, const std::string& caption,
                              num::Rng& rng, const GenOptions& opt) {
  const auto& cfg = model.config();
  const auto& lm = model.lm();
  const int hw = cfg.mar.hw(), pd = cfg.mar.patch_dim(), pad = cfg.gen_prompt_pad;
  const int width = cfg.mar.width;

  auto sched = schedule_counts(hw, opt.K);
  sched.perm.resize(static_cast<std::size_t>(hw));
  std::iota(sched.perm.begin(), sched.perm.end(), 0);
  rng.shuffle(sched.perm);

  num::NoGradGuard inference;

  // Per-branch prompt prefill; PAD rows are cached but stay invisible.
  struct Branch {
    llm::KVCache<T> cache;
    std::vector<char> prompt_valid;
  };
  Branch branches[2];
  const std::string prompts[2] = {caption, std::string()};
  for (int br = 0; br < 2; ++br) {
    auto seq = tok::build_gen_prompt(model.vocab(), prompts[br]);
    const int real = seq.length();
    auto row = pad_row(std::move(seq.ids), pad);
    branches[br].prompt_valid.assign(static_cast<std::size_t>(pad), 1);
    for (int j = real; j < pad; ++j) branches[br].prompt_valid[static_cast<std::size_t>(j)] = 0;
    std::vector<std::vector<char>> kv{branches[br].prompt_valid};
    lm.forward(lm.embed_tokens({row}), &branches[br].cache, true, &kv);
  }

  std::vector<T> patch_buf(static_cast<std::size_t>(hw) * pd, T(0));
  std::vector<char> written(static_cast<std::size_t>(hw), 0);
  std::vector<int> seen_sorted;
  int consumed = 0;

  for (int k = 0; k < sched.K; ++k) {
    auto patches = num::Tensor<T>::from_data({1, hw, pd}, patch_buf);
    auto enc = model.visual().encode(patches, {seen_sorted});
    const int L = enc.z.dim(1);
    auto vis = lm.project_in(enc.z);

    num::Tensor<T> updated[2];
    for (int br = 0; br < 2; ++br) {
      std::vector<char> valid = branches[br].prompt_valid;
      valid.resize(static_cast<std::size_t>(pad + L), 1);
      std::vector<std::vector<char>> kv{valid};
      auto out = lm.forward(vis, &branches[br].cache, false, &kv);
      updated[br] = lm.extract_updated(out.hidden, 0, L);
    }

    const int nk = sched.n[static_cast<std::size_t>(k)];
    std::vector<int> next(sched.perm.begin() + consumed, sched.perm.begin() + consumed + nk);
    consumed += nk;

    auto zc = num::reshape(model.visual().decode(updated[0], {next}), {nk, width});
    auto zu = num::reshape(model.visual().decode(updated[1], {next}), {nk, width});
    auto x0 = diff::sample_patch(model.head(), model.noise(), zc, zu, opt.cfg, rng, opt.sampling);

    const T* rows = x0.data();
    for (int i = 0; i < nk; ++i) {
      const int p = next[static_cast<std::size_t>(i)];
      if (written[static_cast<std::size_t>(p)])
        throw ScheduleError("pipelines: patch revealed twice");
      written[static_cast<std::size_t>(p)] = 1;
      std::copy(rows + static_cast<std::size_t>(i) * pd, rows + static_cast<std::size_t>(i + 1) * pd,
                patch_buf.begin() + static_cast<std::size_t>(p) * pd);
      seen_sorted.push_back(p);
    }
    std::sort(seen_sorted.begin(), seen_sorted.end());
  }
  if (std::find(written.begin(), written.end(), 0) != written.end())
    throw ScheduleError("pipelines: generation left unwritten patches");

  mar::PatchSequence<T> out_seq;
  out_seq.patches = std::move(patch_buf);
  out_seq.h = out_seq.w = cfg.mar.grid();
  out_seq.dim = pd;
  return mar::unpatchify(out_seq, cfg.mar.image_size);
}

template <typename T>
std::string answer_question(const ModelBundle<T>& model, const std::vector<T>& pixels,
                            const std::string& question, int max_tokens) {
  const auto& cfg = model.config();
  num::NoGradGuard inference;
  auto seq = mar::patchify(pixels, cfg.mar.image_size, cfg.mar.patch);
  auto patches = num::Tensor<T>::from_data({1, cfg.mar.hw(), cfg.mar.patch_dim()}, seq.patches);
  std::vector<int> all(static_cast<std::size_t>(cfg.mar.hw()));
  std::iota(all.begin(), all.end(), 0);
  auto enc = model.visual().encode(patches, {all});
  auto prompt = tok::build_und_prompt(model.vocab(), question, model.full_slots());
  auto embeds = model.lm().inject_image(prompt, enc.z);
  auto ids = model.lm().greedy_decode(embeds, max_tokens, tok::Vocab::kEos);
  if (!ids.empty() && ids.back() == tok::Vocab::kEos) ids.pop_back();
  return tok::detokenize(model.vocab(), ids);
}

#define HARMON_PIPE_INSTANTIATE(T)                                                               \
  template TaskBatch<T> make_text_batch<T>(const ModelBundle<T>&,                                \
                                           const std::vector<std::string>&);                     \
  template TaskBatch<T> make_und_batch<T>(const ModelBundle<T>&,                                 \
                                          const std::vector<data::ImageSample>&, num::Rng&);     \
  template TaskBatch<T> make_gen_batch<T>(const ModelBundle<T>&,                                 \
                                          const std::vector<data::ImageSample>&,                 \
                                          const std::vector<std::string>&);                      \
  template ForwardStats<T> unified_forward<T>(const ModelBundle<T>&, const TaskBatch<T>&,        \
                                              num::Rng&);                                        \
  template std::vector<T> generate_image<T>(const ModelBundle<T>&, const std::string&,           \
                                            num::Rng&, const GenOptions&);                       \
  template std::string answer_question<T>(const ModelBundle<T>&, const std::vector<T>&,          \
                                          const std::string&, int);

HARMON_PIPE_INSTANTIATE(float)
HARMON_PIPE_INSTANTIATE(double)
#undef HARMON_PIPE_INSTANTIATE

}  // namespace harmon::pipe
