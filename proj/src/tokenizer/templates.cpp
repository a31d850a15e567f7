#include "harmon/tokenizer/templates.hpp"

#include "harmon/common.hpp"

namespace harmon::tok {

Span TokenSequence::find(SpanKind kind) const {
  for (const Span& s : spans)
    if (s.kind == kind) return s;
  return {kind, -1, 0};
}

bool TokenSequence::spans_cover() const {
  int pos = 0;
  for (const Span& s : spans) {
    if (s.start != pos || s.len < 0) return false;
    pos += s.len;
  }
  return pos == length();
}

TokenSequence build_gen_prompt(const Vocab& v, const std::string& caption) {
  TokenSequence seq;
  seq.ids.push_back(Vocab::kBos);
  for (int id : tokenize(v, "user: generate an image")) seq.ids.push_back(id);
  for (int id : tokenize(v, caption)) seq.ids.push_back(id);
  seq.ids.push_back(v.id("\n"));
  seq.ids.push_back(v.id("assistant:"));
  seq.spans.push_back({SpanKind::prompt, 0, seq.length()});
  return seq;
}

TokenSequence build_und_prompt(const Vocab& v, const std::string& question, int slot_len) {
  if (slot_len <= 0) throw Error("build_und_prompt: slot_len must be positive");
  TokenSequence seq;
  seq.ids.push_back(Vocab::kBos);
  seq.ids.push_back(v.id("user:"));
  seq.spans.push_back({SpanKind::prompt, 0, 2});
  for (int i = 0; i < slot_len; ++i) seq.ids.push_back(Vocab::kImg);
  seq.spans.push_back({SpanKind::image_slot, 2, slot_len});
  const int tail_start = seq.length();
  for (int id : tokenize(v, question)) seq.ids.push_back(id);
  seq.ids.push_back(v.id("\n"));
  seq.ids.push_back(v.id("assistant:"));
  seq.spans.push_back({SpanKind::prompt, tail_start, seq.length() - tail_start});
  return seq;
}

void append_answer(const Vocab& v, TokenSequence& seq, const std::string& answer) {
  const int start = seq.length();
  for (int id : tokenize(v, answer)) seq.ids.push_back(id);
  seq.ids.push_back(Vocab::kEos);
  seq.spans.push_back({SpanKind::answer, start, seq.length() - start});
}

}  // namespace harmon::tok
