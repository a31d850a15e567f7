#pragma once

#include <string>
#include <vector>

#include "harmon/tokenizer/vocab.hpp"

namespace harmon::tok {

enum class SpanKind { prompt, image_slot, answer };

struct Span {
  SpanKind kind;
  int start;
  int len;
  bool operator==(const Span&) const = default;
};

// Token ids plus labeled ranges. Spans are disjoint, ordered, and cover the
// whole sequence; the answer span (when present) is what the understanding
// loss supervises.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<Span> spans;

  int length() const { return static_cast<int>(ids.size()); }
  // First span of the given kind, or {kind, -1, 0}.
  Span find(SpanKind kind) const;
  bool spans_cover() const;
};

// "<bos> user: generate an image <caption> \n assistant:". The caption may be
// empty (the unconditional prompt used for guidance).
TokenSequence build_gen_prompt(const Vocab& v, const std::string& caption);

// "<bos> user: <img>*slot <question> \n assistant:". slot_len must equal the
// number of visual embeddings injected later (buffer + patch positions).
TokenSequence build_und_prompt(const Vocab& v, const std::string& question, int slot_len);

// Appends the answer tokens plus <eos> as an answer span (training targets).
void append_answer(const Vocab& v, TokenSequence& seq, const std::string& answer);

}  // namespace harmon::tok
