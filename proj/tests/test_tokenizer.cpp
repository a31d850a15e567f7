#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "harmon/common.hpp"
#include "harmon/numerics/rng.hpp"
#include "harmon/synthdata/scene.hpp"
#include "harmon/synthdata/text.hpp"
#include "harmon/tokenizer/templates.hpp"
#include "harmon/tokenizer/vocab.hpp"

using namespace harmon;
using namespace harmon::tok;

namespace {

std::string test_dir() {
  const char* d = std::getenv("HARMON_TEST_DIR");
  REQUIRE(d != nullptr);
  return d;
}

// Renders a token sequence as one line of words plus a span legend, the format
// stored in the golden file.
std::string render_sequence(const Vocab& v, const TokenSequence& seq) {
  std::ostringstream out;
  for (int i = 0; i < seq.length(); ++i) {
    if (i) out << ' ';
    const std::string& w = v.word(seq.ids[i]);
    out << (w == "\n" ? std::string("\\n") : w);
  }
  out << "\n";
  for (const Span& s : seq.spans) {
    const char* kind = s.kind == SpanKind::prompt       ? "prompt"
                       : s.kind == SpanKind::image_slot ? "image_slot"
                                                        : "answer";
    out << "  " << kind << " [" << s.start << "," << s.start + s.len << ")\n";
  }
  return out.str();
}

}  // namespace

TEST_CASE("vocab: specials sit at the reserved ids") {
  const Vocab& v = Vocab::standard();
  CHECK(v.id("<pad>") == Vocab::kPad);
  CHECK(v.id("<bos>") == Vocab::kBos);
  CHECK(v.id("<eos>") == Vocab::kEos);
  CHECK(v.id("<img>") == Vocab::kImg);
  CHECK(v.word(Vocab::kPad) == "<pad>");
  CHECK(v.size() == 44);
}

TEST_CASE("vocab: ctor rejects misplaced specials and duplicates") {
  CHECK_THROWS_AS(Vocab({"<bos>", "<pad>", "<eos>", "<img>", "a"}), Error);
  CHECK_THROWS_AS(Vocab({"<pad>", "<bos>", "<eos>", "<img>", "a", "a"}), Error);
}

TEST_CASE("tokenize: empty, case folding, newline token, OOV") {
  const Vocab& v = Vocab::standard();
  CHECK(tokenize(v, "").empty());
  CHECK(tokenize(v, "   ").empty());
  CHECK(tokenize(v, "RED Square") == tokenize(v, "red square"));
  const auto with_nl = tokenize(v, "image \n assistant:");
  REQUIRE(with_nl.size() == 3);
  CHECK(v.word(with_nl[1]) == "\n");
  // Newline splits adjacent words even without surrounding spaces.
  CHECK(tokenize(v, "image\nassistant:") == with_nl);
  CHECK_THROWS_AS(tokenize(v, "purple square"), TokenizeError);
  CHECK_THROWS_AS((void)v.id("purple"), TokenizeError);
  CHECK_THROWS_AS((void)v.word(v.size()), TokenizeError);
  CHECK_THROWS_AS((void)v.word(-1), TokenizeError);
}

TEST_CASE("tokenize: detokenize inverts on the scene grammar closure") {
  const Vocab& v = Vocab::standard();
  CHECK(detokenize(v, {}).empty());
  num::Rng rng(404);
  for (int i = 0; i < 200; ++i) {
    auto child = rng.split(i);
    data::SceneSpec spec = data::sample_scene(child);
    const std::string cap = data::caption(spec);
    CHECK(detokenize(v, tokenize(v, cap)) == cap);
    for (const auto& [q, a] : data::qa_pairs(spec)) {
      CHECK(detokenize(v, tokenize(v, q)) == q);
      CHECK(detokenize(v, tokenize(v, a)) == a);
    }
  }
}

TEST_CASE("templates: generation prompt layout") {
  const Vocab& v = Vocab::standard();
  const std::string cap = "a red square at the top left";
  TokenSequence seq = build_gen_prompt(v, cap);

  REQUIRE(seq.length() > 0);
  CHECK(seq.ids[0] == Vocab::kBos);
  // Literal instruction prefix right after <bos>.
  const auto prefix = tokenize(v, "user: generate an image");
  REQUIRE(seq.length() >= 1 + static_cast<int>(prefix.size()));
  for (size_t i = 0; i < prefix.size(); ++i) CHECK(seq.ids[1 + i] == prefix[i]);
  // Caption sits between the prefix and the trailing "\n assistant:".
  const auto cap_ids = tokenize(v, cap);
  const int cap_at = 1 + static_cast<int>(prefix.size());
  for (size_t i = 0; i < cap_ids.size(); ++i) CHECK(seq.ids[cap_at + i] == cap_ids[i]);
  CHECK(v.word(seq.ids[seq.length() - 2]) == "\n");
  CHECK(v.word(seq.ids[seq.length() - 1]) == "assistant:");

  REQUIRE(seq.spans.size() == 1);
  CHECK(seq.spans[0] == Span{SpanKind::prompt, 0, seq.length()});
  CHECK(seq.spans_cover());
  CHECK(seq.find(SpanKind::image_slot).start == -1);
}

TEST_CASE("templates: empty caption gives the unconditional prompt") {
  const Vocab& v = Vocab::standard();
  TokenSequence uncond = build_gen_prompt(v, "");
  TokenSequence cond = build_gen_prompt(v, "a red square at the top left");
  // Unconditional = instruction + "\n assistant:" with nothing in between.
  CHECK(uncond.length() == 1 + 4 + 2);
  CHECK(uncond.length() < cond.length());
  // Shared prefix and shared suffix around the caption.
  for (int i = 0; i < 5; ++i) CHECK(uncond.ids[i] == cond.ids[i]);
  CHECK(uncond.ids[uncond.length() - 1] == cond.ids[cond.length() - 1]);
  CHECK(uncond.ids[uncond.length() - 2] == cond.ids[cond.length() - 2]);
  CHECK(uncond.spans_cover());
}

TEST_CASE("templates: understanding prompt carries the image slot") {
  const Vocab& v = Vocab::standard();
  const int slot = 8 + 64;  // buffer embeddings + one embedding per patch
  TokenSequence seq = build_und_prompt(v, "what color is the square ?", slot);

  CHECK(seq.ids[0] == Vocab::kBos);
  CHECK(v.word(seq.ids[1]) == "user:");
  for (int i = 0; i < slot; ++i) CHECK(seq.ids[2 + i] == Vocab::kImg);
  CHECK(seq.ids[2 + slot] != Vocab::kImg);

  REQUIRE(seq.spans.size() == 3);
  CHECK(seq.spans[0] == Span{SpanKind::prompt, 0, 2});
  CHECK(seq.spans[1] == Span{SpanKind::image_slot, 2, slot});
  CHECK(seq.spans[2].kind == SpanKind::prompt);
  CHECK(seq.spans_cover());
  CHECK(seq.find(SpanKind::image_slot) == Span{SpanKind::image_slot, 2, slot});
  CHECK(v.word(seq.ids[seq.length() - 2]) == "\n");
  CHECK(v.word(seq.ids[seq.length() - 1]) == "assistant:");

  CHECK_THROWS_AS(build_und_prompt(v, "what ?", 0), Error);
}

TEST_CASE("templates: append_answer adds a supervised span ending in <eos>") {
  const Vocab& v = Vocab::standard();
  TokenSequence seq = build_und_prompt(v, "where is the red square ?", 72);
  const int before = seq.length();
  append_answer(v, seq, "top-left");

  CHECK(seq.length() == before + 2);
  CHECK(seq.ids.back() == Vocab::kEos);
  const Span ans = seq.find(SpanKind::answer);
  CHECK(ans == Span{SpanKind::answer, before, 2});
  CHECK(seq.spans_cover());

  // Multi-token answers stay one span.
  TokenSequence gen = build_gen_prompt(v, "a blue disk at the bottom right");
  append_answer(v, gen, "a blue disk at the bottom right");
  CHECK(gen.find(SpanKind::answer).len == 7 + 1);
  CHECK(gen.spans_cover());
}

TEST_CASE("templates: golden layout file") {
  const Vocab& v = Vocab::standard();
  std::ostringstream got;
  got << "gen conditional\n"
      << render_sequence(v, build_gen_prompt(v, "a green triangle at the bottom left"));
  got << "gen unconditional\n" << render_sequence(v, build_gen_prompt(v, ""));
  TokenSequence und = build_und_prompt(v, "how many objects are there ?", 6);
  append_answer(v, und, "two");
  got << "und with answer (slot 6)\n" << render_sequence(v, und);

  const std::string path = test_dir() + "/golden/templates.txt";
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file: " << path);
  std::stringstream want;
  want << in.rdbuf();
  CHECK(got.str() == want.str());
}
