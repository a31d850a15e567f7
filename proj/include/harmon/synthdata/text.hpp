#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "harmon/synthdata/scene.hpp"

namespace harmon::data {

// Canonical caption, e.g. "a red square at the top left and a blue disk at the
// bottom right". Object order is the spec's canonical quadrant order, so the
// caption is a pure function of the spec.
std::string caption(const SceneSpec& spec);

// Inverse of caption(); nullopt when the text is not a well-formed caption.
std::optional<SceneSpec> parse_caption(const std::string& text);

struct QaPair {
  std::string question;
  std::string answer;  // always a single vocab token
};

// Color/shape/position questions are emitted only when the referent is
// unambiguous within the scene; the count question always applies.
std::vector<QaPair> qa_pairs(const SceneSpec& spec);

// Caption-grammar sentences (no images) for the language-modeling stream.
std::vector<std::string> text_corpus(num::Rng& rng, int n);

}  // namespace harmon::data
