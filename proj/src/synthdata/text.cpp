#include "harmon/synthdata/text.hpp"

#include <map>
#include <sstream>

#include "harmon/common.hpp"

namespace harmon::data {

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

const std::string kCountWords[4] = {"zero", "one", "two", "three"};

}  // namespace

std::string caption(const SceneSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    if (i) out += " and ";
    out += "a " + color_word(o.color) + " " + shape_word(o.shape) + " at the " +
           quadrant_phrase(o.quadrant);
  }
  return out;
}

std::optional<SceneSpec> parse_caption(const std::string& text) {
  const auto w = words_of(text);
  SceneSpec spec;
  std::size_t i = 0;
  while (true) {
    // a <color> <shape> at the <q1> <q2>
    if (i + 7 > w.size() || w[i] != "a") return std::nullopt;
    SceneObject o;
    try {
      o.color = color_from_word(w[i + 1]);
      o.shape = shape_from_word(w[i + 2]);
      if (w[i + 3] != "at" || w[i + 4] != "the") return std::nullopt;
      o.quadrant = quadrant_from_token(w[i + 5] + "-" + w[i + 6]);
    } catch (const Error&) {
      return std::nullopt;
    }
    spec.objects.push_back(o);
    i += 7;
    if (i == w.size()) break;
    if (w[i] != "and") return std::nullopt;
    ++i;
  }
  spec.canonicalize();
  if (!spec.valid()) return std::nullopt;
  return spec;
}

std::vector<QaPair> qa_pairs(const SceneSpec& spec) {
  std::vector<QaPair> out;
  std::map<ShapeKind, int> shape_count;
  std::map<ColorName, int> color_count;
  std::map<std::pair<ColorName, ShapeKind>, int> pair_count;
  for (const auto& o : spec.objects) {
    shape_count[o.shape] += 1;
    color_count[o.color] += 1;
    pair_count[{o.color, o.shape}] += 1;
  }
  for (const auto& o : spec.objects) {
    if (shape_count[o.shape] == 1)
      out.push_back({"what color is the " + shape_word(o.shape) + " ?", color_word(o.color)});
    if (color_count[o.color] == 1)
      out.push_back(
          {"what shape is the " + color_word(o.color) + " object ?", shape_word(o.shape)});
    if (pair_count[{o.color, o.shape}] == 1)
      out.push_back({"where is the " + color_word(o.color) + " " + shape_word(o.shape) + " ?",
                     quadrant_token(o.quadrant)});
  }
  out.push_back({"how many objects are there ?", kCountWords[spec.objects.size()]});
  return out;
}

std::vector<std::string> text_corpus(num::Rng& rng, int n) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(caption(sample_scene(rng)));
  return out;
}

}  // namespace harmon::data
