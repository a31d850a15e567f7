#include "harmon/synthdata/scene.hpp"

#include <algorithm>
#include <array>

#include "harmon/common.hpp"

namespace harmon::data {

namespace {
const std::array<std::string, 3> kShapes = {"square", "disk", "triangle"};
const std::array<std::string, 4> kColors = {"red", "green", "blue", "yellow"};
const std::array<std::string, 4> kQuadrantTokens = {"top-left", "top-right", "bottom-left",
                                                   "bottom-right"};
}  // namespace

const std::string& shape_word(ShapeKind s) { return kShapes[static_cast<std::size_t>(s)]; }
const std::string& color_word(ColorName c) { return kColors[static_cast<std::size_t>(c)]; }

std::string quadrant_phrase(Quadrant q) {
  std::string t = kQuadrantTokens[static_cast<std::size_t>(q)];
  std::replace(t.begin(), t.end(), '-', ' ');
  return t;
}

const std::string& quadrant_token(Quadrant q) {
  return kQuadrantTokens[static_cast<std::size_t>(q)];
}

ShapeKind shape_from_word(const std::string& w) {
  for (std::size_t i = 0; i < kShapes.size(); ++i)
    if (kShapes[i] == w) return static_cast<ShapeKind>(i);
  throw Error("unknown shape word '" + w + "'");
}

ColorName color_from_word(const std::string& w) {
  for (std::size_t i = 0; i < kColors.size(); ++i)
    if (kColors[i] == w) return static_cast<ColorName>(i);
  throw Error("unknown color word '" + w + "'");
}

Quadrant quadrant_from_token(const std::string& w) {
  for (std::size_t i = 0; i < kQuadrantTokens.size(); ++i)
    if (kQuadrantTokens[i] == w) return static_cast<Quadrant>(i);
  throw Error("unknown quadrant token '" + w + "'");
}

void SceneSpec::canonicalize() {
  std::sort(objects.begin(), objects.end(), [](const SceneObject& a, const SceneObject& b) {
    return a.quadrant < b.quadrant;
  });
}

bool SceneSpec::valid() const {
  if (objects.empty() || objects.size() > 3) return false;
  std::array<bool, 4> used{};
  for (const auto& o : objects) {
    auto q = static_cast<std::size_t>(o.quadrant);
    if (used[q]) return false;
    used[q] = true;
  }
  return true;
}

nlohmann::json SceneSpec::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& o : objects)
    arr.push_back({{"shape", shape_word(o.shape)},
                   {"color", color_word(o.color)},
                   {"quadrant", quadrant_token(o.quadrant)}});
  return {{"objects", std::move(arr)}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec spec;
  for (const auto& o : j.at("objects"))
    spec.objects.push_back({shape_from_word(o.at("shape").get<std::string>()),
                            color_from_word(o.at("color").get<std::string>()),
                            quadrant_from_token(o.at("quadrant").get<std::string>())});
  spec.canonicalize();
  return spec;
}

SceneSpec sample_scene(num::Rng& rng) {
  SceneSpec spec;
  const int count = static_cast<int>(rng.next_int(1, 3));
  std::vector<int> quads = {0, 1, 2, 3};
  rng.shuffle(quads);
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.shape = static_cast<ShapeKind>(rng.next_int(0, 2));
    o.color = static_cast<ColorName>(rng.next_int(0, 3));
    o.quadrant = static_cast<Quadrant>(quads[static_cast<std::size_t>(i)]);
    spec.objects.push_back(o);
  }
  spec.canonicalize();
  return spec;
}

}  // namespace harmon::data
