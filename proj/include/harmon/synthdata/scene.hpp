#pragma once

#include <compare>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmon/numerics/rng.hpp"

namespace harmon::data {

enum class ShapeKind { square, disk, triangle };
enum class ColorName { red, green, blue, yellow };
enum class Quadrant { top_left, top_right, bottom_left, bottom_right };

const std::string& shape_word(ShapeKind s);
const std::string& color_word(ColorName c);
// Two-word form, e.g. "top left".
std::string quadrant_phrase(Quadrant q);
// Single-token form, e.g. "top-left".
const std::string& quadrant_token(Quadrant q);

ShapeKind shape_from_word(const std::string& w);
ColorName color_from_word(const std::string& w);
Quadrant quadrant_from_token(const std::string& w);

struct SceneObject {
  ShapeKind shape;
  ColorName color;
  Quadrant quadrant;
  auto operator<=>(const SceneObject&) const = default;
};

// Symbolic ground truth of one image. Canonical object order is by quadrant
// (top-left, top-right, bottom-left, bottom-right), which makes equality,
// captions, and the judge's output directly comparable.
struct SceneSpec {
  std::vector<SceneObject> objects;

  void canonicalize();
  // 1..3 objects, at most one per quadrant.
  bool valid() const;
  bool operator==(const SceneSpec&) const = default;

  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

// Uniform count in [1,3], distinct quadrants, iid shape/color. Canonical order.
SceneSpec sample_scene(num::Rng& rng);

}  // namespace harmon::data
