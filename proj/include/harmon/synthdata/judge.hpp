#pragma once

#include <optional>
#include <vector>

#include "harmon/synthdata/render.hpp"
#include "harmon/synthdata/scene.hpp"

namespace harmon::data {

enum class JudgedShape { square, disk, triangle, unknown };

struct JudgedObject {
  JudgedShape shape;
  ColorName color;
  Quadrant quadrant;
};

struct JudgedScene {
  std::vector<JudgedObject> objects;  // canonical quadrant order

  // Present when the layout is a valid scene (no unknown shapes, distinct
  // quadrants, at most 3 blobs). A blank image yields an empty spec.
  std::optional<SceneSpec> as_spec() const;
};

// Pixel-level scene recovery: foreground = pixels far from the background level,
// 4-connected components of at least 12 pixels, shape from the blob's fill
// ratio over its bounding box (square >= 0.87, disk 0.785 +- 0.08, triangle
// 0.5 +- 0.08, otherwise unknown), color by nearest palette entry to the blob
// mean, quadrant from the centroid.
JudgedScene judge(const std::vector<float>& pixels, int size = kImageSize);

}  // namespace harmon::data
