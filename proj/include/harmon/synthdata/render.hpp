#pragma once

#include <array>
#include <vector>

#include "harmon/synthdata/scene.hpp"

namespace harmon::data {

// Images are H x W x 3, channels last, values in [-1, 1].
inline constexpr int kImageSize = 32;
inline constexpr float kBackground = -0.9f;

// Palette in [-1,1] RGB.
std::array<float, 3> color_rgb(ColorName c);

// Fixed per-shape bounding boxes (square 10, disk 12, triangle 12); position
// jittered uniformly inside the object's quadrant with a 1-pixel margin.
// Deterministic given the rng state; objects drawn in canonical order.
std::vector<float> render(const SceneSpec& spec, num::Rng& rng, int size = kImageSize);

}  // namespace harmon::data
