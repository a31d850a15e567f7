#include "harmon/synthdata/judge.hpp"

#include <algorithm>
#include <cmath>

#include "harmon/common.hpp"

namespace harmon::data {

std::optional<SceneSpec> JudgedScene::as_spec() const {
  SceneSpec spec;
  for (const auto& o : objects) {
    if (o.shape == JudgedShape::unknown) return std::nullopt;
    spec.objects.push_back({static_cast<ShapeKind>(o.shape), o.color, o.quadrant});
  }
  spec.canonicalize();
  if (!spec.objects.empty() && !spec.valid()) return std::nullopt;
  return spec;
}

JudgedScene judge(const std::vector<float>& pixels, int size) {
  if (pixels.size() != static_cast<std::size_t>(size) * size * 3)
    throw Error("judge: pixel buffer does not match size " + std::to_string(size));
  for (float v : pixels)
    if (!(v >= -1.0001f && v <= 1.0001f)) throw Error("judge: pixels must lie in [-1,1]");

  const int n = size * size;
  auto fg = std::vector<char>(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const float* px = pixels.data() + static_cast<std::size_t>(i) * 3;
    float d = 0;
    for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(px[c] - kBackground));
    fg[static_cast<std::size_t>(i)] = d > 0.35f ? 1 : 0;
  }

  JudgedScene out;
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  std::vector<int> stack;
  for (int start = 0; start < n; ++start) {
    if (!fg[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0)
      continue;
    // flood-fill one 4-connected component
    std::vector<int> blob;
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = start;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      blob.push_back(i);
      const int x = i % size, y = i / size;
      const int nb[4] = {x > 0 ? i - 1 : -1, x + 1 < size ? i + 1 : -1,
                         y > 0 ? i - size : -1, y + 1 < size ? i + size : -1};
      for (int j : nb)
        if (j >= 0 && fg[static_cast<std::size_t>(j)] && label[static_cast<std::size_t>(j)] < 0) {
          label[static_cast<std::size_t>(j)] = start;
          stack.push_back(j);
        }
    }
    if (blob.size() < 12) continue;  // speckle

    int minx = size, maxx = -1, miny = size, maxy = -1;
    double sx = 0, sy = 0, sr = 0, sg = 0, sb = 0;
    for (int i : blob) {
      const int x = i % size, y = i / size;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
      sx += x;
      sy += y;
      const float* px = pixels.data() + static_cast<std::size_t>(i) * 3;
      sr += px[0];
      sg += px[1];
      sb += px[2];
    }
    const double cnt = static_cast<double>(blob.size());
    const double fill = cnt / (static_cast<double>(maxx - minx + 1) * (maxy - miny + 1));

    JudgedObject obj;
    if (fill >= 0.87)
      obj.shape = JudgedShape::square;
    else if (std::abs(fill - 0.785) <= 0.08)
      obj.shape = JudgedShape::disk;
    else if (std::abs(fill - 0.5) <= 0.08)
      obj.shape = JudgedShape::triangle;
    else
      obj.shape = JudgedShape::unknown;

    const float mean[3] = {static_cast<float>(sr / cnt), static_cast<float>(sg / cnt),
                           static_cast<float>(sb / cnt)};
    double best = 1e30;
    for (int c = 0; c < 4; ++c) {
      const auto rgb = color_rgb(static_cast<ColorName>(c));
      double d = 0;
      for (int k = 0; k < 3; ++k)
        d += (mean[k] - rgb[static_cast<std::size_t>(k)]) * (mean[k] - rgb[static_cast<std::size_t>(k)]);
      if (d < best) {
        best = d;
        obj.color = static_cast<ColorName>(c);
      }
    }

    const bool right = sx / cnt >= size / 2.0;
    const bool bottom = sy / cnt >= size / 2.0;
    obj.quadrant = static_cast<Quadrant>((bottom ? 2 : 0) + (right ? 1 : 0));
    out.objects.push_back(obj);
  }

  std::sort(out.objects.begin(), out.objects.end(),
            [](const JudgedObject& a, const JudgedObject& b) { return a.quadrant < b.quadrant; });
  return out;
}

}  // namespace harmon::data
