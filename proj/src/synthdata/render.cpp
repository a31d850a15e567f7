#include "harmon/synthdata/render.hpp"

#include "harmon/common.hpp"

namespace harmon::data {

std::array<float, 3> color_rgb(ColorName c) {
  switch (c) {
    case ColorName::red: return {1.f, -1.f, -1.f};
    case ColorName::green: return {-1.f, 1.f, -1.f};
    case ColorName::blue: return {-1.f, -1.f, 1.f};
    case ColorName::yellow: return {1.f, 1.f, -1.f};
  }
  throw Error("bad color");
}

namespace {

int shape_box(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return 10;
    case ShapeKind::disk: return 12;
    case ShapeKind::triangle: return 12;
  }
  throw Error("bad shape");
}

}  // namespace

std::vector<float> render(const SceneSpec& spec, num::Rng& rng, int size) {
  if (size % 2 != 0) throw Error("render: image size must be even");
  std::vector<float> img(static_cast<std::size_t>(size) * size * 3, kBackground);
  const int half = size / 2;
  auto put = [&](int x, int y, const std::array<float, 3>& rgb) {
    float* px = img.data() + (static_cast<std::size_t>(y) * size + x) * 3;
    px[0] = rgb[0];
    px[1] = rgb[1];
    px[2] = rgb[2];
  };

  for (const auto& obj : spec.objects) {
    const int box = shape_box(obj.shape);
    const auto q = static_cast<int>(obj.quadrant);
    const int qx = (q % 2) * half;  // top-left=0, top-right=1, bottom-left=2, bottom-right=3
    const int qy = (q / 2) * half;
    const int slack = half - box - 2;  // 1-pixel margin on each side
    if (slack < 0) throw Error("render: object does not fit in quadrant");
    const int x0 = qx + 1 + static_cast<int>(rng.next_int(0, slack));
    const int y0 = qy + 1 + static_cast<int>(rng.next_int(0, slack));
    const auto rgb = color_rgb(obj.color);

    switch (obj.shape) {
      case ShapeKind::square:
        for (int y = 0; y < box; ++y)
          for (int x = 0; x < box; ++x) put(x0 + x, y0 + y, rgb);
        break;
      case ShapeKind::disk: {
        const double r = box / 2.0;
        const double cx = x0 + r, cy = y0 + r;
        for (int y = 0; y < box; ++y)
          for (int x = 0; x < box; ++x) {
            const double dx = x0 + x + 0.5 - cx, dy = y0 + y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r) put(x0 + x, y0 + y, rgb);
          }
        break;
      }
      case ShapeKind::triangle:
        // right triangle, vertical leg on the left, horizontal leg on the bottom
        for (int y = 0; y < box; ++y)
          for (int x = 0; x <= y; ++x) put(x0 + x, y0 + y, rgb);
        break;
    }
  }
  return img;
}

}  // namespace harmon::data
