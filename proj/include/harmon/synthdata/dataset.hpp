#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harmon/synthdata/judge.hpp"
#include "harmon/synthdata/render.hpp"
#include "harmon/synthdata/text.hpp"

namespace harmon::data {

struct ImageSample {
  SceneSpec spec;
  std::vector<float> pixels;  // size x size x 3, in [-1,1]
  std::string caption;
  std::vector<QaPair> qa;
};

// Pure function of (seed, index): each sample draws from its own substream, so
// any slice of the corpus can be produced independently and in parallel.
ImageSample make_sample(std::uint64_t seed, std::uint64_t index, int size = kImageSize);

// scene_<index>.png files plus metadata.jsonl (one JSON object per line with
// index, spec, caption, qa).
void export_dataset(const std::string& dir, std::uint64_t seed, int n, int size = kImageSize);
std::vector<ImageSample> import_dataset(const std::string& dir);

}  // namespace harmon::data
