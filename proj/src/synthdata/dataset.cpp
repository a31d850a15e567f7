#include "harmon/synthdata/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "harmon/common.hpp"
#include "harmon/synthdata/png_io.hpp"

namespace harmon::data {

namespace fs = std::filesystem;

ImageSample make_sample(std::uint64_t seed, std::uint64_t index, int size) {
  num::Rng rng = num::Rng(seed).split(index);
  ImageSample s;
  s.spec = sample_scene(rng);
  s.pixels = render(s.spec, rng, size);
  s.caption = caption(s.spec);
  s.qa = qa_pairs(s.spec);
  return s;
}

namespace {
std::string scene_name(int index) {
  std::ostringstream os;
  os << "scene_" << std::setw(5) << std::setfill('0') << index << ".png";
  return os.str();
}
}  // namespace

void export_dataset(const std::string& dir, std::uint64_t seed, int n, int size) {
  fs::create_directories(dir);
  std::ofstream meta(fs::path(dir) / "metadata.jsonl", std::ios::trunc);
  if (!meta) throw Error("export_dataset: cannot write metadata in '" + dir + "'");
  for (int i = 0; i < n; ++i) {
    ImageSample s = make_sample(seed, static_cast<std::uint64_t>(i), size);
    write_png_rgb((fs::path(dir) / scene_name(i)).string(), size, size,
                  float_image_to_bytes(s.pixels));
    nlohmann::json qa = nlohmann::json::array();
    for (const auto& p : s.qa) qa.push_back({p.question, p.answer});
    nlohmann::json line = {{"index", i},
                           {"image", scene_name(i)},
                           {"spec", s.spec.to_json()},
                           {"caption", s.caption},
                           {"qa", std::move(qa)}};
    meta << line.dump() << "\n";
  }
}

std::vector<ImageSample> import_dataset(const std::string& dir) {
  std::ifstream meta(fs::path(dir) / "metadata.jsonl");
  if (!meta) throw Error("import_dataset: no metadata.jsonl in '" + dir + "'");
  std::vector<ImageSample> out;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ImageSample s;
    s.spec = SceneSpec::from_json(j.at("spec"));
    s.caption = j.at("caption").get<std::string>();
    for (const auto& p : j.at("qa"))
      s.qa.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>()});
    int w = 0, h = 0;
    std::vector<unsigned char> rgb;
    read_png_rgb((fs::path(dir) / j.at("image").get<std::string>()).string(), w, h, rgb);
    if (w != h) throw Error("import_dataset: non-square image " + j.at("image").get<std::string>());
    s.pixels = bytes_to_float_image(rgb);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace harmon::data
