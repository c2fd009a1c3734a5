#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/image.hpp"
#include "incdet/rng.hpp"

namespace incdet {

/// The built-in desk-scale corpus: colored shapes on dark noise backgrounds.
/// Four shape classes are supported; each renders in a distinct hue so a
/// small classifier can tell them apart from crops.
namespace shapes {

inline const std::vector<std::string>& known_classes() {
  static const std::vector<std::string> v = {"circle", "square", "triangle", "cross"};
  return v;
}

struct ShapeColor {
  std::uint8_t r, g, b;
};

inline ShapeColor class_color(const std::string& cls) {
  if (cls == "circle") return {230, 60, 60};    // red
  if (cls == "square") return {60, 220, 70};    // green
  if (cls == "triangle") return {70, 90, 230};  // blue
  if (cls == "cross") return {235, 220, 60};    // yellow
  throw std::invalid_argument("unknown shape class: " + cls);
}

/// Renders one shape; returns its tight bounding box.
inline Box render_shape(Image& img, const std::string& cls, double cx, double cy, double size,
                        Rng& rng) {
  const ShapeColor col = class_color(cls);
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto jitter = [&](std::uint8_t base) {
      const int v = static_cast<int>(base) + rng.uniform_int(-20, 20);
      return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    };
    img.set(x, y, jitter(col.r), jitter(col.g), jitter(col.b));
  };
  const double half = size / 2.0;
  Box bbox{cx - half, cy - half, cx + half, cy + half};
  const int x0 = static_cast<int>(std::floor(bbox.x_min));
  const int x1 = static_cast<int>(std::ceil(bbox.x_max));
  const int y0 = static_cast<int>(std::floor(bbox.y_min));
  const int y1 = static_cast<int>(std::ceil(bbox.y_max));
  if (cls == "circle") {
    const double r2 = half * half;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= r2) put(x, y);
      }
  } else if (cls == "square") {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (x + 0.5 >= bbox.x_min && x + 0.5 <= bbox.x_max && y + 0.5 >= bbox.y_min &&
            y + 0.5 <= bbox.y_max)
          put(x, y);
  } else if (cls == "triangle") {
    // isoceles, apex up
    for (int y = y0; y <= y1; ++y) {
      const double t = (y + 0.5 - bbox.y_min) / size;  // 0 at apex row
      if (t < 0.0 || t > 1.0) continue;
      const double hw = t * half;
      for (int x = x0; x <= x1; ++x)
        if (std::abs(x + 0.5 - cx) <= hw) put(x, y);
    }
  } else if (cls == "cross") {
    const double arm = size / 3.0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double fx = x + 0.5, fy = y + 0.5;
        const bool in_v = std::abs(fx - cx) <= arm / 2 && fy >= bbox.y_min && fy <= bbox.y_max;
        const bool in_h = std::abs(fy - cy) <= arm / 2 && fx >= bbox.x_min && fx <= bbox.x_max;
        if (in_v || in_h) put(x, y);
      }
  } else {
    throw std::invalid_argument("unknown shape class: " + cls);
  }
  return bbox;
}

inline Image noise_background(int w, int h, Rng& rng) {
  Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.uniform_int(0, 90));
  return img;
}

/// One rendered sample: image plus ground-truth boxes.
struct Sample {
  Image image;
  std::vector<BoxAnnotation> boxes;
};

inline Sample make_sample(const std::string& cls, int image_size, Rng& rng, int objects = 1,
                          double min_size = 14.0, double max_size = 34.0) {
  Sample s;
  s.image = noise_background(image_size, image_size, rng);
  for (int i = 0; i < objects; ++i) {
    const double size = rng.uniform(min_size, std::min(max_size, image_size - 6.0));
    const double half = size / 2.0;
    const double cx = rng.uniform(half + 2.0, image_size - half - 2.0);
    const double cy = rng.uniform(half + 2.0, image_size - half - 2.0);
    const Box b = render_shape(s.image, cls, cx, cy, size, rng);
    s.boxes.push_back({b, cls, 0.0, {}, false});
  }
  return s;
}

struct CorpusSpec {
  std::vector<std::string> classes = known_classes();
  int train_per_class = 200;
  int test_per_class = 50;
  int image_size = 48;
  int objects_per_image = 1;
  std::uint64_t seed = 1;
};

/// Classifier vocabulary used by the crop classifier: label -> owning shape
/// class (empty for distractors) and a salience weight.
inline nlohmann::json default_classifier_vocab() {
  return nlohmann::json::array({
      {{"label", "circle"}, {"class", "circle"}, {"weight", 1.0}},
      {{"label", "disc"}, {"class", "circle"}, {"weight", 0.6}},
      {{"label", "red ball"}, {"class", "circle"}, {"weight", 0.35}},
      {{"label", "square"}, {"class", "square"}, {"weight", 1.0}},
      {{"label", "green block"}, {"class", "square"}, {"weight", 0.6}},
      {{"label", "tile"}, {"class", "square"}, {"weight", 0.35}},
      {{"label", "triangle"}, {"class", "triangle"}, {"weight", 1.0}},
      {{"label", "blue wedge"}, {"class", "triangle"}, {"weight", 0.6}},
      {{"label", "cross"}, {"class", "cross"}, {"weight", 1.0}},
      {{"label", "plus sign"}, {"class", "cross"}, {"weight", 0.6}},
      {{"label", "speckle"}, {"class", ""}, {"weight", 0.4}},
      {{"label", "background"}, {"class", ""}, {"weight", 0.3}},
  });
}

/// Word vectors for the embedding fixture. Words of the same class share a
/// direction, so alias labels pass the combined-similarity test against the
/// class-name query while distractors fail it.
inline void write_embedding_fixture(const std::string& path, std::uint64_t seed = 9) {
  const std::map<std::string, int> word_axis = {
      {"circle", 0}, {"disc", 0},  {"red", 0},      {"ball", 0},   {"square", 1},
      {"green", 1},  {"block", 1}, {"tile", 1},     {"triangle", 2}, {"blue", 2},
      {"wedge", 2},  {"cross", 3}, {"plus", 3},     {"sign", 3},   {"speckle", 4},
      {"background", 5}};
  const int dim = 8;
  Rng rng(seed);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write embedding fixture: " + path);
  f.precision(6);
  for (const auto& [word, axis] : word_axis) {
    std::vector<double> v(dim, 0.0);
    v[static_cast<std::size_t>(axis)] = 1.0;
    for (double& x : v) x += rng.normal(0.0, 0.05);
    f << word;
    for (double x : v) f << " " << x;
    f << "\n";
  }
}

/// Generates a full corpus: images, per-class train/test manifests (paths
/// relative to the manifest file), a query index for the image source, the
/// classifier vocabulary and the embedding fixture.
inline void generate_corpus(const std::string& dir, const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  if (spec.classes.empty()) throw std::invalid_argument("generate_corpus: no classes");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "manifests");
  nlohmann::json index;
  index["queries"] = nlohmann::json::object();
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const std::string& cls = spec.classes[ci];
    (void)class_color(cls);  // validate early
    fs::create_directories(fs::path(dir) / "images" / cls);
    Rng rng(derive_seed(spec.seed, 0x100 + ci));
    DatasetManifest train, test;
    train.classes = {cls};
    test.classes = {cls};
    nlohmann::json pool = nlohmann::json::array();
    const int total = spec.train_per_class + spec.test_per_class;
    for (int i = 0; i < total; ++i) {
      const Sample s = make_sample(cls, spec.image_size, rng, spec.objects_per_image);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%04d.ppm", cls.c_str(), i);
      const std::string rel = "images/" + cls + "/" + name;
      write_ppm(s.image, (fs::path(dir) / rel).string());
      ManifestImage im;
      im.path = "../" + rel;  // manifests live in <dir>/manifests
      im.width = s.image.width;
      im.height = s.image.height;
      im.boxes = s.boxes;
      if (i < spec.train_per_class) {
        train.images.push_back(im);
        pool.push_back(rel);
      } else {
        test.images.push_back(im);
      }
    }
    save_manifest(train, (fs::path(dir) / "manifests" / (cls + "_train.json")).string());
    save_manifest(test, (fs::path(dir) / "manifests" / (cls + "_test.json")).string());
    index["queries"][cls] = pool;
  }
  {
    std::ofstream f((fs::path(dir) / "index.json").string());
    f << index.dump(2) << "\n";
  }
  {
    std::ofstream f((fs::path(dir) / "classifier_vocab.json").string());
    f << default_classifier_vocab().dump(2) << "\n";
  }
  write_embedding_fixture((fs::path(dir) / "embeddings.txt").string());
  {
    nlohmann::json meta = {{"classes", spec.classes},
                           {"train_per_class", spec.train_per_class},
                           {"test_per_class", spec.test_per_class},
                           {"image_size", spec.image_size},
                           {"objects_per_image", spec.objects_per_image},
                           {"seed", spec.seed}};
    std::ofstream f((fs::path(dir) / "corpus.json").string());
    f << meta.dump(2) << "\n";
  }
}

}  // namespace shapes
}  // namespace incdet
