#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/geometry.hpp"
#include "incdet/image.hpp"

namespace incdet {

struct LabelScore {
  std::string name;
  double score = 0.0;
};

struct BoxAnnotation {
  Box box;
  std::string class_name;
  double accs = 0.0;               // accumulated classification confidence
  std::vector<LabelScore> labels;  // credible labels contributing to accs
  bool self_labeled = false;       // true when produced by the dataset builder
};

struct ManifestImage {
  std::string path;
  int width = 0;
  int height = 0;
  std::string provenance;  // "", "new" or "exemplar"
  std::vector<BoxAnnotation> boxes;
};

struct BuilderConfigSnapshot {
  double thr_b = 0.01;
  double thr_d = 1.0;
  double thr_o = 0.5;
  int k = 5;
  std::string provider;
};

/// A training set: image references, box annotations and, for self-labeled
/// sets, the provenance of each box.
struct DatasetManifest {
  std::vector<std::string> classes;
  std::optional<BuilderConfigSnapshot> config;
  std::vector<ManifestImage> images;

  std::size_t total_boxes() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.boxes.size();
    return n;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["classes"] = m.classes;
  if (m.config) {
    j["config"] = {{"thr_b", m.config->thr_b},
                   {"thr_d", m.config->thr_d},
                   {"thr_o", m.config->thr_o},
                   {"k", m.config->k},
                   {"provider", m.config->provider}};
  }
  j["images"] = nlohmann::json::array();
  for (const ManifestImage& im : m.images) {
    nlohmann::json ji;
    ji["path"] = im.path;
    ji["width"] = im.width;
    ji["height"] = im.height;
    if (!im.provenance.empty()) ji["provenance"] = im.provenance;
    ji["boxes"] = nlohmann::json::array();
    for (const BoxAnnotation& b : im.boxes) {
      nlohmann::json jb;
      jb["x_min"] = b.box.x_min;
      jb["y_min"] = b.box.y_min;
      jb["x_max"] = b.box.x_max;
      jb["y_max"] = b.box.y_max;
      jb["class"] = b.class_name;
      if (b.self_labeled) {
        jb["accs"] = b.accs;
        nlohmann::json jl = nlohmann::json::array();
        for (const LabelScore& l : b.labels) jl.push_back({{"name", l.name}, {"score", l.score}});
        jb["labels"] = jl;
      }
      ji["boxes"].push_back(jb);
    }
    j["images"].push_back(ji);
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  if (j.contains("config")) {
    BuilderConfigSnapshot c;
    const auto& jc = j["config"];
    c.thr_b = jc.value("thr_b", c.thr_b);
    c.thr_d = jc.value("thr_d", c.thr_d);
    c.thr_o = jc.value("thr_o", c.thr_o);
    c.k = jc.value("k", c.k);
    c.provider = jc.value("provider", std::string());
    m.config = c;
  }
  for (const auto& ji : j.at("images")) {
    ManifestImage im;
    im.path = ji.at("path").get<std::string>();
    im.width = ji.value("width", 0);
    im.height = ji.value("height", 0);
    im.provenance = ji.value("provenance", std::string());
    for (const auto& jb : ji.at("boxes")) {
      BoxAnnotation b;
      b.box = {jb.at("x_min").get<double>(), jb.at("y_min").get<double>(),
               jb.at("x_max").get<double>(), jb.at("y_max").get<double>()};
      b.class_name = jb.at("class").get<std::string>();
      if (jb.contains("accs")) {
        b.self_labeled = true;
        b.accs = jb["accs"].get<double>();
        if (jb.contains("labels"))
          for (const auto& jl : jb["labels"])
            b.labels.push_back({jl.at("name").get<std::string>(), jl.at("score").get<double>()});
      }
      im.boxes.push_back(std::move(b));
    }
    m.images.push_back(std::move(im));
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  f << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return manifest_from_json(j);
}

/// Absolute paths pass through; relative paths resolve against base_dir.
inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

/// One loaded training sample: pixels plus ground truth in vocabulary ids.
struct TrainSample {
  std::string path;
  Image image;
  std::vector<ScoredBox> gt;
  bool exemplar = false;
};

inline int class_index(const std::vector<std::string>& vocab, const std::string& name) {
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown class name: " + name);
}

/// Loads manifest images from disk and maps class names to ids in `vocab`.
/// Degenerate (zero-area) ground-truth boxes are rejected here, at ingestion.
inline std::vector<TrainSample> load_samples(const DatasetManifest& m, const std::string& base_dir,
                                             const std::vector<std::string>& vocab,
                                             bool as_exemplar = false) {
  std::vector<TrainSample> out;
  for (const ManifestImage& im : m.images) {
    TrainSample s;
    s.path = im.path;
    s.image = read_ppm(resolve_path(base_dir, im.path));
    s.exemplar = as_exemplar || im.provenance == "exemplar";
    if (im.width > 0 && (im.width != s.image.width || im.height != s.image.height))
      throw std::runtime_error("load_samples: size mismatch for " + im.path);
    for (const BoxAnnotation& b : im.boxes) {
      if (b.box.area() <= 0.0)
        throw std::invalid_argument("load_samples: degenerate ground-truth box in " + im.path);
      s.gt.push_back({b.box, class_index(vocab, b.class_name), 1.0});
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace incdet
