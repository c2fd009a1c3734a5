#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/detector.hpp"
#include "incdet/geometry.hpp"
#include "incdet/image.hpp"

namespace incdet {

/// A fetched candidate image; `path` is recorded in manifests verbatim.
struct CandidateImage {
  std::string path;
  Image image;
};

// ---------------------------------------------------------------------------
// Image sources

class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::vector<CandidateImage> fetch(const std::string& query, int count) = 0;
  virtual std::string id() const = 0;
};

/// Directory-backed source: an index.json mapping query -> relative image
/// paths. Returned paths are absolute so downstream manifests stay loadable
/// from anywhere. Unreadable files are skipped with a warning.
class LocalCorpusSource : public ImageSource {
 public:
  explicit LocalCorpusSource(const std::string& index_path) {
    std::ifstream f(index_path);
    if (!f) throw std::runtime_error("LocalCorpusSource: cannot open " + index_path);
    nlohmann::json j;
    f >> j;
    root_ = std::filesystem::absolute(std::filesystem::path(index_path)).parent_path().string();
    for (const auto& [query, paths] : j.at("queries").items())
      queries_[query] = paths.get<std::vector<std::string>>();
  }

  std::vector<CandidateImage> fetch(const std::string& query, int count) override {
    if (count < 1) throw std::invalid_argument("fetch: count must be >= 1");
    const auto it = queries_.find(query);
    if (it == queries_.end())
      throw std::runtime_error("LocalCorpusSource: no images indexed for query '" + query + "'");
    if (static_cast<int>(it->second.size()) < count)
      std::cerr << "[image-source] warning: only " << it->second.size() << " images for '"
                << query << "' (wanted " << count << ")\n";
    std::vector<CandidateImage> out;
    for (const std::string& rel : it->second) {
      if (static_cast<int>(out.size()) >= count) break;
      const std::string path = resolve_path(root_, rel);
      try {
        out.push_back({path, read_ppm(path)});
      } catch (const std::exception& e) {
        std::cerr << "[image-source] warning: skipping " << path << ": " << e.what() << "\n";
      }
    }
    if (out.empty())
      throw std::runtime_error("LocalCorpusSource: zero images retrievable for '" + query + "'");
    return out;
  }

  std::string id() const override { return "local:" + root_; }

 private:
  std::string root_;
  std::map<std::string, std::vector<std::string>> queries_;
};

// ---------------------------------------------------------------------------
// Box proposal providers

class ProposalProvider {
 public:
  virtual ~ProposalProvider() = default;
  virtual std::vector<ScoredBox> propose(const CandidateImage& image) = 0;
  virtual std::string id() const = 0;
};

/// Class-agnostic edge-density proposals: blur, Sobel magnitude, threshold,
/// connected components, one box per component. Deterministic; returns up to
/// max_boxes boxes ordered by score.
class EdgeBoxProposals : public ProposalProvider {
 public:
  explicit EdgeBoxProposals(int max_boxes = 20, double edge_thr = 30.0, int min_area = 16)
      : max_boxes_(max_boxes), edge_thr_(edge_thr), min_area_(min_area) {}

  std::vector<ScoredBox> propose(const CandidateImage& cand) override {
    const Image& image = cand.image;
    const int w = image.width, h = image.height;
    std::vector<double> gray(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gray[static_cast<std::size_t>(y) * w + x] = image.luma(x, y);
    // two box blurs to knock down the background noise
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<double> out(gray.size());
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
              s += gray[static_cast<std::size_t>(yy) * w + xx];
              ++n;
            }
          out[static_cast<std::size_t>(y) * w + x] = s / n;
        }
      gray.swap(out);
    }
    // Sobel magnitude and threshold
    std::vector<std::uint8_t> edge(gray.size(), 0);
    auto g = [&](int x, int y) {
      x = std::clamp(x, 0, w - 1);
      y = std::clamp(y, 0, h - 1);
      return gray[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double gx = g(x + 1, y - 1) + 2 * g(x + 1, y) + g(x + 1, y + 1) -
                          g(x - 1, y - 1) - 2 * g(x - 1, y) - g(x - 1, y + 1);
        const double gy = g(x - 1, y + 1) + 2 * g(x, y + 1) + g(x + 1, y + 1) -
                          g(x - 1, y - 1) - 2 * g(x, y - 1) - g(x + 1, y - 1);
        if (std::sqrt(gx * gx + gy * gy) > edge_thr_) edge[static_cast<std::size_t>(y) * w + x] = 1;
      }
    // dilate once so the component bridges small gaps
    std::vector<std::uint8_t> dil(edge.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool on = false;
        for (int dy = -1; dy <= 1 && !on; ++dy)
          for (int dx = -1; dx <= 1 && !on; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && xx >= 0 && yy < h && xx < w && edge[static_cast<std::size_t>(yy) * w + xx])
              on = true;
          }
        if (on) dil[static_cast<std::size_t>(y) * w + x] = 1;
      }
    // connected components in scan order (8-connectivity, BFS)
    std::vector<int> comp(dil.size(), -1);
    std::vector<ScoredBox> boxes;
    int next = 0;
    std::vector<int> stack;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i0 = static_cast<std::size_t>(y) * w + x;
        if (!dil[i0] || comp[i0] >= 0) continue;
        int min_x = x, max_x = x, min_y = y, max_y = y, edge_pixels = 0;
        stack.assign(1, static_cast<int>(i0));
        comp[i0] = next;
        while (!stack.empty()) {
          const int i = stack.back();
          stack.pop_back();
          const int cy = i / w, cx = i % w;
          min_x = std::min(min_x, cx);
          max_x = std::max(max_x, cx);
          min_y = std::min(min_y, cy);
          max_y = std::max(max_y, cy);
          if (edge[static_cast<std::size_t>(i)]) ++edge_pixels;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = cy + dy, xx = cx + dx;
              if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
              const std::size_t ii = static_cast<std::size_t>(yy) * w + xx;
              if (dil[ii] && comp[ii] < 0) {
                comp[ii] = next;
                stack.push_back(static_cast<int>(ii));
              }
            }
        }
        ++next;
        const Box b{static_cast<double>(min_x), static_cast<double>(min_y),
                    static_cast<double>(max_x + 1), static_cast<double>(max_y + 1)};
        if (b.area() < min_area_) continue;
        const double perimeter = 2.0 * (b.width() + b.height());
        const double score = std::min(1.0, edge_pixels / perimeter);
        boxes.push_back({b, 0, score});
      }
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    if (static_cast<int>(boxes.size()) > max_boxes_) boxes.resize(static_cast<std::size_t>(max_boxes_));
    return boxes;
  }

  std::string id() const override { return "ebox"; }

 private:
  int max_boxes_;
  double edge_thr_;
  int min_area_;
};

/// Noisy proposals from an existing detector run at a low confidence
/// threshold; class ids are discarded.
class DetectorProposals : public ProposalProvider {
 public:
  DetectorProposals(DetectorModel model, double score_thr = 0.2, double nms_thr = 0.5)
      : model_(std::move(model)), score_thr_(score_thr), nms_thr_(nms_thr) {}

  std::vector<ScoredBox> propose(const CandidateImage& cand) override {
    std::vector<ScoredBox> dets = detect(model_, cand.image, score_thr_, nms_thr_);
    for (ScoredBox& d : dets) d.class_id = 0;
    return dets;
  }

  std::string id() const override { return "deep"; }

 private:
  DetectorModel model_;
  double score_thr_;
  double nms_thr_;
};

/// Fixture provider for tests: boxes keyed by image path.
class ScriptedProposals : public ProposalProvider {
 public:
  std::map<std::string, std::vector<ScoredBox>> by_path;

  std::vector<ScoredBox> propose(const CandidateImage& cand) override {
    const auto it = by_path.find(cand.path);
    return it == by_path.end() ? std::vector<ScoredBox>{} : it->second;
  }
  std::string id() const override { return "scripted"; }
};

// ---------------------------------------------------------------------------
// Crop classifiers

class ClassifierProvider {
 public:
  virtual ~ClassifierProvider() = default;
  /// Top-k (label, confidence) for the region `box` of `image`, confidence
  /// descending, scores in [0,1].
  virtual std::vector<LabelScore> classify(const CandidateImage& image, const Box& box,
                                           int k) = 0;
  virtual std::string id() const = 0;
};

struct VocabEntry {
  std::string label;
  std::string shape_class;  // empty for distractor labels
  double weight = 1.0;
};

inline std::vector<VocabEntry> load_classifier_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open classifier vocab: " + path);
  nlohmann::json j;
  f >> j;
  std::vector<VocabEntry> out;
  for (const auto& e : j)
    out.push_back({e.at("label").get<std::string>(), e.at("class").get<std::string>(),
                   e.at("weight").get<double>()});
  return out;
}

/// Desk-scale stand-in for a large-vocabulary classifier: classifies crops of
/// the synthetic shapes by hue, with a crop-quality factor that prefers
/// boxes covering a whole shape (bright interior, dark surrounding ring).
class HeuristicShapeClassifier : public ClassifierProvider {
 public:
  explicit HeuristicShapeClassifier(std::vector<VocabEntry> vocab) : vocab_(std::move(vocab)) {}

  std::vector<LabelScore> classify(const CandidateImage& image, const Box& box, int k) override {
    const Image& img = image.image;
    const int x0 = std::clamp(static_cast<int>(std::floor(box.x_min)), 0, img.width);
    const int x1 = std::clamp(static_cast<int>(std::ceil(box.x_max)), 0, img.width);
    const int y0 = std::clamp(static_cast<int>(std::floor(box.y_min)), 0, img.height);
    const int y1 = std::clamp(static_cast<int>(std::ceil(box.y_max)), 0, img.height);

    double sum_r = 0, sum_g = 0, sum_b = 0;
    int bright = 0, interior = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        ++interior;
        if (img.luma(x, y) > 130.0) {
          ++bright;
          sum_r += img.at(x, y, 0);
          sum_g += img.at(x, y, 1);
          sum_b += img.at(x, y, 2);
        }
      }
    // ring just outside the box; out-of-image pixels count as dark
    int ring = 0, ring_bright = 0;
    const int rx0 = x0 - 3, rx1 = x1 + 3, ry0 = y0 - 3, ry1 = y1 + 3;
    for (int y = ry0; y < ry1; ++y)
      for (int x = rx0; x < rx1; ++x) {
        if (x >= x0 && x < x1 && y >= y0 && y < y1) continue;
        ++ring;
        if (x >= 0 && y >= 0 && x < img.width && y < img.height && img.luma(x, y) > 130.0)
          ++ring_bright;
      }

    const double fill = interior > 0 ? static_cast<double>(bright) / interior : 0.0;
    const double spill = ring > 0 ? static_cast<double>(ring_bright) / ring : 0.0;
    const double quality = fill * (1.0 - spill);

    std::vector<LabelScore> scored;
    if (bright < 4 || fill < 0.05) {
      for (const VocabEntry& e : vocab_)
        if (e.shape_class.empty()) scored.push_back({e.label, 0.3 * e.weight});
    } else {
      const double r = sum_r / bright, g = sum_g / bright, b = sum_b / bright;
      auto relu = [](double v) { return v > 0.0 ? v : 0.0; };
      std::map<std::string, double> affinity;
      affinity["circle"] = relu(r - std::max(g, b));
      affinity["square"] = relu(g - std::max(r, b));
      affinity["triangle"] = relu(b - std::max(r, g));
      affinity["cross"] = relu(std::min(r, g) - b);
      double total = 1e-9;
      for (const auto& [cls, a] : affinity) total += a;
      for (const VocabEntry& e : vocab_) {
        if (e.shape_class.empty()) {
          scored.push_back({e.label, 0.05 * e.weight * (1.0 - quality)});
        } else {
          const double s = affinity[e.shape_class] / total;
          scored.push_back({e.label, std::clamp(e.weight * quality * s, 0.0, 1.0)});
        }
      }
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const LabelScore& a, const LabelScore& b) { return a.score > b.score; });
    if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(k));
    return scored;
  }

  std::string id() const override { return "heuristic-shapes"; }

 private:
  std::vector<VocabEntry> vocab_;
};

/// Fixture classifier for tests, keyed by image path and rounded box corner.
class ScriptedClassifier : public ClassifierProvider {
 public:
  static std::string key(const std::string& path, const Box& b) {
    std::ostringstream os;
    os << path << "|" << std::llround(b.x_min) << "," << std::llround(b.y_min) << ","
       << std::llround(b.x_max) << "," << std::llround(b.y_max);
    return os.str();
  }

  std::map<std::string, std::vector<LabelScore>> table;

  std::vector<LabelScore> classify(const CandidateImage& image, const Box& box, int k) override {
    const auto it = table.find(key(image.path, box));
    if (it == table.end()) return {};
    std::vector<LabelScore> out = it->second;
    if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(k));
    return out;
  }
  std::string id() const override { return "scripted"; }
};

// ---------------------------------------------------------------------------
// Word embeddings

/// Word vectors from a whitespace-separated fixture file. Labels embed as
/// the mean of their word vectors; labels with no known word are
/// out-of-vocabulary and fail similarity tests.
class WordEmbeddings {
 public:
  static WordEmbeddings load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("WordEmbeddings: cannot open " + path);
    WordEmbeddings we;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::istringstream is(line);
      std::string word;
      is >> word;
      std::vector<double> v;
      double x;
      while (is >> x) v.push_back(x);
      if (v.empty()) continue;
      if (we.dim_ == 0) we.dim_ = static_cast<int>(v.size());
      if (static_cast<int>(v.size()) != we.dim_)
        throw std::runtime_error("WordEmbeddings: inconsistent dimension for word " + word);
      we.vectors_[word] = std::move(v);
    }
    if (we.vectors_.empty()) throw std::runtime_error("WordEmbeddings: empty file " + path);
    return we;
  }

  /// Mean of per-word vectors, L2-normalized; nullopt when every word is OOV.
  std::optional<std::vector<double>> embed(const std::string& label) const {
    std::istringstream is(label);
    std::string word;
    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    int found = 0;
    while (is >> word) {
      const auto it = vectors_.find(word);
      if (it == vectors_.end()) continue;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += it->second[i];
      ++found;
    }
    if (found == 0) return std::nullopt;
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 0.0) return std::nullopt;
    for (double& v : acc) v /= norm;
    return acc;
  }

  /// Cosine similarity of normalized label embeddings; nullopt on OOV.
  std::optional<double> similarity(const std::string& a, const std::string& b) const {
    const auto va = embed(a), vb = embed(b);
    if (!va || !vb) return std::nullopt;
    double dot = 0.0;
    for (std::size_t i = 0; i < va->size(); ++i) dot += (*va)[i] * (*vb)[i];
    return dot;
  }

  int dimension() const { return dim_; }

 private:
  std::map<std::string, std::vector<double>> vectors_;
  int dim_ = 0;
};

}  // namespace incdet
