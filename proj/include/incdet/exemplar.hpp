#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/detector.hpp"
#include "incdet/rng.hpp"

namespace incdet {

enum class ExemplarStrategy { random, mean_closest, cluster };

inline std::string to_string(ExemplarStrategy s) {
  switch (s) {
    case ExemplarStrategy::random: return "random";
    case ExemplarStrategy::mean_closest: return "mean_closest";
    case ExemplarStrategy::cluster: return "cluster";
  }
  throw std::logic_error("unreachable");
}

inline ExemplarStrategy exemplar_strategy_from_string(const std::string& s) {
  if (s == "random") return ExemplarStrategy::random;
  if (s == "mean_closest") return ExemplarStrategy::mean_closest;
  if (s == "cluster") return ExemplarStrategy::cluster;
  throw std::invalid_argument("unknown exemplar strategy: " + s);
}

struct ExemplarEntry {
  std::string image_path;
  std::vector<Box> boxes;  // ground-truth boxes of the owning class
};

struct ExemplarClassSet {
  std::string class_name;
  std::vector<ExemplarEntry> entries;
};

/// Persisted per-class rehearsal sets. Immutable once written.
struct ExemplarSet {
  ExemplarStrategy strategy = ExemplarStrategy::cluster;
  std::uint64_t seed = 0;
  int per_class_count = 0;
  std::vector<ExemplarClassSet> classes;

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.entries.size();
    return n;
  }
};

/// Candidate image for exemplar selection.
struct ExemplarCandidate {
  std::string image_path;
  Image image;
  std::vector<Box> boxes;
};

using FeatureExtractor = std::function<std::vector<double>(const Image&)>;

/// Selection feature: spatial mean of the deepest pyramid feature map.
inline std::vector<double> detector_image_feature(const DetectorModel& model, const Image& img) {
  const RawPrediction pred = model.forward(to_tensor(img));
  const Tensor& deepest = pred.features.back();
  const int c = deepest.dim(0);
  const double plane = static_cast<double>(deepest.dim(1)) * deepest.dim(2);
  std::vector<double> f(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int y = 0; y < deepest.dim(1); ++y)
      for (int x = 0; x < deepest.dim(2); ++x) s += deepest.at(ch, y, x);
    f[static_cast<std::size_t>(ch)] = s / plane;
  }
  return f;
}

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::vector<double> mean_of(const std::vector<std::vector<double>>& feats,
                                   const std::vector<int>& idx) {
  std::vector<double> m(feats[0].size(), 0.0);
  for (int i : idx)
    for (std::size_t d = 0; d < m.size(); ++d) m[d] += feats[static_cast<std::size_t>(i)][d];
  for (double& v : m) v /= static_cast<double>(idx.size());
  return m;
}

/// Greedy herding: repeatedly add the candidate that brings the running
/// exemplar mean closest to the class mean. Ties go to the lower index.
inline std::vector<int> herd_selection(const std::vector<std::vector<double>>& feats, int count) {
  std::vector<int> all(feats.size());
  std::iota(all.begin(), all.end(), 0);
  const std::vector<double> target = mean_of(feats, all);
  std::vector<int> chosen;
  std::vector<double> running(feats[0].size(), 0.0);
  std::vector<bool> used(feats.size(), false);
  for (int step = 0; step < count; ++step) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < feats.size(); ++i) {
      if (used[i]) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < running.size(); ++k) {
        const double m = (running[k] + feats[i][k]) / (step + 1.0);
        const double diff = m - target[k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    chosen.push_back(best);
    for (std::size_t k = 0; k < running.size(); ++k) running[k] += feats[static_cast<std::size_t>(best)][k];
  }
  return chosen;
}

/// Seeded k-means (k-means++ init). Empty clusters are reseeded to the point
/// farthest from its centroid, keeping the run deterministic.
inline std::vector<int> kmeans_assign(const std::vector<std::vector<double>>& feats, int k,
                                      Rng& rng, int iters = 50) {
  const int n = static_cast<int>(feats.size());
  std::vector<std::vector<double>> centers;
  centers.push_back(feats[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
  while (static_cast<int>(centers.size()) < k) {
    std::vector<double> d2(static_cast<std::size_t>(n));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(feats[static_cast<std::size_t>(i)], c));
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(feats[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
      continue;
    }
    double r = rng.uniform() * total;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      r -= d2[static_cast<std::size_t>(i)];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(feats[static_cast<std::size_t>(pick)]);
  }
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(feats[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    for (int c = 0; c < k; ++c) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == c) members.push_back(i);
      if (members.empty()) {
        // reseed to the globally worst-fitting point
        int far = 0;
        double fd = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = sq_dist(feats[static_cast<std::size_t>(i)],
                                   centers[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        centers[static_cast<std::size_t>(c)] = feats[static_cast<std::size_t>(far)];
        assign[static_cast<std::size_t>(far)] = c;
        changed = true;
      } else {
        centers[static_cast<std::size_t>(c)] = mean_of(feats, members);
      }
    }
    if (!changed) break;
  }
  return assign;
}

}  // namespace detail

/// Exemplar selection over per-class candidate pools. Strategies: uniform
/// random, greedy mean-herding, or k-means clustering with one random pick
/// per cluster. `count` caps at the pool size (with a warning flag in the
/// returned set's per_class_count left as requested).
inline ExemplarSet select_exemplars(
    const std::map<std::string, std::vector<ExemplarCandidate>>& per_class,
    const FeatureExtractor& features, int count, ExemplarStrategy strategy, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("select_exemplars: count must be >= 1");
  ExemplarSet set;
  set.strategy = strategy;
  set.seed = seed;
  set.per_class_count = count;
  std::uint64_t class_salt = 0;
  for (const auto& [class_name, candidates] : per_class) {
    if (candidates.empty())
      throw std::invalid_argument("select_exemplars: empty class " + class_name);
    Rng rng(derive_seed(seed, class_salt++));
    const int take = std::min<int>(count, static_cast<int>(candidates.size()));
    std::vector<int> chosen;
    if (take == static_cast<int>(candidates.size())) {
      chosen.resize(candidates.size());
      std::iota(chosen.begin(), chosen.end(), 0);
    } else if (strategy == ExemplarStrategy::random) {
      std::vector<int> idx(candidates.size());
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      chosen.assign(idx.begin(), idx.begin() + take);
    } else {
      std::vector<std::vector<double>> feats;
      feats.reserve(candidates.size());
      for (const ExemplarCandidate& c : candidates) feats.push_back(features(c.image));
      if (strategy == ExemplarStrategy::mean_closest) {
        chosen = detail::herd_selection(feats, take);
      } else {
        const std::vector<int> assign = detail::kmeans_assign(feats, take, rng);
        for (int c = 0; c < take; ++c) {
          std::vector<int> members;
          for (std::size_t i = 0; i < feats.size(); ++i)
            if (assign[i] == c) members.push_back(static_cast<int>(i));
          if (members.empty()) continue;  // cannot happen after reseeding
          chosen.push_back(members[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(members.size()) - 1))]);
        }
      }
    }
    std::sort(chosen.begin(), chosen.end());
    ExemplarClassSet cs;
    cs.class_name = class_name;
    for (int i : chosen) {
      const ExemplarCandidate& c = candidates[static_cast<std::size_t>(i)];
      if (c.boxes.empty())
        throw std::invalid_argument("select_exemplars: candidate without boxes: " + c.image_path);
      cs.entries.push_back({c.image_path, c.boxes});
    }
    set.classes.push_back(std::move(cs));
  }
  return set;
}

/// Even split of a fixed total budget; the remainder goes to the earliest
/// classes.
inline std::vector<int> split_total_budget(int total, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("split_total_budget: no classes");
  std::vector<int> out(static_cast<std::size_t>(num_classes), total / num_classes);
  for (int i = 0; i < total % num_classes; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

/// Union of exemplar images and a new-class manifest, with per-image
/// provenance tags and a seed-stable shuffle. Re-merging the same sets is a
/// no-op (images dedupe by path). Class-id collisions are rejected.
inline DatasetManifest merge_with_new_data(const ExemplarSet& exemplars,
                                           const DatasetManifest& new_manifest,
                                           std::uint64_t seed) {
  DatasetManifest out;
  out.config = new_manifest.config;
  std::vector<std::string> classes;
  for (const ExemplarClassSet& c : exemplars.classes) classes.push_back(c.class_name);
  for (const std::string& c : new_manifest.classes) {
    if (std::find(classes.begin(), classes.end(), c) != classes.end())
      throw std::invalid_argument("merge_with_new_data: class id collision: " + c);
    classes.push_back(c);
  }
  out.classes = classes;

  std::vector<ManifestImage> images;
  std::vector<std::string> seen;
  for (const ExemplarClassSet& c : exemplars.classes) {
    for (const ExemplarEntry& e : c.entries) {
      if (std::find(seen.begin(), seen.end(), e.image_path) != seen.end()) continue;
      seen.push_back(e.image_path);
      ManifestImage im;
      im.path = e.image_path;
      im.provenance = "exemplar";
      for (const Box& b : e.boxes) im.boxes.push_back({b, c.class_name, 0.0, {}, false});
      images.push_back(std::move(im));
    }
  }
  for (const ManifestImage& im : new_manifest.images) {
    if (std::find(seen.begin(), seen.end(), im.path) != seen.end()) continue;
    seen.push_back(im.path);
    ManifestImage copy = im;
    copy.provenance = "new";
    images.push_back(std::move(copy));
  }
  Rng rng(derive_seed(seed, 0xE0));
  rng.shuffle(images);
  out.images = std::move(images);
  return out;
}

inline nlohmann::json exemplar_set_to_json(const ExemplarSet& set) {
  nlohmann::json j = nlohmann::json::array();
  for (const ExemplarClassSet& c : set.classes) {
    nlohmann::json jc;
    jc["class_name"] = c.class_name;
    jc["strategy"] = to_string(set.strategy);
    jc["seed"] = set.seed;
    jc["entries"] = nlohmann::json::array();
    for (const ExemplarEntry& e : c.entries) {
      nlohmann::json je;
      je["image_path"] = e.image_path;
      je["boxes"] = nlohmann::json::array();
      for (const Box& b : e.boxes)
        je["boxes"].push_back(
            {{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}});
      jc["entries"].push_back(je);
    }
    j.push_back(jc);
  }
  return j;
}

inline ExemplarSet exemplar_set_from_json(const nlohmann::json& j) {
  ExemplarSet set;
  bool first = true;
  for (const auto& jc : j) {
    if (first) {
      set.strategy = exemplar_strategy_from_string(jc.at("strategy").get<std::string>());
      set.seed = jc.at("seed").get<std::uint64_t>();
      first = false;
    }
    ExemplarClassSet cs;
    cs.class_name = jc.at("class_name").get<std::string>();
    for (const auto& je : jc.at("entries")) {
      ExemplarEntry e;
      e.image_path = je.at("image_path").get<std::string>();
      for (const auto& jb : je.at("boxes"))
        e.boxes.push_back({jb.at("x_min").get<double>(), jb.at("y_min").get<double>(),
                           jb.at("x_max").get<double>(), jb.at("y_max").get<double>()});
      cs.entries.push_back(std::move(e));
    }
    set.per_class_count = std::max<int>(set.per_class_count, static_cast<int>(cs.entries.size()));
    set.classes.push_back(std::move(cs));
  }
  return set;
}

inline void save_exemplar_set(const ExemplarSet& set, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_exemplar_set: cannot open " + path);
  f << exemplar_set_to_json(set).dump(2) << "\n";
}

inline ExemplarSet load_exemplar_set(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_exemplar_set: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return exemplar_set_from_json(j);
}

}  // namespace incdet
