#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/detector.hpp"
#include "incdet/hash.hpp"

namespace incdet {

struct DetectionRecord {
  int image_id = 0;
  double score = 0.0;
  Box box;
};

struct APResult {
  double ap = 0.0;
  bool defined = false;  // false when the class has no ground truth
};

/// All-points average precision at a fixed IoU threshold. Matching is greedy
/// by descending score (ties keep insertion order): a detection matches the
/// highest-IoU ground-truth box of its image (ties to the lowest gt index)
/// and counts as TP only when that IoU reaches iou_thr and the gt is still
/// unmatched. The PR curve is integrated under its precision envelope.
inline APResult average_precision(std::vector<DetectionRecord> detections,
                                  const std::map<int, std::vector<Box>>& gt_by_image,
                                  double iou_thr = 0.5) {
  std::size_t total_gt = 0;
  for (const auto& [id, boxes] : gt_by_image) total_gt += boxes.size();
  if (total_gt == 0) return {0.0, false};

  std::stable_sort(detections.begin(), detections.end(),
                   [](const DetectionRecord& a, const DetectionRecord& b) { return a.score > b.score; });

  std::map<int, std::vector<bool>> matched;
  for (const auto& [id, boxes] : gt_by_image) matched[id].assign(boxes.size(), false);

  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (const DetectionRecord& d : detections) {
    const auto it = gt_by_image.find(d.image_id);
    int best_gt = -1;
    double best_iou = 0.0;
    if (it != gt_by_image.end()) {
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        const double v = iou(it->second[g], d.box);
        if (v > best_iou) {
          best_iou = v;
          best_gt = static_cast<int>(g);
        }
      }
    }
    if (best_gt >= 0 && best_iou >= iou_thr && !matched[d.image_id][static_cast<std::size_t>(best_gt)]) {
      matched[d.image_id][static_cast<std::size_t>(best_gt)] = true;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }

  double ap = 0.0, env = 0.0;
  for (std::size_t i = recall.size(); i-- > 0;) {
    env = std::max(env, precision[i]);
    const double prev = i == 0 ? 0.0 : recall[i - 1];
    ap += (recall[i] - prev) * env;
  }
  return {ap, true};
}

struct EvalReport {
  std::string scenario;
  std::vector<std::pair<std::string, double>> per_class_ap;
  std::vector<std::string> undefined_classes;  // excluded from the means
  double map = 0.0;
  std::optional<double> old_class_mean;
  std::optional<double> new_class_mean;
  double score_thr = 0.05;
  double nms_thr = 0.5;
  std::string config_hash;

  nlohmann::json to_json() const {
    nlohmann::json per;
    for (const auto& [name, ap] : per_class_ap) per[name] = ap;
    nlohmann::json j = {{"scenario", scenario},
                        {"per_class_ap", per},
                        {"map", map},
                        {"undefined_classes", undefined_classes},
                        {"score_thr", score_thr},
                        {"nms_thr", nms_thr},
                        {"ap_style", "all_points"},
                        {"config_hash", config_hash}};
    if (old_class_mean) j["old_class_mean"] = *old_class_mean;
    if (new_class_mean) j["new_class_mean"] = *new_class_mean;
    return j;
  }

  std::string table() const {
    std::string out = "class                 AP\n";
    char buf[96];
    for (const auto& [name, ap] : per_class_ap) {
      std::snprintf(buf, sizeof(buf), "%-20s %.4f\n", name.c_str(), ap);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-20s %.4f\n", "mAP", map);
    out += buf;
    if (old_class_mean) {
      std::snprintf(buf, sizeof(buf), "%-20s %.4f\n", "old-class mean", *old_class_mean);
      out += buf;
    }
    if (new_class_mean) {
      std::snprintf(buf, sizeof(buf), "%-20s %.4f\n", "new-class mean", *new_class_mean);
      out += buf;
    }
    return out;
  }
};

/// Runs the detector over a ground-truth manifest and scores mAP@0.5.
/// Classes must be a subset of the model vocabulary. Classes without ground
/// truth are excluded from the means and flagged. `old_class_count` splits
/// the vocabulary into old/new means; pass 0 to skip the split.
inline EvalReport evaluate_model(const DetectorModel& model, const DatasetManifest& dataset,
                                 const std::string& base_dir, double score_thr = 0.05,
                                 double nms_thr = 0.5, int old_class_count = 0,
                                 const std::string& scenario_tag = "") {
  for (const std::string& c : dataset.classes) (void)class_index(model.labels, c);

  std::map<int, std::vector<DetectionRecord>> dets_by_class;
  std::map<int, std::map<int, std::vector<Box>>> gt_by_class;
  int image_id = 0;
  for (const ManifestImage& im : dataset.images) {
    const Image img = read_ppm(resolve_path(base_dir, im.path));
    for (const BoxAnnotation& b : im.boxes) {
      if (b.box.area() <= 0.0)
        throw std::invalid_argument("evaluate_model: degenerate ground-truth box in " + im.path);
      gt_by_class[class_index(model.labels, b.class_name)][image_id].push_back(b.box);
    }
    for (const ScoredBox& d : detect(model, img, score_thr, nms_thr))
      dets_by_class[d.class_id].push_back({image_id, d.score, d.box});
    ++image_id;
  }

  EvalReport rep;
  rep.scenario = scenario_tag;
  rep.score_thr = score_thr;
  rep.nms_thr = nms_thr;
  double sum = 0.0;
  int defined = 0;
  double old_sum = 0.0, new_sum = 0.0;
  int old_n = 0, new_n = 0;
  for (const std::string& cls : dataset.classes) {
    const int id = class_index(model.labels, cls);
    const APResult r = average_precision(dets_by_class[id], gt_by_class[id], 0.5);
    if (!r.defined) {
      rep.undefined_classes.push_back(cls);
      continue;
    }
    rep.per_class_ap.emplace_back(cls, r.ap);
    sum += r.ap;
    ++defined;
    if (old_class_count > 0) {
      if (id < old_class_count) {
        old_sum += r.ap;
        ++old_n;
      } else {
        new_sum += r.ap;
        ++new_n;
      }
    }
  }
  rep.map = defined > 0 ? sum / defined : 0.0;
  if (old_n > 0) rep.old_class_mean = old_sum / old_n;
  if (new_n > 0) rep.new_class_mean = new_sum / new_n;
  const nlohmann::json cfg = {{"score_thr", score_thr}, {"nms_thr", nms_thr},
                              {"iou_thr", 0.5},         {"ap_style", "all_points"}};
  rep.config_hash = sha256_hex(cfg.dump());
  return rep;
}

}  // namespace incdet
