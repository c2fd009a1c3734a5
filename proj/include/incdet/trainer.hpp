#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/distill.hpp"
#include "incdet/exemplar.hpp"

namespace incdet {

struct LossBreakdown {
  double focal = 0.0;
  double regr = 0.0;
  double dist_clas = 0.0;
  double dist_bbox = 0.0;
  double dist_feat = 0.0;

  double total(const DistillConfig& c) const {
    return focal + c.lambda1 * regr + c.lambda2 * dist_clas + c.lambda3 * dist_bbox +
           c.lambda4 * dist_feat;
  }
  LossBreakdown& operator+=(const LossBreakdown& o) {
    focal += o.focal;
    regr += o.regr;
    dist_clas += o.dist_clas;
    dist_bbox += o.dist_bbox;
    dist_feat += o.dist_feat;
    return *this;
  }
  LossBreakdown scaled(double s) const {
    return {focal * s, regr * s, dist_clas * s, dist_bbox * s, dist_feat * s};
  }
};

struct TrainRecord {
  int epoch = 0;
  int step = 0;
  LossBreakdown losses;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  int k_box = 0;
  std::uint64_t seed = 0;
  double total_wall_s = 0.0;

  /// Newline-delimited JSON, one record per optimizer step.
  void write_ndjson(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("TrainLog: cannot open " + path);
    for (const TrainRecord& r : records) {
      nlohmann::json j = {{"epoch", r.epoch},       {"step", r.step},
                          {"focal", r.losses.focal}, {"regr", r.losses.regr},
                          {"dist_clas", r.losses.dist_clas},
                          {"dist_bbox", r.losses.dist_bbox},
                          {"dist_feat", r.losses.dist_feat},
                          {"lr", r.lr},             {"wall_ms", r.wall_ms}};
      f << j.dump() << "\n";
    }
  }
};

/// The four learning schemes compared in the experiments.
enum class TrainScheme { all_data, catastrophic, no_feat_distill, feat_distill };

inline std::string to_string(TrainScheme s) {
  switch (s) {
    case TrainScheme::all_data: return "all_data";
    case TrainScheme::catastrophic: return "catastrophic";
    case TrainScheme::no_feat_distill: return "no_feat_distill";
    case TrainScheme::feat_distill: return "feat_distill";
  }
  throw std::logic_error("unreachable");
}

inline TrainScheme train_scheme_from_string(const std::string& s) {
  if (s == "all_data") return TrainScheme::all_data;
  if (s == "catastrophic") return TrainScheme::catastrophic;
  if (s == "no_feat_distill") return TrainScheme::no_feat_distill;
  if (s == "feat_distill") return TrainScheme::feat_distill;
  throw std::invalid_argument("unknown train scheme: " + s);
}

inline bool scheme_uses_teacher(TrainScheme s) {
  return s == TrainScheme::no_feat_distill || s == TrainScheme::feat_distill;
}

/// Five-term loss for one image, with optional gradient accumulation. When a
/// teacher is given, the focal loss covers only the student's new-class
/// columns plus the classes present in this image's ground truth (exemplar
/// images thus supervise their old classes directly); without a teacher it
/// covers every column.
inline LossBreakdown image_loss(const DetectorModel& student, const FrozenTeacher* teacher,
                                const TrainSample& sample, const DistillConfig& cfg,
                                ModelGrads* grads, double grad_scale = 1.0) {
  const int K = student.num_classes();
  Activations acts;
  const Tensor input = to_tensor(sample.image);
  const RawPrediction sp = student.forward(input, grads ? &acts : nullptr);
  const std::vector<Box> anchors =
      generate_anchors(student.anchor_cfg, sample.image.width, sample.image.height);

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(K), 1);
  if (teacher) {
    const int m = teacher->old_class_count();
    if (K <= m) throw std::invalid_argument("image_loss: student must extend the teacher");
    std::fill(mask.begin(), mask.begin() + m, static_cast<std::uint8_t>(0));
    for (const ScoredBox& g : sample.gt)
      if (g.class_id < m) mask[static_cast<std::size_t>(g.class_id)] = 1;
  }
  const ImageTargets tg = build_targets(anchors, sample.gt, K, cfg.pos_iou, cfg.neg_iou, mask);

  PredGrads dpred;
  LossBreakdown b;
  b.focal = focal_loss_dense(sp, tg, cfg.focal, grads ? &dpred : nullptr, grad_scale);
  b.regr = regression_loss_dense(sp, tg, grads ? &dpred : nullptr, grad_scale * cfg.lambda1);
  if (teacher) {
    const RawPrediction tp = teacher->model().forward(input);
    const std::vector<TeacherBoxSel> sel = select_teacher_boxes(tp, cfg.k_box);
    b.dist_clas = class_distill_dense(tp, sp, cfg.distill_all_anchors ? nullptr : &sel,
                                      grads ? &dpred : nullptr, grad_scale * cfg.lambda2);
    b.dist_bbox =
        box_distill_dense(sel, sp, grads ? &dpred : nullptr, grad_scale * cfg.lambda3);
    b.dist_feat = feature_distill_dense(tp, sp, cfg.feature_levels,
                                        grads ? &dpred : nullptr, grad_scale * cfg.lambda4);
  }
  if (grads) student.backward(acts, sp, dpred, *grads);
  return b;
}

/// Batch mean of the five loss terms; the scalar is breakdown.total(cfg).
/// Setting lambda2..4 to zero reduces it to the plain fine-tuning loss.
inline LossBreakdown total_loss(const std::vector<TrainSample>& batch,
                                const DetectorModel& student, const FrozenTeacher* teacher,
                                const DistillConfig& cfg, ModelGrads* grads = nullptr) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (teacher && student.num_classes() <= teacher->old_class_count())
    throw std::invalid_argument("total_loss: student class count must exceed the teacher's");
  LossBreakdown sum;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const TrainSample& s : batch) sum += image_loss(student, teacher, s, cfg, grads, scale);
  return sum.scaled(scale);
}

/// Seed-deterministic SGD loop (Adam). One training task owns the student;
/// the teacher, when present, is only read.
inline DetectorModel run_training(DetectorModel student, const FrozenTeacher* teacher,
                                  std::vector<TrainSample> data, const DistillConfig& cfg,
                                  std::uint64_t seed, TrainLog* log) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("run_training: empty dataset");
  const auto t_start = std::chrono::steady_clock::now();
  Adam opt(cfg.learning_rate);
  if (log) {
    log->k_box = cfg.k_box;
    log->seed = seed;
  }
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    int step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size), ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - begin);
      ModelGrads grads = student.make_grads();
      LossBreakdown sum;
      for (std::size_t i = begin; i < end; ++i)
        sum += image_loss(student, teacher, data[static_cast<std::size_t>(order[i])], cfg, &grads, scale);
      opt.step(student.parameters(), grads.tensors());
      if (log) {
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0).count();
        log->records.push_back({epoch, step, sum.scaled(scale), cfg.learning_rate, ms});
      }
    }
  }
  if (log)
    log->total_wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return student;
}

/// Trains a fresh base model with the plain detection loss.
inline DetectorModel train_base(const DetectorArch& arch, const AnchorConfig& anchors,
                                const std::vector<std::string>& labels,
                                std::vector<TrainSample> data, const DistillConfig& cfg,
                                std::uint64_t seed, TrainLog* log = nullptr) {
  DetectorModel model = DetectorModel::create(arch, anchors, labels, derive_seed(seed, 3));
  return run_training(std::move(model), nullptr, std::move(data), cfg, seed, log);
}

struct IncrementResult {
  DetectorModel model;
  TrainLog log;
};

/// One incremental learning task: freeze the old model as the teacher,
/// expand the class head for the manifest's classes, and optimize the
/// scheme's loss on the new data (plus exemplars when provided).
inline IncrementResult train_incremental(const DetectorModel& old_model,
                                         const DatasetManifest& new_data,
                                         const std::string& data_root,
                                         const ExemplarSet* exemplars,
                                         const DistillConfig& cfg, TrainScheme scheme,
                                         std::uint64_t seed) {
  cfg.validate();
  if (new_data.images.empty())
    throw std::invalid_argument("train_incremental: empty dataset");
  const std::vector<std::string>& new_labels = new_data.classes;
  if (new_labels.empty()) throw std::invalid_argument("train_incremental: manifest names no classes");

  DetectorModel student = old_model.expand_class_head(
      static_cast<int>(new_labels.size()), new_labels, derive_seed(seed, 7));
  const std::vector<std::string>& vocab = student.labels;

  DatasetManifest merged = new_data;
  if (exemplars && !exemplars->classes.empty())
    merged = merge_with_new_data(*exemplars, new_data, seed);
  std::vector<TrainSample> samples = load_samples(merged, data_root, vocab);

  IncrementResult out{student, {}};
  if (scheme_uses_teacher(scheme)) {
    FrozenTeacher teacher(old_model);
    DistillConfig c = cfg;
    if (scheme == TrainScheme::no_feat_distill) c.lambda4 = 0.0;
    out.model = run_training(std::move(student), &teacher, std::move(samples), c, seed, &out.log);
  } else {
    out.model = run_training(std::move(student), nullptr, std::move(samples), cfg, seed, &out.log);
  }
  return out;
}

}  // namespace incdet
