#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "incdet/detector.hpp"
#include "incdet/losses.hpp"

namespace incdet {

/// Weights and hyperparameters for the five-term incremental loss:
/// focal + lambda1*regression + lambda2*class-distill + lambda3*box-distill
/// + lambda4*feature-distill.
struct DistillConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  int k_box = 64;                    // top-k teacher boxes per image
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::vector<int> feature_levels;   // pyramid level indices; empty = all
  bool distill_all_anchors = true;   // class distillation over all anchors
  FocalParams focal{};
  double pos_iou = 0.5;
  double neg_iou = 0.4;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw std::invalid_argument("DistillConfig: negative lambda");
    if (k_box < 1) throw std::invalid_argument("DistillConfig: k_box must be >= 1");
    if (epochs < 1 || batch_size < 1)
      throw std::invalid_argument("DistillConfig: epochs and batch_size must be >= 1");
  }
};

/// Immutable pre-expansion model. Holds the old class count m; the wrapped
/// parameters never change during a learning task.
class FrozenTeacher {
 public:
  explicit FrozenTeacher(DetectorModel model) : model_(std::move(model)) {}
  const DetectorModel& model() const { return model_; }
  int old_class_count() const { return model_.num_classes(); }

 private:
  DetectorModel model_;
};

struct TeacherBoxSel {
  int anchor = 0;
  std::array<double, 4> offsets{};
  double score = 0.0;
};

/// Top-k teacher boxes by classification confidence (max sigmoid over the
/// teacher's classes). Ties break toward the lower anchor index; the result
/// is identical across calls for a fixed prediction.
inline std::vector<TeacherBoxSel> select_teacher_boxes(const RawPrediction& teacher, int k_box) {
  if (k_box < 1) throw std::invalid_argument("select_teacher_boxes: k_box must be >= 1");
  const int n = teacher.anchor_count();
  std::vector<TeacherBoxSel> all(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    double best = 0.0;
    for (int k = 0; k < teacher.num_classes; ++k)
      best = std::max(best, sigmoid(teacher.class_logit(a, k)));
    all[static_cast<std::size_t>(a)] = {a, teacher.offsets(a), best};
  }
  std::stable_sort(all.begin(), all.end(), [](const TeacherBoxSel& x, const TeacherBoxSel& y) {
    return x.score > y.score;
  });
  if (static_cast<int>(all.size()) > k_box) all.resize(static_cast<std::size_t>(k_box));
  return all;
}

// ---------------------------------------------------------------------------
// Spec-level adapters over plain arrays.

/// Mean over anchors of the per-anchor mean squared difference across the m
/// old classes. Inputs are post-sigmoid probabilities.
inline double class_distill_loss(const std::vector<std::vector<double>>& teacher_probs,
                                 const std::vector<std::vector<double>>& student_probs) {
  if (teacher_probs.size() != student_probs.size())
    throw std::invalid_argument("class_distill_loss: anchor count mismatch");
  if (teacher_probs.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t a = 0; a < teacher_probs.size(); ++a) {
    const std::size_t m = teacher_probs[a].size();
    if (m == 0) throw std::invalid_argument("class_distill_loss: no old classes (m = 0)");
    if (student_probs[a].size() < m)
      throw std::invalid_argument("class_distill_loss: student slice shorter than teacher");
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = teacher_probs[a][i] - student_probs[a][i];
      s += d * d;
    }
    sum += s / static_cast<double>(m);
  }
  return sum / static_cast<double>(teacher_probs.size());
}

/// Smooth-L1 summed over the 4 coordinates, mean over selected anchors.
inline double box_distill_loss(const std::vector<std::array<double, 4>>& teacher,
                               const std::vector<std::array<double, 4>>& student) {
  if (teacher.size() != student.size())
    throw std::invalid_argument("box_distill_loss: selection size mismatch");
  if (teacher.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i)
    for (int j = 0; j < 4; ++j) sum += smooth_l1(teacher[i][j] - student[i][j]);
  return sum / static_cast<double>(teacher.size());
}

/// Sum over levels of the elementwise-mean smooth-L1 between teacher and
/// student feature maps.
inline double feature_distill_loss(const std::vector<Tensor>& teacher,
                                   const std::vector<Tensor>& student,
                                   const std::vector<int>& levels) {
  if (teacher.size() != student.size())
    throw std::invalid_argument("feature_distill_loss: level count mismatch");
  std::vector<int> idx = levels;
  if (idx.empty()) {
    idx.resize(teacher.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  double sum = 0.0;
  for (int l : idx) {
    const Tensor& t = teacher[static_cast<std::size_t>(l)];
    const Tensor& s = student[static_cast<std::size_t>(l)];
    if (!t.same_shape(s)) throw std::invalid_argument("feature_distill_loss: shape mismatch");
    double level_sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) level_sum += smooth_l1(t[i] - s[i]);
    sum += level_sum / static_cast<double>(t.size());
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Dense paths with gradients w.r.t. the student prediction.

/// Class distillation on the dense outputs. Covers all anchors, or only the
/// given selection when `selection` is non-null (config switch).
inline double class_distill_dense(const RawPrediction& teacher, const RawPrediction& student,
                                  const std::vector<TeacherBoxSel>* selection, PredGrads* grads,
                                  double grad_coeff = 1.0) {
  const int m = teacher.num_classes;
  if (m == 0) throw std::invalid_argument("class distillation undefined without old classes");
  if (student.num_classes < m)
    throw std::invalid_argument("class_distill_dense: student narrower than teacher");
  if (grads) ensure_pred_grads(student, *grads);
  const int A = student.anchors_per_cell;

  std::vector<int> anchors;
  if (selection) {
    for (const TeacherBoxSel& s : *selection) anchors.push_back(s.anchor);
  } else {
    anchors.resize(static_cast<std::size_t>(teacher.anchor_count()));
    std::iota(anchors.begin(), anchors.end(), 0);
  }
  if (anchors.empty()) return 0.0;
  const double norm = static_cast<double>(anchors.size());

  double sum = 0.0;
  for (int a : anchors) {
    const RawPrediction::AnchorLoc loc = student.locate(a);
    double s_anchor = 0.0;
    for (int i = 0; i < m; ++i) {
      const double yo = sigmoid(teacher.class_logit(a, i));
      const double z = student.class_logits[static_cast<std::size_t>(loc.level)].at(i * A + loc.slot, loc.y, loc.x);
      const double yh = sigmoid(z);
      const double d = yo - yh;
      s_anchor += d * d;
      if (grads) {
        const double dz = -2.0 * d / static_cast<double>(m) * yh * (1.0 - yh) / norm;
        grads->d_class_logits[static_cast<std::size_t>(loc.level)].at(i * A + loc.slot, loc.y, loc.x) +=
            grad_coeff * dz;
      }
    }
    sum += s_anchor / static_cast<double>(m);
  }
  return sum / norm;
}

/// Box distillation: regress the student's offsets at the teacher-selected
/// anchors toward the teacher's offsets.
inline double box_distill_dense(const std::vector<TeacherBoxSel>& selection,
                                const RawPrediction& student, PredGrads* grads,
                                double grad_coeff = 1.0) {
  if (selection.empty()) return 0.0;
  if (grads) ensure_pred_grads(student, *grads);
  const double norm = static_cast<double>(selection.size());
  double sum = 0.0;
  for (const TeacherBoxSel& sel : selection) {
    const RawPrediction::AnchorLoc loc = student.locate(sel.anchor);
    for (int j = 0; j < 4; ++j) {
      const double s = student.box_offsets[static_cast<std::size_t>(loc.level)].at(loc.slot * 4 + j, loc.y, loc.x);
      const double r = sel.offsets[static_cast<std::size_t>(j)] - s;
      sum += smooth_l1(r);
      if (grads)
        grads->d_box_offsets[static_cast<std::size_t>(loc.level)].at(loc.slot * 4 + j, loc.y, loc.x) +=
            grad_coeff * (-smooth_l1_grad(r)) / norm;
    }
  }
  return sum / norm;
}

/// Feature distillation between shape-identical pyramid outputs.
inline double feature_distill_dense(const RawPrediction& teacher, const RawPrediction& student,
                                    const std::vector<int>& levels, PredGrads* grads,
                                    double grad_coeff = 1.0) {
  if (teacher.features.size() != student.features.size())
    throw std::invalid_argument("feature_distill_dense: level count mismatch");
  if (grads) ensure_pred_grads(student, *grads);
  std::vector<int> idx = levels;
  if (idx.empty()) {
    idx.resize(teacher.features.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  double sum = 0.0;
  for (int l : idx) {
    const Tensor& t = teacher.features[static_cast<std::size_t>(l)];
    const Tensor& s = student.features[static_cast<std::size_t>(l)];
    if (!t.same_shape(s)) throw std::invalid_argument("feature_distill_dense: shape mismatch");
    const double n = static_cast<double>(t.size());
    double level_sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double r = t[i] - s[i];
      level_sum += smooth_l1(r);
      if (grads) grads->d_features[static_cast<std::size_t>(l)][i] += grad_coeff * (-smooth_l1_grad(r)) / n;
    }
    sum += level_sum / n;
  }
  return sum;
}

}  // namespace incdet
