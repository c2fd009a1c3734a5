#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "incdet/detector.hpp"
#include "incdet/geometry.hpp"

namespace incdet {

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

constexpr double kProbClamp = 1e-7;

/// Focal term for one (anchor, class) cell from the post-sigmoid probability.
/// t is 1 for a positive target, 0 for negative. alpha scales uniformly, so
/// gamma=0, alpha=1 is plain binary cross-entropy.
inline double focal_from_prob(double p, int t, double gamma, double alpha) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double pt = t ? p : 1.0 - p;
  return -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
}

/// Same term from the logit, with d(term)/d(logit) in *dz when non-null.
inline double focal_from_logit(double z, int t, double gamma, double alpha, double* dz) {
  const double p = sigmoid(z);
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double pt = t ? pc : 1.0 - pc;
  const double one_m = 1.0 - pt;
  const double loss = -alpha * std::pow(one_m, gamma) * std::log(pt);
  if (dz) {
    // dL/dpt = alpha * [ gamma*(1-pt)^(gamma-1)*log(pt) - (1-pt)^gamma / pt ]
    const double term1 = gamma == 0.0 ? 0.0 : gamma * std::pow(one_m, gamma - 1.0) * std::log(pt);
    const double dl_dpt = alpha * (term1 - std::pow(one_m, gamma) / pt);
    const double dpt_dz = t ? p * (1.0 - p) : -p * (1.0 - p);
    *dz = dl_dpt * dpt_dz;
  }
  return loss;
}

inline double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

inline double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

// ---------------------------------------------------------------------------
// Spec-level operations on plain per-anchor arrays. These share the
// elementwise cores with the dense training path below.

/// probs: per-anchor vector of K class probabilities. anchor_targets: class
/// id for a positive anchor, -1 for negative, -2 for ignore (excluded).
/// Normalized by the positive-anchor count, floored at 1.
inline double focal_loss(const std::vector<std::vector<double>>& probs,
                         const std::vector<int>& anchor_targets, double gamma, double alpha) {
  if (probs.size() != anchor_targets.size())
    throw std::invalid_argument("focal_loss: size mismatch");
  double sum = 0.0;
  int positives = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (anchor_targets[a] == -2) continue;
    if (anchor_targets[a] >= 0) ++positives;
    for (std::size_t k = 0; k < probs[a].size(); ++k) {
      const int t = anchor_targets[a] == static_cast<int>(k) ? 1 : 0;
      sum += focal_from_prob(probs[a][k], t, gamma, alpha);
    }
  }
  return sum / std::max(1, positives);
}

/// Smooth-L1 summed over the 4 offset coordinates, averaged over anchors
/// selected by positive_mask. Zero positives yields 0.
inline double regression_loss(const std::vector<std::array<double, 4>>& pred,
                              const std::vector<std::array<double, 4>>& target,
                              const std::vector<bool>& positive_mask) {
  if (pred.size() != target.size() || pred.size() != positive_mask.size())
    throw std::invalid_argument("regression_loss: size mismatch");
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!positive_mask[i]) continue;
    ++n;
    for (int j = 0; j < 4; ++j) sum += smooth_l1(pred[i][j] - target[i][j]);
  }
  return n == 0 ? 0.0 : sum / n;
}

// ---------------------------------------------------------------------------
// Dense training path.

/// Per-image training targets against the global anchor list.
struct ImageTargets {
  std::vector<AnchorAssignment> assignment;
  std::vector<std::array<double, 4>> box_targets;  // valid where positive
  std::vector<int> anchor_class;                   // gt class per positive anchor, else -1
  std::vector<std::uint8_t> column_mask;           // K flags: classes covered by focal
  int positive_count = 0;
};

inline ImageTargets build_targets(const std::vector<Box>& anchors,
                                  const std::vector<ScoredBox>& gt, int num_classes,
                                  double pos_thr, double neg_thr,
                                  const std::vector<std::uint8_t>& column_mask) {
  for (const ScoredBox& g : gt) {
    if (g.box.area() <= 0.0)
      throw std::invalid_argument("build_targets: degenerate ground-truth box");
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw std::invalid_argument("build_targets: ground-truth class out of range");
  }
  ImageTargets tg;
  tg.assignment = match_anchors(anchors, gt, pos_thr, neg_thr);
  tg.box_targets.assign(anchors.size(), {0, 0, 0, 0});
  tg.anchor_class.assign(anchors.size(), -1);
  tg.column_mask = column_mask;
  if (static_cast<int>(column_mask.size()) != num_classes)
    throw std::invalid_argument("build_targets: column mask size mismatch");
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (tg.assignment[a].label == AnchorLabel::positive) {
      ++tg.positive_count;
      const ScoredBox& g = gt[static_cast<std::size_t>(tg.assignment[a].gt_index)];
      tg.box_targets[a] = encode_offsets(g.box, anchors[a]);
      tg.anchor_class[a] = g.class_id;
    }
  }
  return tg;
}

inline void ensure_pred_grads(const RawPrediction& pred, PredGrads& g) {
  if (g.d_class_logits.empty())
    for (const Tensor& t : pred.class_logits) g.d_class_logits.push_back(Tensor::zeros_like(t));
  if (g.d_box_offsets.empty())
    for (const Tensor& t : pred.box_offsets) g.d_box_offsets.push_back(Tensor::zeros_like(t));
  if (g.d_features.empty())
    for (const Tensor& t : pred.features) g.d_features.push_back(Tensor::zeros_like(t));
}

/// Focal loss over the dense prediction, restricted to the target's column
/// mask. Gradients (times grad_coeff) are accumulated into `grads`.
inline double focal_loss_dense(const RawPrediction& pred, const ImageTargets& tg,
                               const FocalParams& fp, PredGrads* grads,
                               double grad_coeff = 1.0) {
  const int A = pred.anchors_per_cell;
  const double norm = static_cast<double>(std::max(1, tg.positive_count));
  if (grads) ensure_pred_grads(pred, *grads);
  double sum = 0.0;
  int anchor = 0;
  for (std::size_t l = 0; l < pred.levels.size(); ++l) {
    const LevelShape& ls = pred.levels[l];
    for (int y = 0; y < ls.h; ++y) {
      for (int x = 0; x < ls.w; ++x) {
        for (int slot = 0; slot < A; ++slot, ++anchor) {
          const AnchorAssignment& as = tg.assignment[static_cast<std::size_t>(anchor)];
          if (as.label == AnchorLabel::ignore) continue;
          for (int k = 0; k < pred.num_classes; ++k) {
            if (!tg.column_mask[static_cast<std::size_t>(k)]) continue;
            const int t = tg.anchor_class[static_cast<std::size_t>(anchor)] == k ? 1 : 0;
            const double z = pred.class_logits[l].at(k * A + slot, y, x);
            double dz = 0.0;
            sum += focal_from_logit(z, t, fp.gamma, fp.alpha, grads ? &dz : nullptr);
            if (grads)
              grads->d_class_logits[l].at(k * A + slot, y, x) += grad_coeff * dz / norm;
          }
        }
      }
    }
  }
  return sum / norm;
}

/// Smooth-L1 regression over positive anchors; mean over positives of the
/// 4-coordinate sum. Gradients (times grad_coeff) accumulate into `grads`.
inline double regression_loss_dense(const RawPrediction& pred, const ImageTargets& tg,
                                    PredGrads* grads, double grad_coeff = 1.0) {
  if (tg.positive_count == 0) return 0.0;
  const int A = pred.anchors_per_cell;
  const double norm = static_cast<double>(tg.positive_count);
  if (grads) ensure_pred_grads(pred, *grads);
  double sum = 0.0;
  int anchor = 0;
  for (std::size_t l = 0; l < pred.levels.size(); ++l) {
    const LevelShape& ls = pred.levels[l];
    for (int y = 0; y < ls.h; ++y) {
      for (int x = 0; x < ls.w; ++x) {
        for (int slot = 0; slot < A; ++slot, ++anchor) {
          if (tg.assignment[static_cast<std::size_t>(anchor)].label != AnchorLabel::positive)
            continue;
          for (int j = 0; j < 4; ++j) {
            const double r = pred.box_offsets[l].at(slot * 4 + j, y, x) -
                             tg.box_targets[static_cast<std::size_t>(anchor)][static_cast<std::size_t>(j)];
            sum += smooth_l1(r);
            if (grads)
              grads->d_box_offsets[l].at(slot * 4 + j, y, x) +=
                  grad_coeff * smooth_l1_grad(r) / norm;
          }
        }
      }
    }
  }
  return sum / norm;
}

}  // namespace incdet
