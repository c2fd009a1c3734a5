#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace incdet {

/// Axis-aligned box in image pixel coordinates, origin at the top-left corner.
/// Canonical storage is corner form; center-size form appears only at anchor
/// offset encode/decode.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }

  bool operator==(const Box& o) const {
    return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
  }

  static Box from_center_size(double cx, double cy, double w, double h) {
    return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
};

/// A decoded detection: box plus class index into a label vocabulary and a
/// confidence in [0,1].
struct ScoredBox {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union. Returns 0 for a zero-area union (degenerate boxes).
inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: invalid box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Intersection over prediction area. Asymmetric: 1 when prd lies inside gth.
inline double iop(const Box& gth, const Box& prd) {
  if (!gth.valid() || !prd.valid()) throw std::invalid_argument("iop: invalid box");
  const double denom = prd.area();
  if (denom <= 0.0) throw std::invalid_argument("iop: prediction box has zero area");
  return intersection_area(gth, prd) / denom;
}

/// Intersection area relative to the smaller of the two boxes. This is the
/// overlap measure used when resolving duplicate self-labeled boxes.
inline double overlap_over_smaller(const Box& a, const Box& b) {
  const double smaller = std::min(a.area(), b.area());
  if (smaller <= 0.0) return 0.0;
  return intersection_area(a, b) / smaller;
}

/// Greedy class-wise non-maximum suppression. Boxes of different classes never
/// suppress each other. Output is sorted by descending score; ties keep input
/// order.
inline std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw std::invalid_argument("nms: threshold outside [0,1]");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return boxes[a].score > boxes[b].score; });
  std::vector<ScoredBox> kept;
  for (int idx : order) {
    const ScoredBox& cand = boxes[idx];
    bool suppressed = false;
    for (const ScoredBox& k : kept) {
      if (k.class_id == cand.class_id && iou(k.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

enum class AnchorLabel { positive, negative, ignore };

struct AnchorAssignment {
  AnchorLabel label = AnchorLabel::negative;
  int gt_index = -1;   // set when label == positive
  double max_iou = 0.0;
};

/// Training-target assignment. An anchor is positive iff its max IoU against
/// the ground truth reaches pos_thr (assigned to the argmax, ties to the
/// lowest gt index), negative below neg_thr, ignored in between. Each
/// decision depends only on that anchor and the gt set.
inline std::vector<AnchorAssignment> match_anchors(const std::vector<Box>& anchors,
                                                   const std::vector<ScoredBox>& gt,
                                                   double pos_thr, double neg_thr) {
  if (pos_thr < neg_thr) throw std::invalid_argument("match_anchors: pos_thr < neg_thr");
  std::vector<AnchorAssignment> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    AnchorAssignment a;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[i], gt[g].box);
      if (v > a.max_iou) {
        a.max_iou = v;
        a.gt_index = static_cast<int>(g);
      }
    }
    if (gt.empty() || a.max_iou < neg_thr) {
      a.label = AnchorLabel::negative;
      a.gt_index = -1;
    } else if (a.max_iou >= pos_thr) {
      a.label = AnchorLabel::positive;
    } else {
      a.label = AnchorLabel::ignore;
      a.gt_index = -1;
    }
    out[i] = a;
  }
  return out;
}

}  // namespace incdet
