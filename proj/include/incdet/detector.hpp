#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/geometry.hpp"
#include "incdet/image.hpp"
#include "incdet/nn.hpp"
#include "incdet/rng.hpp"
#include "incdet/tensor.hpp"

namespace incdet {

/// Anchor grid layout: per pyramid level (stride), one anchor per (cell,
/// scale, ratio) combination. The grid per level is ceil(dim/stride).
struct AnchorConfig {
  std::vector<int> strides = {8, 16};
  std::vector<double> scales = {2.0, 3.0};
  std::vector<double> ratios = {1.0};  // width/height

  int anchors_per_cell() const {
    return static_cast<int>(scales.size() * ratios.size());
  }

  void validate() const {
    if (strides.empty() || scales.empty() || ratios.empty())
      throw std::invalid_argument("AnchorConfig: empty field");
    int prev = 0;
    for (int s : strides) {
      if (s <= prev) throw std::invalid_argument("AnchorConfig: strides must be positive and strictly increasing");
      prev = s;
    }
    for (double v : scales)
      if (v <= 0.0) throw std::invalid_argument("AnchorConfig: non-positive scale");
    for (double v : ratios)
      if (v <= 0.0) throw std::invalid_argument("AnchorConfig: non-positive ratio");
  }

  bool operator==(const AnchorConfig& o) const {
    return strides == o.strides && scales == o.scales && ratios == o.ratios;
  }
};

inline int grid_cells(int image_dim, int stride) { return (image_dim + stride - 1) / stride; }

/// Deterministic anchor enumeration: level-major, then row (y), column (x),
/// then slot (scale-major, ratio-minor). Anchor centers sit at cell centers;
/// at ratio 1 the anchor is a square of side scale*stride.
inline std::vector<Box> generate_anchors(const AnchorConfig& cfg, int image_w, int image_h) {
  cfg.validate();
  std::vector<Box> anchors;
  for (int stride : cfg.strides) {
    const int gh = grid_cells(image_h, stride);
    const int gw = grid_cells(image_w, stride);
    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) {
        const double cx = (x + 0.5) * stride;
        const double cy = (y + 0.5) * stride;
        for (double scale : cfg.scales) {
          for (double ratio : cfg.ratios) {
            const double side = scale * stride;
            const double w = side * std::sqrt(ratio);
            const double h = side / std::sqrt(ratio);
            anchors.push_back(Box::from_center_size(cx, cy, w, h));
          }
        }
      }
    }
  }
  return anchors;
}

/// Box-to-anchor offset encoding: (tx,ty) are center deltas in anchor units,
/// (tw,th) log size ratios. decode(encode(gt,a),a) == gt up to roundoff.
inline std::array<double, 4> encode_offsets(const Box& gt, const Box& anchor) {
  const double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) throw std::invalid_argument("encode_offsets: degenerate anchor");
  if (gt.width() <= 0.0 || gt.height() <= 0.0)
    throw std::invalid_argument("encode_offsets: non-positive ground-truth dimensions");
  return {(gt.center_x() - anchor.center_x()) / aw, (gt.center_y() - anchor.center_y()) / ah,
          std::log(gt.width() / aw), std::log(gt.height() / ah)};
}

inline Box decode_offsets(const std::array<double, 4>& t, const Box& anchor) {
  const double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) throw std::invalid_argument("decode_offsets: degenerate anchor");
  return Box::from_center_size(t[0] * aw + anchor.center_x(), t[1] * ah + anchor.center_y(),
                               aw * std::exp(t[2]), ah * std::exp(t[3]));
}

/// Backbone/head widths. The backbone is a stem conv plus a chain of
/// stride-2 stages; stage i produces feature stride 2^(i+2).
struct DetectorArch {
  int stem_channels = 8;
  std::vector<int> stage_channels = {16, 24, 24};
  int feature_channels = 24;
  int head_channels = 24;

  bool operator==(const DetectorArch& o) const {
    return stem_channels == o.stem_channels && stage_channels == o.stage_channels &&
           feature_channels == o.feature_channels && head_channels == o.head_channels;
  }
};

inline int stage_index_for_stride(int stride) {
  int s = stride, idx = -2;
  while (s > 1) {
    if (s % 2 != 0) throw std::invalid_argument("stride must be a power of two >= 4");
    s /= 2;
    ++idx;
  }
  if (idx < 0) throw std::invalid_argument("stride must be >= 4");
  return idx;
}

struct LevelShape {
  int h = 0;
  int w = 0;
};

/// Dense per-level network outputs. Class logits use channel k*A + a, box
/// offsets channel a*4 + j; the flat anchor index follows generate_anchors.
struct RawPrediction {
  std::vector<Tensor> features;      // per level, (F,H,W), linear lateral output
  std::vector<Tensor> class_logits;  // per level, (A*K,H,W)
  std::vector<Tensor> box_offsets;   // per level, (A*4,H,W)
  std::vector<LevelShape> levels;
  int num_classes = 0;
  int anchors_per_cell = 0;

  int anchor_count() const {
    int n = 0;
    for (const auto& l : levels) n += l.h * l.w * anchors_per_cell;
    return n;
  }

  struct AnchorLoc {
    int level, y, x, slot;
  };

  AnchorLoc locate(int anchor) const {
    int rem = anchor;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const int n = levels[l].h * levels[l].w * anchors_per_cell;
      if (rem < n) {
        const int cell = rem / anchors_per_cell;
        return {static_cast<int>(l), cell / levels[l].w, cell % levels[l].w,
                rem % anchors_per_cell};
      }
      rem -= n;
    }
    throw std::out_of_range("RawPrediction::locate");
  }

  double class_logit(int anchor, int k) const {
    const AnchorLoc a = locate(anchor);
    return class_logits[static_cast<std::size_t>(a.level)].at(k * anchors_per_cell + a.slot, a.y, a.x);
  }

  std::array<double, 4> offsets(int anchor) const {
    const AnchorLoc a = locate(anchor);
    const Tensor& t = box_offsets[static_cast<std::size_t>(a.level)];
    return {t.at(a.slot * 4 + 0, a.y, a.x), t.at(a.slot * 4 + 1, a.y, a.x),
            t.at(a.slot * 4 + 2, a.y, a.x), t.at(a.slot * 4 + 3, a.y, a.x)};
  }
};

/// Intermediate activations kept for the backward pass.
struct Activations {
  Tensor input;
  Tensor stem_out;                 // post-relu
  std::vector<Tensor> stage_out;   // post-relu, per stage
  std::vector<Tensor> cls_hidden;  // post-relu, per level
  std::vector<Tensor> box_hidden;  // post-relu, per level
};

/// Gradients w.r.t. the dense outputs; empty tensors mean "no gradient".
struct PredGrads {
  std::vector<Tensor> d_class_logits;
  std::vector<Tensor> d_box_offsets;
  std::vector<Tensor> d_features;
};

class DetectorModel;

/// Parameter gradients, shaped like the model's Conv set.
struct ModelGrads {
  Conv stem;
  std::vector<Conv> stages;
  std::vector<Conv> laterals;
  Conv cls_hidden, cls_out, box_hidden, box_out;

  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out = {&stem.w, &stem.b};
    for (const Conv& c : stages) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    for (const Conv& c : laterals) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    for (const Conv* c : {&cls_hidden, &cls_out, &box_hidden, &box_out}) {
      out.push_back(&c->w);
      out.push_back(&c->b);
    }
    return out;
  }
};

/// A one-stage anchor-based detector: shared backbone, per-level lateral
/// projections, and class/box heads shared across levels. All state is a
/// value; copies are deep and snapshots restore bit-exactly.
class DetectorModel {
 public:
  DetectorArch arch;
  AnchorConfig anchor_cfg;
  std::vector<std::string> labels;

  Conv stem;
  std::vector<Conv> stages;
  std::vector<Conv> laterals;  // one per pyramid level, 1x1
  Conv cls_hidden, cls_out, box_hidden, box_out;

  int num_classes() const { return static_cast<int>(labels.size()); }
  int anchors_per_cell() const { return anchor_cfg.anchors_per_cell(); }

  static constexpr double kNewClassPrior = 0.01;

  static DetectorModel create(const DetectorArch& arch, const AnchorConfig& anchors,
                              const std::vector<std::string>& labels, std::uint64_t seed) {
    anchors.validate();
    if (labels.empty()) throw std::invalid_argument("DetectorModel: needs at least one class");
    DetectorModel m;
    m.arch = arch;
    m.anchor_cfg = anchors;
    m.labels = labels;
    const int A = anchors.anchors_per_cell();
    const int K = static_cast<int>(labels.size());
    Rng rng(seed);
    m.stem = Conv::make(3, arch.stem_channels, 3, 2, 1);
    m.stem.init(rng);
    int in_ch = arch.stem_channels;
    for (int ch : arch.stage_channels) {
      Conv c = Conv::make(in_ch, ch, 3, 2, 1);
      c.init(rng);
      m.stages.push_back(std::move(c));
      in_ch = ch;
    }
    for (int stride : anchors.strides) {
      const int si = stage_index_for_stride(stride);
      if (si >= static_cast<int>(arch.stage_channels.size()))
        throw std::invalid_argument("AnchorConfig stride exceeds backbone depth");
      Conv c = Conv::make(arch.stage_channels[static_cast<std::size_t>(si)],
                          arch.feature_channels, 1, 1, 0);
      c.init(rng);
      m.laterals.push_back(std::move(c));
    }
    m.cls_hidden = Conv::make(arch.feature_channels, arch.head_channels, 3, 1, 1);
    m.cls_hidden.init(rng);
    m.cls_out = Conv::make(arch.head_channels, A * K, 3, 1, 1);
    m.cls_out.init(rng);
    // bias so that initial foreground probability is ~kNewClassPrior
    m.cls_out.b.fill(-std::log((1.0 - kNewClassPrior) / kNewClassPrior));
    m.box_hidden = Conv::make(arch.feature_channels, arch.head_channels, 3, 1, 1);
    m.box_hidden.init(rng);
    m.box_out = Conv::make(arch.head_channels, A * 4, 3, 1, 1);
    m.box_out.init(rng);
    return m;
  }

  RawPrediction forward(const Tensor& image, Activations* acts = nullptr) const {
    RawPrediction pred;
    pred.num_classes = num_classes();
    pred.anchors_per_cell = anchors_per_cell();
    Tensor cur = relu(conv2d_forward(stem, image));
    if (acts) {
      acts->input = image;
      acts->stem_out = cur;
      acts->stage_out.clear();
      acts->cls_hidden.clear();
      acts->box_hidden.clear();
    }
    std::vector<Tensor> stage_out;
    for (const Conv& c : stages) {
      cur = relu(conv2d_forward(c, cur));
      stage_out.push_back(cur);
      if (acts) acts->stage_out.push_back(cur);
    }
    for (std::size_t l = 0; l < anchor_cfg.strides.size(); ++l) {
      const int si = stage_index_for_stride(anchor_cfg.strides[l]);
      const Tensor feat =
          conv2d_forward(laterals[l], stage_out[static_cast<std::size_t>(si)]);
      Tensor ch = relu(conv2d_forward(cls_hidden, feat));
      Tensor bh = relu(conv2d_forward(box_hidden, feat));
      pred.class_logits.push_back(conv2d_forward(cls_out, ch));
      pred.box_offsets.push_back(conv2d_forward(box_out, bh));
      pred.levels.push_back({feat.dim(1), feat.dim(2)});
      pred.features.push_back(feat);
      if (acts) {
        acts->cls_hidden.push_back(std::move(ch));
        acts->box_hidden.push_back(std::move(bh));
      }
    }
    return pred;
  }

  ModelGrads make_grads() const {
    ModelGrads g;
    auto zero = [](const Conv& c) {
      Conv z;
      z.w = Tensor::zeros_like(c.w);
      z.b = Tensor::zeros_like(c.b);
      z.stride = c.stride;
      z.pad = c.pad;
      return z;
    };
    g.stem = zero(stem);
    for (const Conv& c : stages) g.stages.push_back(zero(c));
    for (const Conv& c : laterals) g.laterals.push_back(zero(c));
    g.cls_hidden = zero(cls_hidden);
    g.cls_out = zero(cls_out);
    g.box_hidden = zero(box_hidden);
    g.box_out = zero(box_out);
    return g;
  }

  /// Accumulates parameter gradients for one image into `g`. PredGrads
  /// entries may be empty tensors when a loss term does not touch them.
  void backward(const Activations& acts, const RawPrediction& pred, const PredGrads& dpred,
                ModelGrads& g) const {
    const std::size_t n_levels = anchor_cfg.strides.size();
    std::vector<Tensor> d_stage;
    for (const Tensor& t : acts.stage_out) d_stage.push_back(Tensor::zeros_like(t));

    for (std::size_t l = 0; l < n_levels; ++l) {
      Tensor d_feat = Tensor::zeros_like(pred.features[l]);
      if (l < dpred.d_features.size() && dpred.d_features[l].size() > 0)
        d_feat.add_scaled(dpred.d_features[l], 1.0);
      if (l < dpred.d_class_logits.size() && dpred.d_class_logits[l].size() > 0) {
        Tensor dh = Tensor::zeros_like(acts.cls_hidden[l]);
        conv2d_backward(cls_out, acts.cls_hidden[l], dpred.d_class_logits[l], &dh, &g.cls_out);
        relu_backward(acts.cls_hidden[l], dh);
        conv2d_backward(cls_hidden, pred.features[l], dh, &d_feat, &g.cls_hidden);
      }
      if (l < dpred.d_box_offsets.size() && dpred.d_box_offsets[l].size() > 0) {
        Tensor dh = Tensor::zeros_like(acts.box_hidden[l]);
        conv2d_backward(box_out, acts.box_hidden[l], dpred.d_box_offsets[l], &dh, &g.box_out);
        relu_backward(acts.box_hidden[l], dh);
        conv2d_backward(box_hidden, pred.features[l], dh, &d_feat, &g.box_hidden);
      }
      const int si = stage_index_for_stride(anchor_cfg.strides[l]);
      conv2d_backward(laterals[l], acts.stage_out[static_cast<std::size_t>(si)], d_feat,
                      &d_stage[static_cast<std::size_t>(si)], &g.laterals[l]);
    }

    Tensor d_stem = Tensor::zeros_like(acts.stem_out);
    for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s) {
      relu_backward(acts.stage_out[static_cast<std::size_t>(s)],
                    d_stage[static_cast<std::size_t>(s)]);
      const Tensor& input = (s == 0) ? acts.stem_out : acts.stage_out[static_cast<std::size_t>(s - 1)];
      Tensor* dx = (s == 0) ? &d_stem : &d_stage[static_cast<std::size_t>(s - 1)];
      conv2d_backward(stages[static_cast<std::size_t>(s)], input,
                      d_stage[static_cast<std::size_t>(s)], dx, &g.stages[static_cast<std::size_t>(s)]);
    }
    relu_backward(acts.stem_out, d_stem);
    conv2d_backward(stem, acts.input, d_stem, nullptr, &g.stem);
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out = {&stem.w, &stem.b};
    for (Conv& c : stages) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    for (Conv& c : laterals) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    for (Conv* c : {&cls_hidden, &cls_out, &box_hidden, &box_out}) {
      out.push_back(&c->w);
      out.push_back(&c->b);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("stem.w", &stem.w);
    out.emplace_back("stem.b", &stem.b);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      out.emplace_back("stage" + std::to_string(i) + ".w", &stages[i].w);
      out.emplace_back("stage" + std::to_string(i) + ".b", &stages[i].b);
    }
    for (std::size_t i = 0; i < laterals.size(); ++i) {
      out.emplace_back("lateral" + std::to_string(i) + ".w", &laterals[i].w);
      out.emplace_back("lateral" + std::to_string(i) + ".b", &laterals[i].b);
    }
    out.emplace_back("cls_hidden.w", &cls_hidden.w);
    out.emplace_back("cls_hidden.b", &cls_hidden.b);
    out.emplace_back("cls_out.w", &cls_out.w);
    out.emplace_back("cls_out.b", &cls_out.b);
    out.emplace_back("box_hidden.w", &box_hidden.w);
    out.emplace_back("box_hidden.b", &box_hidden.b);
    out.emplace_back("box_out.w", &box_out.w);
    out.emplace_back("box_out.b", &box_out.b);
    return out;
  }

  /// Appends n new classes. Everything outside the appended class-output
  /// slice is copied bit-exactly, so old-class logits are unchanged on any
  /// input. New output channels get random weights and a bias putting the
  /// initial foreground probability near kNewClassPrior.
  DetectorModel expand_class_head(int n, const std::vector<std::string>& new_labels,
                                  std::uint64_t seed) const {
    if (n < 1) throw std::invalid_argument("expand_class_head: n must be >= 1");
    if (static_cast<int>(new_labels.size()) != n)
      throw std::invalid_argument("expand_class_head: label count mismatch");
    for (const std::string& l : new_labels)
      for (const std::string& old : labels)
        if (l == old) throw std::invalid_argument("expand_class_head: class name collision: " + l);
    DetectorModel m = *this;
    for (const std::string& l : new_labels) m.labels.push_back(l);
    const int A = anchors_per_cell();
    const int old_rows = cls_out.out_channels();
    Conv grown = Conv::make(cls_out.in_channels(), old_rows + n * A, 3, 1, 1);
    Rng rng(seed);
    grown.init(rng);
    const double bias = -std::log((1.0 - kNewClassPrior) / kNewClassPrior);
    for (std::size_t i = static_cast<std::size_t>(old_rows); i < grown.b.size(); ++i)
      grown.b[i] = bias;
    // copy the old-class slice verbatim
    std::memcpy(grown.w.data(), cls_out.w.data(), sizeof(double) * cls_out.w.size());
    std::memcpy(grown.b.data(), cls_out.b.data(), sizeof(double) * static_cast<std::size_t>(old_rows));
    m.cls_out = std::move(grown);
    return m;
  }

  // --- snapshot container -------------------------------------------------
  // Layout: magic "IDETSNP1", u64 little-endian header length, UTF-8 JSON
  // header (arch, anchors, labels, named array directory), raw float64 data.

  std::vector<std::uint8_t> serialize() const {
    nlohmann::json header;
    header["format"] = "incdet-snapshot";
    header["version"] = 1;
    header["arch"] = {{"stem_channels", arch.stem_channels},
                      {"stage_channels", arch.stage_channels},
                      {"feature_channels", arch.feature_channels},
                      {"head_channels", arch.head_channels}};
    header["anchors"] = {{"strides", anchor_cfg.strides},
                         {"scales", anchor_cfg.scales},
                         {"ratios", anchor_cfg.ratios}};
    header["labels"] = labels;
    nlohmann::json arrays = nlohmann::json::array();
    std::size_t offset = 0;
    auto self = const_cast<DetectorModel*>(this);
    for (auto& [name, t] : self->named_parameters()) {
      arrays.push_back({{"name", name},
                        {"shape", t->shape()},
                        {"dtype", "f64"},
                        {"offset", offset},
                        {"nbytes", t->size() * sizeof(double)}});
      offset += t->size() * sizeof(double);
    }
    header["arrays"] = arrays;
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    const char magic[8] = {'I', 'D', 'E', 'T', 'S', 'N', 'P', '1'};
    out.insert(out.end(), magic, magic + 8);
    std::uint64_t hlen = hs.size();
    const auto* hp = reinterpret_cast<const std::uint8_t*>(&hlen);
    out.insert(out.end(), hp, hp + 8);
    out.insert(out.end(), hs.begin(), hs.end());
    for (auto& [name, t] : self->named_parameters()) {
      const auto* dp = reinterpret_cast<const std::uint8_t*>(t->data());
      out.insert(out.end(), dp, dp + t->size() * sizeof(double));
    }
    return out;
  }

  static DetectorModel deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "IDETSNP1", 8) != 0)
      throw std::runtime_error("snapshot: bad magic");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    if (bytes.size() < 16 + hlen) throw std::runtime_error("snapshot: truncated header");
    const nlohmann::json header =
        nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
    DetectorArch arch;
    arch.stem_channels = header["arch"]["stem_channels"];
    arch.stage_channels = header["arch"]["stage_channels"].get<std::vector<int>>();
    arch.feature_channels = header["arch"]["feature_channels"];
    arch.head_channels = header["arch"]["head_channels"];
    AnchorConfig acfg;
    acfg.strides = header["anchors"]["strides"].get<std::vector<int>>();
    acfg.scales = header["anchors"]["scales"].get<std::vector<double>>();
    acfg.ratios = header["anchors"]["ratios"].get<std::vector<double>>();
    const auto labels = header["labels"].get<std::vector<std::string>>();

    DetectorModel m = DetectorModel::create(arch, acfg, labels, /*seed=*/0);
    const std::size_t data_start = 16 + hlen;
    auto named = m.named_parameters();
    if (header["arrays"].size() != named.size())
      throw std::runtime_error("snapshot: array directory mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& entry = header["arrays"][i];
      if (entry["name"] != named[i].first) throw std::runtime_error("snapshot: array name mismatch");
      if (entry["shape"].get<std::vector<int>>() != named[i].second->shape())
        throw std::runtime_error("snapshot: array shape mismatch");
      const std::size_t off = entry["offset"];
      const std::size_t nb = entry["nbytes"];
      if (data_start + off + nb > bytes.size()) throw std::runtime_error("snapshot: truncated data");
      std::memcpy(named[i].second->data(), bytes.data() + data_start + off, nb);
    }
    return m;
  }

  void save(const std::string& path) const {
    const std::vector<std::uint8_t> bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("snapshot: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("snapshot: short write to " + path);
  }

  static DetectorModel load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("snapshot: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }
};

/// Decoded candidates before NMS: every (anchor, class) whose sigmoid score
/// meets score_thr (>= semantics), capped at `pre_nms_cap` by score, decoded
/// against the anchor grid and clipped to the image.
inline std::vector<ScoredBox> detect_candidates(const DetectorModel& model, const Image& image,
                                                double score_thr, int pre_nms_cap = 300) {
  if (model.num_classes() < 1) throw std::invalid_argument("detect: model has no classes");
  const Tensor input = to_tensor(image);
  const RawPrediction pred = model.forward(input);
  const std::vector<Box> anchors = generate_anchors(model.anchor_cfg, image.width, image.height);

  struct Cand {
    double score;
    int anchor;
    int cls;
  };
  std::vector<Cand> cands;
  const int n_anchors = pred.anchor_count();
  for (int a = 0; a < n_anchors; ++a) {
    for (int k = 0; k < pred.num_classes; ++k) {
      const double s = sigmoid(pred.class_logit(a, k));
      if (s >= score_thr) cands.push_back({s, a, k});
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.score > b.score; });
  if (static_cast<int>(cands.size()) > pre_nms_cap) cands.resize(static_cast<std::size_t>(pre_nms_cap));

  std::vector<ScoredBox> decoded;
  for (const Cand& c : cands) {
    Box b = decode_offsets(pred.offsets(c.anchor), anchors[static_cast<std::size_t>(c.anchor)]);
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image.width));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image.width));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image.height));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image.height));
    if (b.width() <= 0.0 || b.height() <= 0.0) continue;
    decoded.push_back({b, c.cls, c.score});
  }
  return decoded;
}

/// Score-threshold + class-wise NMS decoding.
inline std::vector<ScoredBox> detect(const DetectorModel& model, const Image& image,
                                     double score_thr, double nms_thr, int pre_nms_cap = 300) {
  return nms(detect_candidates(model, image, score_thr, pre_nms_cap), nms_thr);
}

}  // namespace incdet
