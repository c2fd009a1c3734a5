#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/dataset.hpp"
#include "incdet/geometry.hpp"
#include "incdet/providers.hpp"

namespace incdet {

struct BuilderConfig {
  double thr_b = 0.01;  // min box area as a fraction of image area (exclusive)
  double thr_d = 1.0;   // combined cosine-similarity threshold
  double thr_o = 0.5;   // overlap as a fraction of the smaller box's area
  int k = 5;            // classifier top-k
  int image_count = 100;
  std::string provider_id;

  BuilderConfigSnapshot snapshot() const { return {thr_b, thr_d, thr_o, k, provider_id}; }
};

/// The voted "true label" plus semantically verified aliases from the
/// classifier vocabulary.
struct CredibleLabelSet {
  std::string true_label;
  std::vector<std::string> aliases;  // includes true_label
  std::string query;

  bool contains(const std::string& label) const {
    return std::find(aliases.begin(), aliases.end(), label) != aliases.end();
  }
};

/// One proposal with its classifier output.
struct BoxPrediction {
  Box box;
  std::vector<LabelScore> topk;  // confidence descending
};

/// Accumulated classification confidence score: the sum of top-k confidences
/// whose labels are credible. 0 when none are.
inline double accs(const BoxPrediction& prediction, const CredibleLabelSet& credible) {
  double s = 0.0;
  for (const LabelScore& l : prediction.topk)
    if (credible.contains(l.name)) s += l.score;
  return s;
}

inline bool box_passes_size(const Box& b, int image_w, int image_h, double thr_b) {
  return b.area() > thr_b * static_cast<double>(image_w) * image_h;
}

/// The voting half of the construction algorithm: count top-k labels over
/// every sufficiently large proposal, crown the most frequent label (ties
/// break lexicographically), then admit labels semantically close to both
/// the winner and the query. Label order in `aliases` is by vote count,
/// then lexicographic.
inline CredibleLabelSet vote_credible_labels(const std::vector<CandidateImage>& images,
                                             ProposalProvider& proposals,
                                             ClassifierProvider& classifier,
                                             const WordEmbeddings& embeddings,
                                             const std::string& query, double thr_b,
                                             double thr_d, int k) {
  if (images.empty()) throw std::invalid_argument("vote_credible_labels: no images");
  std::map<std::string, int> counter;
  int surviving_boxes = 0;
  for (const CandidateImage& im : images) {
    for (const ScoredBox& p : proposals.propose(im)) {
      if (!box_passes_size(p.box, im.image.width, im.image.height, thr_b)) continue;
      const std::vector<LabelScore> topk = classifier.classify(im, p.box, k);
      if (!topk.empty()) ++surviving_boxes;
      for (const LabelScore& l : topk) counter[l.name] += 1;
    }
  }
  if (surviving_boxes == 0 || counter.empty())
    throw std::runtime_error("vote_credible_labels: no classified boxes survived the size filter");

  std::vector<std::pair<std::string, int>> sorted(counter.begin(), counter.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  CredibleLabelSet out;
  out.query = query;
  out.true_label = sorted.front().first;
  out.aliases.push_back(out.true_label);
  for (const auto& [label, count] : sorted) {
    if (label == out.true_label) continue;
    const auto s1 = embeddings.similarity(label, out.true_label);
    const auto s2 = embeddings.similarity(label, query);
    if (s1 && s2 && *s1 + *s2 > thr_d) out.aliases.push_back(label);
  }
  return out;
}

/// Purification: keep boxes that are big enough and carry at least one
/// credible top-k label; resolve overlapping pairs (intersection above thr_o
/// of the smaller box) by dropping the lower-ACCS box, processing in
/// descending-ACCS order. Images keep their entry only while at least one
/// box survives. Retained boxes are labeled with the query class.
inline DatasetManifest purify(const std::vector<CandidateImage>& images,
                              const std::vector<std::vector<ScoredBox>>& proposals,
                              ClassifierProvider& classifier, const CredibleLabelSet& credible,
                              double thr_b, double thr_o, int k) {
  if (credible.aliases.empty()) throw std::invalid_argument("purify: empty credible set");
  if (images.size() != proposals.size())
    throw std::invalid_argument("purify: proposals/images size mismatch");
  DatasetManifest out;
  out.classes = {credible.query};
  for (std::size_t i = 0; i < images.size(); ++i) {
    const CandidateImage& im = images[i];
    struct Scored {
      BoxPrediction pred;
      double score;
      std::size_t index;
    };
    std::vector<Scored> credible_boxes;
    for (const ScoredBox& p : proposals[i]) {
      if (!box_passes_size(p.box, im.image.width, im.image.height, thr_b)) continue;
      BoxPrediction bp{p.box, classifier.classify(im, p.box, k)};
      bool any_credible = false;
      for (const LabelScore& l : bp.topk)
        if (credible.contains(l.name)) any_credible = true;
      if (!any_credible) continue;
      const double score = accs(bp, credible);
      credible_boxes.push_back({std::move(bp), score, credible_boxes.size()});
    }
    // descending ACCS; ties keep the earlier-indexed box first
    std::sort(credible_boxes.begin(), credible_boxes.end(), [](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.index < b.index;
    });
    std::vector<const Scored*> kept;
    for (const Scored& c : credible_boxes) {
      bool overlapped = false;
      for (const Scored* kb : kept) {
        if (overlap_over_smaller(kb->pred.box, c.pred.box) > thr_o) {
          overlapped = true;
          break;
        }
      }
      if (!overlapped) kept.push_back(&c);
    }
    if (kept.empty()) continue;
    // manifest order: original proposal order
    std::sort(kept.begin(), kept.end(),
              [](const Scored* a, const Scored* b) { return a->index < b->index; });
    ManifestImage mi;
    mi.path = im.path;
    mi.width = im.image.width;
    mi.height = im.image.height;
    for (const Scored* s : kept) {
      BoxAnnotation ann;
      ann.box = s->pred.box;
      ann.class_name = credible.query;
      ann.self_labeled = true;
      ann.accs = s->score;
      for (const LabelScore& l : s->pred.topk)
        if (credible.contains(l.name)) ann.labels.push_back(l);
      mi.boxes.push_back(std::move(ann));
    }
    out.images.push_back(std::move(mi));
  }
  return out;
}

struct BuildReport {
  std::string query;
  int images_fetched = 0;
  int proposals_total = 0;
  int boxes_above_size = 0;
  int boxes_retained = 0;
  int images_retained = 0;
  CredibleLabelSet credible;
  double fetch_s = 0.0;
  double vote_s = 0.0;
  double purify_s = 0.0;
  double total_s = 0.0;

  nlohmann::json to_json() const {
    return {{"query", query},
            {"images_fetched", images_fetched},
            {"proposals_total", proposals_total},
            {"boxes_above_size", boxes_above_size},
            {"boxes_retained", boxes_retained},
            {"images_retained", images_retained},
            {"credible_labels", credible.aliases},
            {"true_label", credible.true_label},
            {"stage_seconds",
             {{"fetch", fetch_s}, {"vote", vote_s}, {"purify", purify_s}, {"total", total_s}}}};
  }

  static BuildReport from_json(const nlohmann::json& j) {
    BuildReport r;
    r.query = j.value("query", std::string());
    r.images_fetched = j.value("images_fetched", 0);
    r.proposals_total = j.value("proposals_total", 0);
    r.boxes_above_size = j.value("boxes_above_size", 0);
    r.boxes_retained = j.value("boxes_retained", 0);
    r.images_retained = j.value("images_retained", 0);
    r.credible.query = r.query;
    r.credible.true_label = j.value("true_label", std::string());
    if (j.contains("credible_labels"))
      r.credible.aliases = j["credible_labels"].get<std::vector<std::string>>();
    if (j.contains("stage_seconds")) {
      const auto& s = j["stage_seconds"];
      r.fetch_s = s.value("fetch", 0.0);
      r.vote_s = s.value("vote", 0.0);
      r.purify_s = s.value("purify", 0.0);
      r.total_s = s.value("total", 0.0);
    }
    return r;
  }
};

/// End-to-end dataset construction for one query: fetch, propose, vote,
/// purify. Proposals are computed once per image and reused by both phases.
inline DatasetManifest build_dataset(const std::string& query, ImageSource& source,
                                     ProposalProvider& proposals, ClassifierProvider& classifier,
                                     const WordEmbeddings& embeddings, const BuilderConfig& cfg,
                                     BuildReport* report = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const std::vector<CandidateImage> images = source.fetch(query, cfg.image_count);
  const auto t1 = clock::now();

  std::vector<std::vector<ScoredBox>> props;
  props.reserve(images.size());
  int proposals_total = 0, above_size = 0;
  for (const CandidateImage& im : images) {
    props.push_back(proposals.propose(im));
    proposals_total += static_cast<int>(props.back().size());
    for (const ScoredBox& p : props.back())
      if (box_passes_size(p.box, im.image.width, im.image.height, cfg.thr_b)) ++above_size;
  }

  // replay the cached proposals through the voting pass
  class Replay : public ProposalProvider {
   public:
    const std::vector<CandidateImage>& images;
    const std::vector<std::vector<ScoredBox>>& props;
    Replay(const std::vector<CandidateImage>& i, const std::vector<std::vector<ScoredBox>>& p)
        : images(i), props(p) {}
    std::vector<ScoredBox> propose(const CandidateImage& im) override {
      for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].path == im.path) return props[i];
      return {};
    }
    std::string id() const override { return "replay"; }
  } replay(images, props);

  const CredibleLabelSet credible = vote_credible_labels(images, replay, classifier, embeddings,
                                                         query, cfg.thr_b, cfg.thr_d, cfg.k);
  const auto t2 = clock::now();
  DatasetManifest manifest =
      purify(images, props, classifier, credible, cfg.thr_b, cfg.thr_o, cfg.k);
  manifest.config = cfg.snapshot();
  const auto t3 = clock::now();

  if (report) {
    report->query = query;
    report->images_fetched = static_cast<int>(images.size());
    report->proposals_total = proposals_total;
    report->boxes_above_size = above_size;
    report->boxes_retained = static_cast<int>(manifest.total_boxes());
    report->images_retained = static_cast<int>(manifest.images.size());
    report->credible = credible;
    report->fetch_s = std::chrono::duration<double>(t1 - t0).count();
    report->vote_s = std::chrono::duration<double>(t2 - t1).count();
    report->purify_s = std::chrono::duration<double>(t3 - t2).count();
    report->total_s = std::chrono::duration<double>(t3 - t0).count();
  }
  return manifest;
}

struct ConstructionScore {
  double retention_rate_pct = 0.0;
  double fp_rate_pct = 0.0;
  bool fp_defined = true;
};

/// Construction quality against ground truth. Retention: the percentage of
/// ground-truth images whose every gt box is matched (IoU >= 0.5) by some
/// manifest box; images the builder dropped count as not retained. FP rate:
/// the percentage of manifest boxes whose best IoP against the image's gt
/// is below 0.5.
inline ConstructionScore score_construction(const DatasetManifest& manifest,
                                            const DatasetManifest& ground_truth) {
  std::map<std::string, const ManifestImage*> built;
  for (const ManifestImage& im : manifest.images) built[im.path] = &im;

  int retained = 0;
  for (const ManifestImage& gt_im : ground_truth.images) {
    const auto it = built.find(gt_im.path);
    if (it == built.end()) continue;
    bool all_matched = true;
    for (const BoxAnnotation& g : gt_im.boxes) {
      bool matched = false;
      for (const BoxAnnotation& p : it->second->boxes)
        if (iou(g.box, p.box) >= 0.5) matched = true;
      if (!matched) all_matched = false;
    }
    if (all_matched) ++retained;
  }

  std::map<std::string, const ManifestImage*> gt_by_path;
  for (const ManifestImage& im : ground_truth.images) gt_by_path[im.path] = &im;
  int boxes = 0, fp = 0;
  for (const ManifestImage& im : manifest.images) {
    const auto it = gt_by_path.find(im.path);
    for (const BoxAnnotation& p : im.boxes) {
      ++boxes;
      double best_iop = 0.0;
      if (it != gt_by_path.end())
        for (const BoxAnnotation& g : it->second->boxes)
          best_iop = std::max(best_iop, iop(g.box, p.box));
      if (best_iop < 0.5) ++fp;
    }
  }

  ConstructionScore s;
  const int denom = static_cast<int>(ground_truth.images.size());
  s.retention_rate_pct = denom == 0 ? 0.0 : 100.0 * retained / denom;
  if (boxes == 0) {
    s.fp_rate_pct = 0.0;
    s.fp_defined = false;
  } else {
    s.fp_rate_pct = 100.0 * fp / boxes;
  }
  return s;
}

}  // namespace incdet
