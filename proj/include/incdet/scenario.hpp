#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/eval.hpp"
#include "incdet/exemplar.hpp"
#include "incdet/synthetic.hpp"
#include "incdet/trainer.hpp"

namespace incdet {

/// Published full-scale reference results for this family of training
/// schemes (Pascal VOC with ResNet backbones, and a 10-class kitchen-object
/// set). Desk-scale runs do not reproduce these; they are echoed in scenario
/// reports for context.
namespace reference {
inline nlohmann::json full_scale_results() {
  return {
      {"voc_19_plus_1",
       {{"all_data_map", 74.7},
        {"catastrophic_map", 3.4},
        {"no_feat_distill_map", 60.2},
        {"feat_distill_map", 65.0}}},
      {"voc_10_plus_10",
       {{"all_data_map", 74.7},
        {"catastrophic_map", 33.7},
        {"no_feat_distill_map", 62.0},
        {"feat_distill_map", 67.9}}},
      {"kitchen_8_plus_slow_cooker",
       {{"base_old_map", 80.1}, {"base_after_map", 80.8}, {"new_map", 85.4}, {"avg_map", 81.3}}},
      {"kitchen_8_plus_cocktail_shaker",
       {{"base_old_map", 80.1}, {"base_after_map", 79.2}, {"new_map", 32.2}, {"avg_map", 74.0}}},
      {"construction_quality",
       {{"retention_pct_deep", 64.60},
        {"retention_pct_ebox", 32.95},
        {"fp_pct_deep", 5.37},
        {"fp_pct_ebox", 11.73}}},
      {"system_seconds",
       {{"edge_only", {{"download_images", 16}, {"build_dataset", 44}, {"train_model", 233}, {"total", 293}}},
        {"edge_cloud",
         {{"download_images", 10}, {"build_dataset", 21}, {"train_model", 83}, {"transfer_model", 5}, {"total", 119}}}}},
  };
}
}  // namespace reference

struct ScenarioVariantSpec {
  std::string name;
  TrainScheme scheme = TrainScheme::feat_distill;
  int exemplars_per_class = 0;
  ExemplarStrategy exemplar_strategy = ExemplarStrategy::cluster;
};

struct ScenarioSpec {
  std::string name = "scenario";
  std::string corpus_dir;
  std::vector<std::string> base_classes;
  std::vector<std::vector<std::string>> increments;
  std::vector<ScenarioVariantSpec> variants;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  DetectorArch arch{};
  AnchorConfig anchors{};
  DistillConfig base_cfg{};
  DistillConfig incr_cfg{};
  double eval_score_thr = 0.05;
  double eval_nms_thr = 0.5;

  static ScenarioSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline DistillConfig distill_config_from_json(const nlohmann::json& j, DistillConfig base = {}) {
  DistillConfig c = base;
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda3 = j.value("lambda3", c.lambda3);
  c.lambda4 = j.value("lambda4", c.lambda4);
  c.k_box = j.value("k_box", c.k_box);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("feature_levels")) c.feature_levels = j["feature_levels"].get<std::vector<int>>();
  c.distill_all_anchors = j.value("distill_all_anchors", c.distill_all_anchors);
  c.focal.gamma = j.value("focal_gamma", c.focal.gamma);
  c.focal.alpha = j.value("focal_alpha", c.focal.alpha);
  c.pos_iou = j.value("pos_iou", c.pos_iou);
  c.neg_iou = j.value("neg_iou", c.neg_iou);
  return c;
}

inline nlohmann::json distill_config_to_json(const DistillConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"lambda4", c.lambda4},
          {"k_box", c.k_box},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"feature_levels", c.feature_levels},
          {"distill_all_anchors", c.distill_all_anchors},
          {"focal_gamma", c.focal.gamma},
          {"focal_alpha", c.focal.alpha},
          {"pos_iou", c.pos_iou},
          {"neg_iou", c.neg_iou}};
}

inline ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  s.name = j.value("name", s.name);
  s.corpus_dir = j.at("corpus_dir").get<std::string>();
  s.base_classes = j.at("base_classes").get<std::vector<std::string>>();
  for (const auto& inc : j.at("increments"))
    s.increments.push_back(inc.get<std::vector<std::string>>());
  for (const auto& jv : j.at("variants")) {
    ScenarioVariantSpec v;
    v.name = jv.at("name").get<std::string>();
    v.scheme = train_scheme_from_string(jv.value("scheme", std::string("feat_distill")));
    v.exemplars_per_class = jv.value("exemplars_per_class", 0);
    v.exemplar_strategy =
        exemplar_strategy_from_string(jv.value("exemplar_strategy", std::string("cluster")));
    s.variants.push_back(v);
  }
  if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("arch")) {
    const auto& ja = j["arch"];
    s.arch.stem_channels = ja.value("stem_channels", s.arch.stem_channels);
    if (ja.contains("stage_channels"))
      s.arch.stage_channels = ja["stage_channels"].get<std::vector<int>>();
    s.arch.feature_channels = ja.value("feature_channels", s.arch.feature_channels);
    s.arch.head_channels = ja.value("head_channels", s.arch.head_channels);
  }
  if (j.contains("anchors")) {
    const auto& jn = j["anchors"];
    if (jn.contains("strides")) s.anchors.strides = jn["strides"].get<std::vector<int>>();
    if (jn.contains("scales")) s.anchors.scales = jn["scales"].get<std::vector<double>>();
    if (jn.contains("ratios")) s.anchors.ratios = jn["ratios"].get<std::vector<double>>();
  }
  if (j.contains("base")) s.base_cfg = distill_config_from_json(j["base"]);
  if (j.contains("increment")) s.incr_cfg = distill_config_from_json(j["increment"]);
  s.eval_score_thr = j.value("eval_score_thr", s.eval_score_thr);
  s.eval_nms_thr = j.value("eval_nms_thr", s.eval_nms_thr);
  return s;
}

inline nlohmann::json ScenarioSpec::to_json() const {
  nlohmann::json jv = nlohmann::json::array();
  for (const ScenarioVariantSpec& v : variants)
    jv.push_back({{"name", v.name},
                  {"scheme", to_string(v.scheme)},
                  {"exemplars_per_class", v.exemplars_per_class},
                  {"exemplar_strategy", to_string(v.exemplar_strategy)}});
  return {{"name", name},
          {"corpus_dir", corpus_dir},
          {"base_classes", base_classes},
          {"increments", increments},
          {"variants", jv},
          {"seeds", seeds},
          {"base", distill_config_to_json(base_cfg)},
          {"increment", distill_config_to_json(incr_cfg)},
          {"eval_score_thr", eval_score_thr},
          {"eval_nms_thr", eval_nms_thr}};
}

/// Concatenation of the per-class corpus manifests (split = "train"/"test").
/// Image paths stay relative to <corpus>/manifests.
inline DatasetManifest load_class_manifests(const std::string& corpus_dir,
                                            const std::vector<std::string>& classes,
                                            const std::string& split) {
  DatasetManifest out;
  for (const std::string& cls : classes) {
    const std::string path =
        (std::filesystem::path(corpus_dir) / "manifests" / (cls + "_" + split + ".json")).string();
    DatasetManifest m = load_manifest(path);
    out.classes.insert(out.classes.end(), m.classes.begin(), m.classes.end());
    out.images.insert(out.images.end(), m.images.begin(), m.images.end());
  }
  return out;
}

inline std::string manifests_dir(const std::string& corpus_dir) {
  return (std::filesystem::path(corpus_dir) / "manifests").string();
}

/// Exemplar candidate pools from the per-class train manifests.
inline std::map<std::string, std::vector<ExemplarCandidate>> exemplar_pool(
    const std::string& corpus_dir, const std::vector<std::string>& classes) {
  std::map<std::string, std::vector<ExemplarCandidate>> pool;
  for (const std::string& cls : classes) {
    const DatasetManifest m = load_class_manifests(corpus_dir, {cls}, "train");
    for (const ManifestImage& im : m.images) {
      ExemplarCandidate c;
      c.image_path = im.path;
      c.image = read_ppm(resolve_path(manifests_dir(corpus_dir), im.path));
      for (const BoxAnnotation& b : im.boxes)
        if (b.class_name == cls) c.boxes.push_back(b.box);
      pool[cls].push_back(std::move(c));
    }
  }
  return pool;
}

struct IncrementOutcome {
  std::vector<std::string> added_classes;
  EvalReport eval;
  double train_s = 0.0;
};

struct VariantOutcome {
  std::string name;
  std::vector<IncrementOutcome> increments;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalReport base_eval;
  double base_train_s = 0.0;
  std::vector<VariantOutcome> variants;
};

struct ScenarioReport {
  ScenarioSpec spec;
  std::vector<SeedOutcome> seeds;

  const VariantOutcome& variant(std::size_t seed_idx, const std::string& name) const {
    for (const VariantOutcome& v : seeds.at(seed_idx).variants)
      if (v.name == name) return v;
    throw std::out_of_range("no variant named " + name);
  }

  /// Mean and stdev of a per-seed metric for a variant's final increment.
  struct Aggregate {
    double mean = 0.0;
    double stdev = 0.0;
  };

  Aggregate aggregate(const std::string& variant_name,
                      const std::function<double(const IncrementOutcome&)>& metric) const {
    std::vector<double> values;
    for (std::size_t s = 0; s < seeds.size(); ++s)
      values.push_back(metric(variant(s, variant_name).increments.back()));
    Aggregate a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    for (double v : values) a.stdev += (v - a.mean) * (v - a.mean);
    a.stdev = values.size() > 1 ? std::sqrt(a.stdev / static_cast<double>(values.size() - 1)) : 0.0;
    return a;
  }

  nlohmann::json to_json() const {
    nlohmann::json js = nlohmann::json::array();
    for (const SeedOutcome& s : seeds) {
      nlohmann::json jv = nlohmann::json::array();
      for (const VariantOutcome& v : s.variants) {
        nlohmann::json ji = nlohmann::json::array();
        for (const IncrementOutcome& inc : v.increments)
          ji.push_back({{"added_classes", inc.added_classes},
                        {"eval", inc.eval.to_json()},
                        {"train_s", inc.train_s}});
        jv.push_back({{"name", v.name}, {"increments", ji}});
      }
      js.push_back({{"seed", s.seed},
                    {"base_eval", s.base_eval.to_json()},
                    {"base_train_s", s.base_train_s},
                    {"variants", jv}});
    }
    nlohmann::json agg = nlohmann::json::object();
    for (const ScenarioVariantSpec& v : spec.variants) {
      const Aggregate m = aggregate(v.name, [](const IncrementOutcome& i) { return i.eval.map; });
      nlohmann::json ja = {{"map_mean", m.mean}, {"map_stdev", m.stdev}};
      bool has_old = true;
      for (const SeedOutcome& s : seeds)
        for (const VariantOutcome& vo : s.variants)
          if (vo.name == v.name && !vo.increments.back().eval.old_class_mean) has_old = false;
      if (has_old) {
        const Aggregate o = aggregate(
            v.name, [](const IncrementOutcome& i) { return *i.eval.old_class_mean; });
        ja["old_class_mean_mean"] = o.mean;
        ja["old_class_mean_stdev"] = o.stdev;
      }
      agg[v.name] = ja;
    }
    return {{"spec", spec.to_json()},
            {"seeds", js},
            {"aggregate", agg},
            {"full_scale_reference", reference::full_scale_results()}};
  }
};

/// Runs the full comparative scenario: per seed, train the base model once,
/// then apply every increment under each variant, evaluating after each
/// step. Exemplars, when a variant requests them, are selected from the old
/// classes' train pools with the current model's features.
inline ScenarioReport run_scenario(const ScenarioSpec& spec) {
  using clock = std::chrono::steady_clock;
  if (spec.base_classes.empty()) throw std::invalid_argument("run_scenario: no base classes");
  if (spec.variants.empty()) throw std::invalid_argument("run_scenario: no variants");
  ScenarioReport report;
  report.spec = spec;
  const std::string mdir = manifests_dir(spec.corpus_dir);

  const DatasetManifest base_train = load_class_manifests(spec.corpus_dir, spec.base_classes, "train");
  const DatasetManifest base_test = load_class_manifests(spec.corpus_dir, spec.base_classes, "test");

  for (const std::uint64_t seed : spec.seeds) {
    SeedOutcome so;
    so.seed = seed;
    const auto t0 = clock::now();
    std::vector<TrainSample> base_samples = load_samples(base_train, mdir, spec.base_classes);
    DetectorModel base = train_base(spec.arch, spec.anchors, spec.base_classes,
                                    std::move(base_samples), spec.base_cfg, seed, nullptr);
    so.base_train_s = std::chrono::duration<double>(clock::now() - t0).count();
    so.base_eval = evaluate_model(base, base_test, mdir, spec.eval_score_thr, spec.eval_nms_thr, 0,
                                  spec.name + "/base");

    for (const ScenarioVariantSpec& variant : spec.variants) {
      VariantOutcome vo;
      vo.name = variant.name;
      DetectorModel model = base;
      std::vector<std::string> cumulative = spec.base_classes;
      for (std::size_t inc_idx = 0; inc_idx < spec.increments.size(); ++inc_idx) {
        const std::vector<std::string>& added = spec.increments[inc_idx];
        const DatasetManifest new_train = load_class_manifests(spec.corpus_dir, added, "train");
        const std::uint64_t inc_seed = derive_seed(seed, 0x9000 + inc_idx);

        IncrementOutcome io;
        io.added_classes = added;
        const auto t1 = clock::now();
        if (variant.scheme == TrainScheme::all_data) {
          const DatasetManifest old = load_class_manifests(spec.corpus_dir, cumulative, "train");
          DatasetManifest merged = new_train;  // classes: only the added ones
          merged.images.insert(merged.images.end(), old.images.begin(), old.images.end());
          IncrementResult r =
              train_incremental(model, merged, mdir, nullptr, spec.incr_cfg, variant.scheme, inc_seed);
          model = std::move(r.model);
        } else if (variant.exemplars_per_class > 0) {
          const auto pool = exemplar_pool(spec.corpus_dir, cumulative);
          FeatureExtractor fx = [&model](const Image& img) {
            return detector_image_feature(model, img);
          };
          const ExemplarSet ex = select_exemplars(pool, fx, variant.exemplars_per_class,
                                                  variant.exemplar_strategy, inc_seed);
          IncrementResult r =
              train_incremental(model, new_train, mdir, &ex, spec.incr_cfg, variant.scheme, inc_seed);
          model = std::move(r.model);
        } else {
          IncrementResult r =
              train_incremental(model, new_train, mdir, nullptr, spec.incr_cfg, variant.scheme, inc_seed);
          model = std::move(r.model);
        }
        io.train_s = std::chrono::duration<double>(clock::now() - t1).count();

        const int old_count = static_cast<int>(cumulative.size());
        cumulative.insert(cumulative.end(), added.begin(), added.end());
        const DatasetManifest test = load_class_manifests(spec.corpus_dir, cumulative, "test");
        io.eval = evaluate_model(model, test, mdir, spec.eval_score_thr, spec.eval_nms_thr,
                                 old_count, spec.name + "/" + variant.name);
        vo.increments.push_back(std::move(io));
      }
      so.variants.push_back(std::move(vo));
    }
    report.seeds.push_back(std::move(so));
  }
  return report;
}

}  // namespace incdet
