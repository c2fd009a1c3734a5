#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "incdet/builder.hpp"
#include "incdet/eval.hpp"
#include "incdet/registry.hpp"
#include "incdet/scenario.hpp"
#include "incdet/trainer.hpp"
#include "incdet/trigger.hpp"

namespace incdet {

enum class PipelineMode { edge_only, edge_cloud };

inline std::string to_string(PipelineMode m) {
  return m == PipelineMode::edge_only ? "edge_only" : "edge_cloud";
}

inline PipelineMode pipeline_mode_from_string(const std::string& s) {
  if (s == "edge_only") return PipelineMode::edge_only;
  if (s == "edge_cloud") return PipelineMode::edge_cloud;
  throw std::invalid_argument("unknown pipeline mode: " + s);
}

struct ProposalsConfig {
  std::string type = "ebox";  // "ebox" | "deep"
  double score_thr = 0.2;     // deep provider threshold
  int max_boxes = 20;         // ebox cap
};

struct EvalConfig {
  std::vector<std::string> manifests;  // ground-truth manifests to score after learning
  std::string root;                    // base dir for manifest paths
  double score_thr = 0.05;
  double nms_thr = 0.5;
};

struct PipelineConfig {
  PipelineMode mode = PipelineMode::edge_only;
  std::uint64_t seed = 1;
  std::string registry_dir;
  std::string work_dir;  // task artifacts; defaults to <registry_dir>/tasks
  std::string corpus_index;
  std::string embeddings_path;
  std::string classifier_vocab_path;
  ProposalsConfig proposals;
  BuilderConfig builder;
  DistillConfig distill;
  TrainScheme scheme = TrainScheme::feat_distill;
  std::string exemplar_manifest;  // optional
  std::string exemplar_root;      // base dir for exemplar image paths
  std::string trainer_endpoint;   // edge_cloud
  EvalConfig eval;
  TriggerPolicy trigger;
  bool enable_test_hooks = false;

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    c.mode = pipeline_mode_from_string(j.value("mode", std::string("edge_only")));
    c.seed = j.value("seed", c.seed);
    c.registry_dir = j.at("registry_dir").get<std::string>();
    c.work_dir = j.value("work_dir", std::string());
    c.corpus_index = j.value("corpus_index", std::string());
    c.embeddings_path = j.value("embeddings", std::string());
    c.classifier_vocab_path = j.value("classifier_vocab", std::string());
    if (j.contains("proposals")) {
      const auto& jp = j["proposals"];
      c.proposals.type = jp.value("type", c.proposals.type);
      c.proposals.score_thr = jp.value("score_thr", c.proposals.score_thr);
      c.proposals.max_boxes = jp.value("max_boxes", c.proposals.max_boxes);
    }
    if (j.contains("builder")) {
      const auto& jb = j["builder"];
      c.builder.thr_b = jb.value("thr_b", c.builder.thr_b);
      c.builder.thr_d = jb.value("thr_d", c.builder.thr_d);
      c.builder.thr_o = jb.value("thr_o", c.builder.thr_o);
      c.builder.k = jb.value("k", c.builder.k);
      c.builder.image_count = jb.value("image_count", c.builder.image_count);
    }
    if (j.contains("distill")) c.distill = distill_config_from_json(j["distill"]);
    c.scheme = train_scheme_from_string(j.value("scheme", std::string("feat_distill")));
    if (j.contains("exemplars")) {
      c.exemplar_manifest = j["exemplars"].value("manifest", std::string());
      c.exemplar_root = j["exemplars"].value("root", std::string());
    }
    c.trainer_endpoint = j.value("trainer_endpoint", std::string());
    if (j.contains("eval")) {
      const auto& je = j["eval"];
      if (je.contains("manifests")) c.eval.manifests = je["manifests"].get<std::vector<std::string>>();
      c.eval.root = je.value("root", std::string());
      c.eval.score_thr = je.value("score_thr", c.eval.score_thr);
      c.eval.nms_thr = je.value("nms_thr", c.eval.nms_thr);
    }
    if (j.contains("trigger")) {
      c.trigger.unknown_threshold = j["trigger"].value("unknown_threshold", c.trigger.unknown_threshold);
      c.trigger.min_observations = j["trigger"].value("min_observations", c.trigger.min_observations);
    }
    c.enable_test_hooks = j.value("enable_test_hooks", false);
    return c;
  }

  static PipelineConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("PipelineConfig: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
  }

  std::string tasks_dir() const {
    return work_dir.empty() ? (std::filesystem::path(registry_dir) / "tasks").string() : work_dir;
  }
};

/// Per-stage wall clock, mirroring the four pipeline stages. The transfer
/// stage only applies in edge-cloud mode.
struct TimingReport {
  double download_images_s = 0.0;
  double build_dataset_s = 0.0;
  double train_model_s = 0.0;
  double transfer_model_s = 0.0;
  bool transfer_applicable = false;
  double total_s = 0.0;

  double stage_sum() const {
    return download_images_s + build_dataset_s + train_model_s +
           (transfer_applicable ? transfer_model_s : 0.0);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"download_images_s", download_images_s},
                        {"build_dataset_s", build_dataset_s},
                        {"train_model_s", train_model_s},
                        {"total_s", total_s}};
    if (transfer_applicable)
      j["transfer_model_s"] = transfer_model_s;
    else
      j["transfer_model_s"] = "N/A";
    return j;
  }

  std::string table() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-18s %8.2f s\n", "download images", download_images_s);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-18s %8.2f s\n", "build dataset", build_dataset_s);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-18s %8.2f s\n", "train model", train_model_s);
    out += buf;
    if (transfer_applicable)
      std::snprintf(buf, sizeof(buf), "%-18s %8.2f s\n", "transfer model", transfer_model_s);
    else
      std::snprintf(buf, sizeof(buf), "%-18s %8s\n", "transfer model", "N/A");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-18s %8.2f s\n", "total", total_s);
    out += buf;
    return out;
  }
};

/// Providers assembled from a pipeline config.
struct ProviderBundle {
  std::unique_ptr<ImageSource> source;
  std::unique_ptr<ProposalProvider> proposals;
  std::unique_ptr<ClassifierProvider> classifier;
  WordEmbeddings embeddings;
};

inline ProviderBundle make_providers(const PipelineConfig& cfg, const DetectorModel& current_model) {
  ProviderBundle b;
  if (cfg.corpus_index.empty())
    throw std::invalid_argument("pipeline: corpus_index is required to build datasets");
  b.source = std::make_unique<LocalCorpusSource>(cfg.corpus_index);
  if (cfg.proposals.type == "ebox") {
    b.proposals = std::make_unique<EdgeBoxProposals>(cfg.proposals.max_boxes);
  } else if (cfg.proposals.type == "deep") {
    b.proposals = std::make_unique<DetectorProposals>(current_model, cfg.proposals.score_thr);
  } else {
    throw std::invalid_argument("pipeline: unknown proposal provider " + cfg.proposals.type);
  }
  b.classifier = std::make_unique<HeuristicShapeClassifier>(
      load_classifier_vocab(cfg.classifier_vocab_path));
  b.embeddings = WordEmbeddings::load(cfg.embeddings_path);
  return b;
}

struct BuiltDataset {
  DatasetManifest manifest;  // merged over all queried classes
  BuildReport report;        // of the last query; per-class reports in `per_class`
  std::vector<BuildReport> per_class;
  double download_s = 0.0;
  double build_s = 0.0;
};

/// Stage 1+2: fetch candidate images and self-label them, one query per
/// class, merging the per-class manifests.
inline BuiltDataset pipeline_build_dataset(const std::vector<std::string>& classes,
                                           const PipelineConfig& cfg,
                                           const DetectorModel& current_model) {
  if (classes.empty()) throw std::invalid_argument("pipeline: no classes requested");
  ProviderBundle providers = make_providers(cfg, current_model);
  BuilderConfig bcfg = cfg.builder;
  bcfg.provider_id = providers.proposals->id();

  BuiltDataset out;
  for (const std::string& cls : classes) {
    BuildReport rep;
    DatasetManifest m = build_dataset(cls, *providers.source, *providers.proposals,
                                      *providers.classifier, providers.embeddings, bcfg, &rep);
    out.download_s += rep.fetch_s;
    out.build_s += rep.vote_s + rep.purify_s;
    out.per_class.push_back(rep);
    out.report = rep;
    if (out.manifest.classes.empty()) {
      out.manifest = std::move(m);
    } else {
      out.manifest.classes.insert(out.manifest.classes.end(), m.classes.begin(), m.classes.end());
      out.manifest.images.insert(out.manifest.images.end(), m.images.begin(), m.images.end());
    }
  }
  return out;
}

struct TrainedIncrement {
  DetectorModel model;
  TrainLog log;
  double train_s = 0.0;
};

/// Stage 3: incremental training on the self-labeled manifest (plus the
/// configured exemplar set when present).
inline TrainedIncrement pipeline_train(const DetectorModel& old_model, const BuiltDataset& built,
                                       const PipelineConfig& cfg) {
  if (built.manifest.images.empty())
    throw std::runtime_error("pipeline: constructed dataset is empty; aborting before training");
  std::optional<ExemplarSet> exemplars;
  if (!cfg.exemplar_manifest.empty()) exemplars = load_exemplar_set(cfg.exemplar_manifest);

  TrainedIncrement out;
  const auto t0 = std::chrono::steady_clock::now();
  // paths in the built manifest are absolute (local corpus source); exemplar
  // paths resolve against exemplar_root via a pre-resolution pass
  DatasetManifest manifest = built.manifest;
  const ExemplarSet* ex = nullptr;
  ExemplarSet resolved;
  if (exemplars && !exemplars->classes.empty()) {
    resolved = *exemplars;
    if (!cfg.exemplar_root.empty())
      for (ExemplarClassSet& c : resolved.classes)
        for (ExemplarEntry& e : c.entries) e.image_path = resolve_path(cfg.exemplar_root, e.image_path);
    ex = &resolved;
  }
  IncrementResult r = train_incremental(old_model, manifest, /*data_root=*/"", ex, cfg.distill,
                                        cfg.scheme, cfg.seed);
  out.model = std::move(r.model);
  out.log = std::move(r.log);
  out.train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct LearnResult {
  std::string snapshot_hash;
  TimingReport timing;
  BuildReport build_report;
  std::vector<BuildReport> per_class_reports;
  std::optional<EvalReport> eval;
  std::string task_dir;
};

inline std::string allocate_task_dir(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.tasks_dir());
  int n = 0;
  while (true) {
    const fs::path p = fs::path(cfg.tasks_dir()) / ("task-" + std::to_string(n));
    if (!fs::exists(p)) {
      fs::create_directories(p);
      return p.string();
    }
    ++n;
  }
}

/// Edge-only learning task: build the dataset, train, validate and swap the
/// registry pointer. Any failure leaves the previous model current; partial
/// artifacts stay in the task directory for diagnosis.
inline LearnResult run_learning_task_local(const std::vector<std::string>& classes,
                                           const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  ModelRegistry registry(cfg.registry_dir);
  const std::optional<DetectorModel> current = registry.current();
  if (!current)
    throw std::runtime_error("pipeline: registry has no current model; train a base model first");

  LearnResult out;
  out.task_dir = allocate_task_dir(cfg);
  const auto t0 = clock::now();
  const BuiltDataset built = pipeline_build_dataset(classes, cfg, *current);
  save_manifest(built.manifest, out.task_dir + "/dataset.json");
  {
    std::ofstream f(out.task_dir + "/build_report.json");
    nlohmann::json j = nlohmann::json::array();
    for (const BuildReport& r : built.per_class) j.push_back(r.to_json());
    f << j.dump(2) << "\n";
  }
  const TrainedIncrement trained = pipeline_train(*current, built, cfg);
  trained.log.write_ndjson(out.task_dir + "/train_log.ndjson");

  out.snapshot_hash = registry.put(trained.model);
  registry.set_current(out.snapshot_hash);

  out.timing.download_images_s = built.download_s;
  out.timing.build_dataset_s = built.build_s;
  out.timing.train_model_s = trained.train_s;
  out.timing.transfer_applicable = false;
  out.timing.total_s = std::chrono::duration<double>(clock::now() - t0).count();
  out.build_report = built.report;
  out.per_class_reports = built.per_class;

  if (!cfg.eval.manifests.empty()) {
    DatasetManifest merged;
    for (const std::string& mp : cfg.eval.manifests) {
      DatasetManifest m = load_manifest(mp);
      merged.classes.insert(merged.classes.end(), m.classes.begin(), m.classes.end());
      for (ManifestImage& im : m.images) {
        const std::string base = cfg.eval.root.empty()
                                     ? std::filesystem::path(mp).parent_path().string()
                                     : cfg.eval.root;
        im.path = resolve_path(base, im.path);
        merged.images.push_back(im);
      }
    }
    out.eval = evaluate_model(trained.model, merged, "", cfg.eval.score_thr, cfg.eval.nms_thr,
                              current->num_classes(), "learn");
  }
  return out;
}

}  // namespace incdet
