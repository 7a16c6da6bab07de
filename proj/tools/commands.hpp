#pragma once

// Subcommand bodies, separate from argument parsing so tests can call them.

#include <spdlog/spdlog.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cm2net/cm2net.hpp"
#include "cm2net/gradcheck_suite.hpp"

namespace cm2::cli {

namespace fs = std::filesystem;

inline constexpr const char* kDatasetFile = "dataset.cm2";
inline constexpr const char* kMetricsFile = "metrics.csv";

/// Maps CM2_LOG (error, info, debug) to a level; anything else falls back to info.
inline spdlog::level::level_enum log_level_from_env() {
  const char* v = std::getenv("CM2_LOG");
  if (!v) return spdlog::level::info;
  const std::string s(v);
  if (s == "error") return spdlog::level::err;
  if (s == "debug") return spdlog::level::debug;
  if (s != "info") spdlog::warn("CM2_LOG='{}' not recognized, using info", s);
  return spdlog::level::info;
}

inline RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig rc;
  if (!path) return rc;
  try {
    json::parse(read_file(*path)).get_to(rc);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path->string() + ": " + e.what());
  }
  return rc;
}

inline std::string checkpoint_name(std::size_t stage) { return "stage" + std::to_string(stage) + ".ckpt"; }

inline std::uint64_t file_hash(const fs::path& path) { return fnv1a64(read_file(path)); }

// ---------------------------------------------------------------------------

struct GenDataResult {
  fs::path path;
  std::uint64_t content_hash = 0;
  std::size_t samples = 0;
};

inline GenDataResult cmd_gen_data(const DataConfig& data, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const SyntheticDataset ds = generate(data);
  GenDataResult r;
  r.path = out_dir / kDatasetFile;
  save_dataset(ds, r.path);
  r.content_hash = file_hash(r.path);
  r.samples = ds.samples.size();
  spdlog::info("wrote {} samples ({} classes, {} modalities) to {}", ds.samples.size(), ds.spec.classes,
               ds.channels.size(), r.path.string());
  return r;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  fs::path data;
  /// Total number of stages to have completed at exit; 0 means every modality.
  std::size_t stages = 0;
  std::optional<fs::path> resume;
};

struct TrainResult {
  std::vector<StageReport> reports;
  std::vector<fs::path> checkpoints;
};

inline TrainResult cmd_train(const RunConfig& rc, const TrainOptions& opt, const fs::path& out_dir) {
  rc.train.validate();
  const SyntheticDataset ds = load_dataset(opt.data);
  const std::size_t total = opt.stages ? opt.stages : rc.train.modality_order.size();
  if (total > rc.train.modality_order.size()) {
    throw ConfigError("--stages " + std::to_string(total) + " exceeds the " +
                      std::to_string(rc.train.modality_order.size()) + " configured modalities");
  }
  fs::create_directories(out_dir);

  ContinualState state;
  if (opt.resume) {
    LoadedCheckpoint ck = load_checkpoint(*opt.resume);
    const std::uint64_t want = config_hash(rc.model, rc.train);
    if (ck.meta.config_hash != want) {
      throw ConfigError("cannot resume: checkpoint config hash " + hex64(ck.meta.config_hash) +
                        " differs from the current configuration " + hex64(want));
    }
    if (ck.state.obs_dims != ds.obs_dims()) throw ConfigError("cannot resume: dataset modalities differ");
    state = std::move(ck.state);
    spdlog::info("resumed from {} with {} completed stage(s)", opt.resume->string(), state.completed());
  } else {
    state = make_state(rc.model, rc.train.modality_order, ds.obs_dims(), ds.class_names, rc.train.seed);
  }
  if (state.completed() > total) {
    throw ConfigError("checkpoint already has " + std::to_string(state.completed()) + " stages, asked for " +
                      std::to_string(total));
  }

  const fs::path metrics = out_dir / kMetricsFile;
  if (!opt.resume && fs::exists(metrics)) fs::remove(metrics);
  json run = rc;
  run["dataset_hash"] = hex64(file_hash(opt.data));

  TrainResult result;
  for (std::size_t k = state.completed(); k < total; ++k) {
    auto log_epoch = [](const EpochRecord& r) {
      spdlog::debug("stage {} epoch {} lr {:.3e} loss {:.6f} (cls {:.6f} text {:.6f} prompt {:.6f}) val top1 {:.4f}",
                    r.stage, r.epoch, r.lr, r.loss_total, r.loss_cls, r.loss_text, r.loss_prompt, r.val_top1);
    };
    StageReport rep = train_stage(state, ds, rc.train, k, log_epoch);
    append_metrics(metrics, rep.epochs);
    const fs::path ckpt = out_dir / checkpoint_name(k);
    save_checkpoint(state, rc.train, ckpt, run);
    spdlog::info("stage {} (modality {}) done in {:.1f}s: val top1 {:.4f} mean1 {:.4f}, {} prompt term(s) -> {}", k,
                 rep.modality, rep.seconds, rep.val_top1, rep.val_mean1, rep.prompt_terms, ckpt.string());
    result.reports.push_back(std::move(rep));
    result.checkpoints.push_back(ckpt);
  }
  return result;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  fs::path data;
  std::optional<fs::path> checkpoint;
  Split split = Split::test;
  /// Evaluate freshly initialized stages for every configured modality.
  bool init_only = false;
};

struct EvalRow {
  std::string scope;
  double top1 = 0.0;
  double mean1 = 0.0;
  std::vector<std::optional<double>> recall;
  std::vector<std::vector<std::size_t>> confusion;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  std::string report_csv;
  std::string confusion_csv;
};

inline EvalRow eval_row(std::string scope, const Tensor& scores, const std::vector<std::size_t>& targets) {
  return {std::move(scope), top1(scores, targets), mean1(scores, targets), per_class_recall(scores, targets),
          confusion_counts(scores, targets)};
}

inline EvalResult cmd_eval(const RunConfig& rc, const EvalOptions& opt, const fs::path& out_dir) {
  const SyntheticDataset ds = load_dataset(opt.data);
  ContinualState state;
  if (opt.init_only) {
    state = make_state(rc.model, rc.train.modality_order, ds.obs_dims(), ds.class_names, rc.train.seed);
    for (int m : rc.train.modality_order) state.stages.push_back(init_stage(m, state.dims_for(m), state.seed));
  } else {
    if (!opt.checkpoint) throw ConfigError("eval needs --checkpoint (or --init-only)");
    state = load_checkpoint(*opt.checkpoint).state;
  }
  if (state.completed() == 0) throw ConfigError("checkpoint has no completed stage");
  const auto idx = ds.indices(opt.split);
  if (idx.empty()) throw ConfigError("split '" + std::string(split_name(opt.split)) + "' is empty");
  const auto targets = ds.labels(idx);

  EvalResult res;
  std::vector<Tensor> all;
  for (const auto& st : state.stages) {
    Tensor scores = predict_unimodal(state, ds, st.modality_id, idx);
    res.rows.push_back(eval_row("m" + std::to_string(st.modality_id), scores, targets));
    all.push_back(std::move(scores));
  }
  if (all.size() >= 2) res.rows.push_back(eval_row("fused", late_fuse(all), targets));

  const std::size_t classes = ds.spec.classes;
  res.report_csv = "scope,split,top1,mean1";
  for (std::size_t c = 0; c < classes; ++c) res.report_csv += ",recall_" + std::to_string(c);
  res.report_csv += '\n';
  res.confusion_csv = "scope,true_label";
  for (std::size_t c = 0; c < classes; ++c) res.confusion_csv += ",pred_" + std::to_string(c);
  res.confusion_csv += '\n';
  for (const auto& r : res.rows) {
    res.report_csv += r.scope + ',' + std::string(split_name(opt.split)) + ',' + format_double(r.top1) + ',' +
                      format_double(r.mean1);
    for (const auto& v : r.recall) res.report_csv += ',' + (v ? format_double(*v) : std::string());
    res.report_csv += '\n';
    for (std::size_t t = 0; t < classes; ++t) {
      res.confusion_csv += r.scope + ',' + std::to_string(t);
      for (std::size_t p = 0; p < classes; ++p) res.confusion_csv += ',' + std::to_string(r.confusion[t][p]);
      res.confusion_csv += '\n';
    }
    bool absent = false;
    for (const auto& v : r.recall) absent = absent || !v;
    if (absent) spdlog::info("{}: some classes are absent from the split and excluded from mean1", r.scope);
  }
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "report.csv", res.report_csv);
  write_file_atomic(out_dir / "confusion.csv", res.confusion_csv);
  return res;
}

// ---------------------------------------------------------------------------

struct ExportOptions {
  fs::path data;
  fs::path checkpoint;
  int modality = 0;
  std::optional<Split> split;
  std::optional<fs::path> file;
};

inline fs::path cmd_export_features(const ExportOptions& opt, const fs::path& out_dir) {
  const SyntheticDataset ds = load_dataset(opt.data);
  const ContinualState state = load_checkpoint(opt.checkpoint).state;
  fs::path path = opt.file ? *opt.file : out_dir / ("features_m" + std::to_string(opt.modality) + ".csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  export_features(state, ds, opt.modality, path, opt.split);
  spdlog::info("wrote features of modality {} to {}", opt.modality, path.string());
  return path;
}

}  // namespace cm2::cli
