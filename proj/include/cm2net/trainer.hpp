#pragma once

// Staged continual training. Stage 0 aligns the first modality with the
// label-text embeddings; stage m > 0 trains a new encoder, its projection head
// and one mapping head per earlier stage, with everything earlier frozen.

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cm2net/evaluation.hpp"
#include "cm2net/losses.hpp"
#include "cm2net/model.hpp"
#include "cm2net/optim.hpp"
#include "cm2net/synthetic.hpp"

namespace cm2 {

struct TrainConfig {
  LossWeights weights;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  AdamWConfig adamw;
  std::vector<int> modality_order{0, 1, 2};
  std::uint64_t seed = 0;
  /// Precompute frozen source features once per stage instead of per batch.
  bool cache_prompt_features = false;

  /// Learning rate and epoch count used for large pretrained backbones.
  static TrainConfig paper() {
    TrainConfig c;
    c.lr = 1e-5;
    c.epochs = 100;
    return c;
  }

  void validate() const {
    weights.validate();
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (modality_order.empty()) throw ConfigError("modality order is empty");
    for (std::size_t i = 0; i < modality_order.size(); ++i)
      for (std::size_t j = i + 1; j < modality_order.size(); ++j)
        if (modality_order[i] == modality_order[j]) throw ConfigError("modality order repeats a modality");
  }
};

struct EpochRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_text = 0.0;
  double loss_prompt = 0.0;
  double val_top1 = 0.0;
  double val_mean1 = 0.0;
};

struct StageReport {
  std::size_t stage = 0;
  int modality = 0;
  std::vector<EpochRecord> epochs;
  double val_top1 = 0.0;
  double val_mean1 = 0.0;
  double seconds = 0.0;
  /// Number of contrastive terms inside the prompt loss.
  std::size_t prompt_terms = 0;
};

namespace stream {
inline constexpr std::uint64_t kBatches = 21;
}

/// Shuffled index batches of one split, deterministic in (seed, epoch). A
/// trailing batch smaller than 2 is dropped.
inline std::vector<std::vector<std::size_t>> make_batches(const SyntheticDataset& data, Split split,
                                                          std::size_t batch_size, std::uint64_t seed,
                                                          std::size_t epoch) {
  std::vector<std::size_t> idx = data.indices(split);
  if (idx.empty()) throw ConfigError("split '" + std::string(split_name(split)) + "' is empty");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  CounterRng rng(derive_key(seed, {stream::kBatches, epoch}));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::size_t end = std::min(idx.size(), b + batch_size);
    if (end - b < 2) break;
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

struct StageLoss {
  Var cls;
  Var text;
  Var prompt;
  Var total;
  std::size_t prompt_terms = 0;
};

/// Full objective for one batch of the stage being trained.
/// `source_features[i]` are frozen features of prompt source i for the same
/// samples; `heads[i]` maps them into this stage's feature space. Pass empty
/// vectors to drop the prompt term.
inline StageLoss stage_loss(Tape& tape, EncoderStage& stage, ProjectionHead& text_head, const Tensor& text_matrix,
                            const std::vector<MappingHead*>& heads, const std::vector<Tensor>& source_features,
                            const Tensor& batch, const std::vector<std::size_t>& targets, const LossWeights& w,
                            const std::vector<double>& omega) {
  if (heads.size() != source_features.size()) throw ConfigError("stage_loss: heads and source features differ in count");
  if (targets.size() < 2) throw DimensionError("stage_loss: batch size must be at least 2");
  Var class_embeds = text_head.project(tape, tape.constant(text_matrix));
  Var f = stage.encoder.encode(tape, tape.constant(batch));
  Var v = stage.head.project(tape, f);
  StageLoss out;
  out.cls = cls_loss(similarity_scores(v, class_embeds), targets, w.tau_cls);
  out.text = text_loss(index_rows(class_embeds, targets), v, w.tau);
  std::vector<Var> mapped;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    mapped.push_back(heads[i]->map_features(tape, tape.constant(source_features[i])));
  }
  out.prompt = prompt_loss(mapped, f, omega, w.tau);
  out.prompt_terms = mapped.size();
  out.total = total_loss(out.cls, out.text, out.prompt, w);
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains stage `stage_index` (modality cfg.modality_order[stage_index]) and
/// registers it, frozen, in `state`.
inline StageReport train_stage(ContinualState& state, const SyntheticDataset& data, const TrainConfig& cfg,
                               std::size_t stage_index, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (stage_index != state.completed()) {
    throw ConfigError("stage " + std::to_string(stage_index) + " requested but " + std::to_string(state.completed()) +
                      " stages are completed");
  }
  if (stage_index >= cfg.modality_order.size()) throw ConfigError("stage index beyond modality order");
  if (state.modality_order != cfg.modality_order) throw ConfigError("state and config disagree on modality order");
  const int modality = cfg.modality_order[stage_index];
  if (!data.has_modality(modality)) {
    throw ConfigError("dataset lacks modality " + std::to_string(modality));
  }
  if (data.class_names.size() != state.text.vocabulary.size()) {
    throw ConfigError("dataset and model disagree on the number of classes");
  }
  const auto start = std::chrono::steady_clock::now();

  EncoderStage stage = init_stage(modality, state.dims_for(modality), state.seed);
  const bool first = stage_index == 0;
  state.text_head.for_each_param([first](Parameter& p) { p.frozen = !first; });

  const std::vector<int> sources = state.prompt_sources(stage_index);
  const std::vector<double> omega = cfg.weights.omega_for(sources.size());
  std::vector<MappingHead> heads;
  for (int src : sources) {
    if (!data.has_modality(src)) throw ConfigError("dataset lacks prompt source modality " + std::to_string(src));
    heads.push_back(init_mapping_head(src, modality, state.stage_for(src).encoder.feature_dim(),
                                      stage.encoder.feature_dim(), state.model, state.seed));
  }

  // Heads with zero weight receive no gradient; keep them out of the update so
  // decoupled weight decay leaves them at their initial values.
  const bool prompting = cfg.weights.epsilon > 0.0 && !sources.empty();
  std::vector<std::size_t> active;
  if (prompting) {
    for (std::size_t i = 0; i < heads.size(); ++i)
      if (omega[i] > 0.0) active.push_back(i);
  }

  std::vector<Parameter*> params;
  stage.for_each_param([&params](Parameter& p) { params.push_back(&p); });
  if (first) state.text_head.for_each_param([&params](Parameter& p) { params.push_back(&p); });
  for (std::size_t i : active) heads[i].for_each_param([&params](Parameter& p) { params.push_back(&p); });

  std::vector<Tensor> cached;
  if (prompting && cfg.cache_prompt_features) {
    std::vector<std::size_t> all(data.samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i : active) cached.push_back(extract_features(state.stage_for(sources[i]), data, all));
  }

  const Tensor text_matrix = state.text.matrix();
  const std::vector<std::size_t> val_idx = data.indices(Split::val);
  const std::vector<std::size_t> val_targets = data.labels(val_idx);
  const std::uint64_t batch_seed = derive_key(cfg.seed, {static_cast<std::uint64_t>(modality)});
  const std::size_t per_epoch = make_batches(data, Split::train, cfg.batch_size, batch_seed, 0).size();
  const std::uint64_t total_steps = per_epoch * cfg.epochs;

  AdamW opt(cfg.adamw);
  StageReport report;
  report.stage = stage_index;
  report.modality = modality;
  report.prompt_terms = active.size();
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.stage = stage_index;
    rec.epoch = epoch;
    rec.lr = cosine_lr(step, total_steps, cfg.lr);
    const auto batches = make_batches(data, Split::train, cfg.batch_size, batch_seed, epoch);
    for (const auto& idx : batches) {
      std::vector<MappingHead*> batch_heads;
      std::vector<Tensor> feats;
      std::vector<double> batch_omega;
      for (std::size_t k = 0; k < active.size(); ++k) {
        const std::size_t i = active[k];
        batch_heads.push_back(&heads[i]);
        batch_omega.push_back(omega[i]);
        if (cfg.cache_prompt_features) {
          Tensor f({idx.size(), cached[k].cols()});
          for (std::size_t b = 0; b < idx.size(); ++b)
            for (std::size_t j = 0; j < f.cols(); ++j) f.at(b, j) = cached[k].at(idx[b], j);
          feats.push_back(std::move(f));
        } else {
          feats.push_back(extract_features(state.stage_for(sources[i]), data, idx));
        }
      }
      const std::vector<std::size_t> targets = data.labels(idx);
      Tape tape;
      StageLoss loss = stage_loss(tape, stage, state.text_head, text_matrix, batch_heads, feats,
                                  data.batch(idx, modality), targets, cfg.weights, batch_omega);
      tape.backward(loss.total);
      opt.step(params, cosine_lr(step, total_steps, cfg.lr));
      ++step;
      rec.loss_cls += loss.cls.value().item();
      rec.loss_text += loss.text.value().item();
      rec.loss_prompt += loss.prompt.value().item();
    }
    const double n = static_cast<double>(batches.size());
    rec.loss_cls /= n;
    rec.loss_text /= n;
    rec.loss_prompt /= n;
    rec.loss_total = total_loss(rec.loss_cls, rec.loss_text, rec.loss_prompt, cfg.weights);
    if (!val_idx.empty()) {
      const Tensor scores = score_samples(stage, class_embeddings(state.text_head, state.text), data, val_idx);
      rec.val_top1 = top1(scores, val_targets);
      rec.val_mean1 = mean1(scores, val_targets);
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  stage.set_frozen(true);
  state.text_head.for_each_param([](Parameter& p) { p.frozen = true; });
  for (auto& h : heads) {
    h.for_each_param([](Parameter& p) { p.frozen = true; });
    const std::pair<int, int> key{h.source, h.target};
    state.mapping_heads.insert_or_assign(key, std::move(h));
  }
  state.stages.push_back(std::move(stage));

  report.val_top1 = report.epochs.back().val_top1;
  report.val_mean1 = report.epochs.back().val_mean1;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline StageReport train_stage0(ContinualState& state, const SyntheticDataset& data, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {}) {
  if (state.completed() != 0) throw ConfigError("stage 0 requires an empty state");
  return train_stage(state, data, cfg, 0, on_epoch);
}

inline StageReport train_stage_m(ContinualState& state, const SyntheticDataset& data, const TrainConfig& cfg,
                                 std::size_t m, const EpochCallback& on_epoch = {}) {
  if (m == 0) throw ConfigError("train_stage_m needs m >= 1");
  return train_stage(state, data, cfg, m, on_epoch);
}

}  // namespace cm2
