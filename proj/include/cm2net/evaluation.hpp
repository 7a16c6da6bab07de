#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cm2net/io.hpp"
#include "cm2net/losses.hpp"
#include "cm2net/model.hpp"
#include "cm2net/synthetic.hpp"

namespace cm2 {

namespace detail {
inline constexpr std::size_t kEvalChunk = 256;

inline void append_rows(Tensor& dst, std::size_t& row, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  std::copy(s.begin(), s.end(), d.begin() + static_cast<std::ptrdiff_t>(row * dst.cols()));
  row += src.rows();
}
}  // namespace detail

/// Projected label-text embeddings, one row per class (C x d_unified).
inline Tensor class_embeddings(const ProjectionHead& text_head, const FrozenTextEmbedder& text) {
  ProjectionHead head = text_head;
  head.for_each_param([](Parameter& p) { p.frozen = true; });
  Tape tape;
  return head.project(tape, tape.constant(text.matrix())).value();
}

/// Encoder features f (N x d_feat) for the given samples.
inline Tensor extract_features(const EncoderStage& stage, const SyntheticDataset& data,
                               const std::vector<std::size_t>& idx) {
  EncoderStage s = stage;
  s.set_frozen(true);
  Tensor out({idx.size(), s.encoder.feature_dim()});
  std::size_t row = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += detail::kEvalChunk) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), begin + detail::kEvalChunk)));
    Tape tape;
    Var f = s.encoder.encode(tape, tape.constant(data.batch(chunk, stage.modality_id)));
    detail::append_rows(out, row, f.value());
  }
  return out;
}

/// Cosine scores (N x C) of each sample's embedding against every class embedding.
inline Tensor score_samples(const EncoderStage& stage, const Tensor& class_embeds, const SyntheticDataset& data,
                            const std::vector<std::size_t>& idx) {
  EncoderStage s = stage;
  s.set_frozen(true);
  Tensor out({idx.size(), class_embeds.rows()});
  std::size_t row = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += detail::kEvalChunk) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), begin + detail::kEvalChunk)));
    Tape tape;
    Var v = s.embed(tape, tape.constant(data.batch(chunk, stage.modality_id)));
    detail::append_rows(out, row, similarity_scores(v, tape.constant(class_embeds)).value());
  }
  return out;
}

inline Tensor predict_unimodal(const ContinualState& state, const SyntheticDataset& data, int modality,
                               const std::vector<std::size_t>& idx) {
  return score_samples(state.stage_for(modality), class_embeddings(state.text_head, state.text), data, idx);
}

inline Tensor predict_unimodal(const ContinualState& state, const SyntheticDataset& data, int modality, Split split) {
  return predict_unimodal(state, data, modality, data.indices(split));
}

/// Weighted mean; weights are normalized to sum to one.
inline Tensor late_fuse(const std::vector<Tensor>& scores, const std::vector<double>& weights) {
  if (scores.empty()) throw DimensionError("late_fuse: no score matrices");
  if (weights.size() != scores.size()) throw DimensionError("late_fuse: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw ConfigError("late_fuse: weights must sum to a positive value");
  Tensor out = Tensor::zeros(scores.front().shape());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k].shape() != out.shape()) {
      throw DimensionError("late_fuse: shape " + shape_str(scores[k].shape()) + " vs " + shape_str(out.shape()));
    }
    auto s = scores[k].data();
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += weights[k] * s[i];
  }
  for (double& v : out.data()) v /= wsum;
  return out;
}

/// Elementwise mean of score matrices.
inline Tensor late_fuse(const std::vector<Tensor>& scores) {
  return late_fuse(scores, std::vector<double>(scores.size(), 1.0));
}

/// Column of the row maximum; the lowest index wins ties.
inline std::size_t argmax_row(const Tensor& scores, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.cols(); ++c)
    if (scores.at(r, c) > scores.at(r, best)) best = c;
  return best;
}

inline double top1(const Tensor& scores, const std::vector<std::size_t>& targets) {
  if (targets.empty() || scores.rank() != 2 || scores.rows() != targets.size()) {
    throw DimensionError("top1: scores and targets disagree");
  }
  std::size_t hits = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) hits += argmax_row(scores, r) == targets[r];
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

/// Recall per class; nullopt for classes absent from `targets`.
inline std::vector<std::optional<double>> per_class_recall(const Tensor& scores,
                                                           const std::vector<std::size_t>& targets) {
  const std::size_t classes = scores.cols();
  std::vector<std::size_t> hits(classes, 0), total(classes, 0);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    ++total.at(targets[r]);
    hits[targets[r]] += argmax_row(scores, r) == targets[r];
  }
  std::vector<std::optional<double>> out(classes);
  for (std::size_t c = 0; c < classes; ++c)
    if (total[c]) out[c] = static_cast<double>(hits[c]) / static_cast<double>(total[c]);
  return out;
}

/// Unweighted mean of per-class recall over classes present in `targets`.
inline double mean1(const Tensor& scores, const std::vector<std::size_t>& targets) {
  if (targets.empty() || scores.rank() != 2 || scores.rows() != targets.size()) {
    throw DimensionError("mean1: scores and targets disagree");
  }
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : per_class_recall(scores, targets)) {
    if (r) {
      s += *r;
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

/// counts[true][predicted]
inline std::vector<std::vector<std::size_t>> confusion_counts(const Tensor& scores,
                                                              const std::vector<std::size_t>& targets) {
  std::vector<std::vector<std::size_t>> m(scores.cols(), std::vector<std::size_t>(scores.cols(), 0));
  for (std::size_t r = 0; r < targets.size(); ++r) ++m.at(targets[r])[argmax_row(scores, r)];
  return m;
}

/// CSV `sample_id,label,f0,...,f{d-1}` of encoder features for the given samples.
inline std::string features_csv(const ContinualState& state, const SyntheticDataset& data, int modality,
                                const std::vector<std::size_t>& idx) {
  const Tensor f = extract_features(state.stage_for(modality), data, idx);
  std::string out = "sample_id,label";
  for (std::size_t j = 0; j < f.cols(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out += std::to_string(idx[r]) + ',' + std::to_string(data.samples[idx[r]].label);
    for (std::size_t j = 0; j < f.cols(); ++j) out += ',' + format_double(f.at(r, j));
    out += '\n';
  }
  return out;
}

inline void export_features(const ContinualState& state, const SyntheticDataset& data, int modality,
                            const std::filesystem::path& path, std::optional<Split> split = std::nullopt) {
  std::vector<std::size_t> idx;
  if (split) {
    idx = data.indices(*split);
  } else {
    idx.resize(data.samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  write_file_atomic(path, features_csv(state, data, modality, idx));
}

}  // namespace cm2
