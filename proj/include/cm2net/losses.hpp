#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cm2net/autodiff.hpp"

namespace cm2 {

/// Weights of L = (1 - lambda) L_cls + lambda L_text + epsilon L_prompt.
struct LossWeights {
  double lambda = 0.5;
  double epsilon = 0.5;
  /// Per prompt source; empty means uniform 1/m over the m sources.
  std::vector<double> omega;
  double tau = 1.0;
  double tau_cls = 1.0;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(tau_cls > 0.0)) throw ConfigError("tau_cls must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
    for (double w : omega)
      if (!(w >= 0.0)) throw ConfigError("omega entries must be non-negative");
  }

  /// The omega vector actually applied with `sources` prompt sources.
  std::vector<double> omega_for(std::size_t sources) const {
    if (omega.empty()) {
      return std::vector<double>(sources, sources ? 1.0 / static_cast<double>(sources) : 0.0);
    }
    if (omega.size() != sources) {
      throw ConfigError("omega has " + std::to_string(omega.size()) + " entries for " + std::to_string(sources) +
                        " prompt sources");
    }
    return omega;
  }
};

/// Cosine similarity of every row of v (B x d) against every class row (C x d).
inline Var similarity_scores(Var v, Var class_embeds) {
  if (v.shape().size() != 2 || class_embeds.shape().size() != 2 || v.shape()[1] != class_embeds.shape()[1]) {
    throw DimensionError("similarity_scores: " + shape_str(v.shape()) + " vs " + shape_str(class_embeds.shape()));
  }
  return matmul(l2_normalize(v), transpose(l2_normalize(class_embeds)));
}

/// Mean over the batch of -log softmax(scores / tau)[target].
inline Var cls_loss(Var scores, const std::vector<std::size_t>& targets, double tau) {
  if (!(tau > 0.0)) throw ConfigError("cls_loss: tau must be positive");
  const Shape& s = scores.shape();
  if (s.size() != 2 || targets.size() != s[0]) {
    throw DimensionError("cls_loss: " + std::to_string(targets.size()) + " targets for scores " + shape_str(s));
  }
  for (std::size_t t : targets) {
    if (t >= s[1]) throw DimensionError("cls_loss: target " + std::to_string(t) + " out of range");
  }
  return neg(mean(pick(log_softmax_rows(scale(scores, 1.0 / tau)), targets)));
}

/// Cosines of row-normalized a against row-normalized b, divided by tau (B x B).
inline Var cl_logits(Var a, Var b, double tau) {
  if (!(tau > 0.0)) throw ConfigError("cl_loss: tau must be positive");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sa != sb) {
    throw DimensionError("cl_loss: paired batches must share shape, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  if (sa[0] < 2) throw DimensionError("cl_loss: batch size must be at least 2");
  return scale(matmul(l2_normalize(a), transpose(l2_normalize(b))), 1.0 / tau);
}

/// Symmetric InfoNCE: L_{a->b} + L_{b->a}, each summed over the batch, with
/// row k of `a` paired to row k of `b`.
inline Var cl_loss(Var a, Var b, double tau) {
  Var logits = cl_logits(a, b, tau);
  Var a_to_b = sum(diagonal(log_softmax_rows(logits)));
  Var b_to_a = sum(diagonal(log_softmax_rows(transpose(logits))));
  return neg(add(a_to_b, b_to_a));
}

/// Contrast of label-text embeddings w with modality embeddings v.
inline Var text_loss(Var w, Var v, double tau) { return cl_loss(w, v, tau); }

/// sum_i omega_i * CL(mapped_i, f_m). Zero for an empty source list.
inline Var prompt_loss(const std::vector<Var>& mapped, Var f_m, const std::vector<double>& omega, double tau) {
  if (mapped.size() != omega.size()) {
    throw ConfigError("prompt_loss: " + std::to_string(mapped.size()) + " mapped sources but " +
                      std::to_string(omega.size()) + " weights");
  }
  Var total = f_m.tape()->constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < mapped.size(); ++i) total = add(total, scale(cl_loss(mapped[i], f_m, tau), omega[i]));
  return total;
}

inline Var total_loss(Var l_cls, Var l_text, Var l_prompt, const LossWeights& w) {
  return add(add(scale(l_cls, 1.0 - w.lambda), scale(l_text, w.lambda)), scale(l_prompt, w.epsilon));
}

/// Plain-number version of the weighted sum.
inline double total_loss(double l_cls, double l_text, double l_prompt, const LossWeights& w) {
  return (1.0 - w.lambda) * l_cls + w.lambda * l_text + w.epsilon * l_prompt;
}

}  // namespace cm2
