#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cm2net/autodiff.hpp"
#include "cm2net/rng.hpp"

namespace cm2 {

enum class Activation { tanh, relu, identity };

inline Var activate(Activation act, Var x) {
  switch (act) {
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::identity: return x;
  }
  return x;
}

/// Architecture knobs shared by every stage.
struct ModelConfig {
  std::size_t frames = 4;
  std::size_t encoder_hidden = 64;
  std::size_t feature_dim = 64;
  std::size_t text_dim = 64;
  std::size_t head_hidden = 64;
  std::size_t unified_dim = 16;
  std::size_t mapping_hidden = 64;
  Activation encoder_activation = Activation::tanh;
  Activation head_activation = Activation::tanh;
  std::string text_prefix = "A video of a driver ";
  std::uint64_t text_seed = 0;

  static ModelConfig desk() { return {}; }

  /// 768-d video features, 512-d text features, 256-d unified space.
  static ModelConfig paper() {
    ModelConfig c;
    c.frames = 8;
    c.encoder_hidden = 768;
    c.feature_dim = 768;
    c.text_dim = 512;
    c.head_hidden = 512;
    c.unified_dim = 256;
    c.mapping_hidden = 768;
    return c;
  }
};

/// Fully connected layer y = x W + b, W stored (in x out).
struct Dense {
  Parameter weight;
  Parameter bias;

  Var forward(Tape& tape, Var x) {
    return add_rowwise(matmul(x, tape.param(weight)), tape.param(bias));
  }

  template <class F>
  void for_each_param(F&& f) {
    f(weight);
    f(bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(weight);
    f(bias);
  }
};

/// Glorot-uniform weights with bound sqrt(6 / (fan_in + fan_out)); zero bias.
inline Dense make_dense(const std::string& prefix, std::size_t in, std::size_t out, CounterRng& rng) {
  Tensor w({in, out});
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return Dense{Parameter(prefix + "/weight", std::move(w)), Parameter(prefix + "/bias", Tensor::zeros({1, out}))};
}

/// Two dense layers with an activation between them.
struct Mlp {
  Dense first;
  Dense second;
  Activation activation = Activation::tanh;

  Var forward(Tape& tape, Var x) { return second.forward(tape, activate(activation, first.forward(tape, x))); }

  std::size_t in_dim() const { return first.weight.value.rows(); }
  std::size_t out_dim() const { return second.weight.value.cols(); }

  template <class F>
  void for_each_param(F&& f) {
    first.for_each_param(f);
    second.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    first.for_each_param(f);
    second.for_each_param(f);
  }
};

inline Mlp make_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                    Activation act, CounterRng& rng) {
  Dense a = make_dense(prefix + "/layer0", in, hidden, rng);
  Dense b = make_dense(prefix + "/layer1", hidden, out, rng);
  return Mlp{std::move(a), std::move(b), act};
}

/// Per-frame MLP followed by a temporal mean over frames.
struct ModalityEncoder {
  int modality_id = 0;
  std::size_t frames = 1;
  Mlp mlp;

  std::size_t obs_dim() const { return mlp.in_dim(); }
  std::size_t feature_dim() const { return mlp.out_dim(); }

  /// batch: B x T x d_obs -> B x d_feat
  Var encode(Tape& tape, Var batch) {
    const Shape& s = batch.shape();
    if (s.size() != 3 || s[1] != frames || s[2] != obs_dim()) {
      throw DimensionError("encoder " + std::to_string(modality_id) + " expects B x " + std::to_string(frames) +
                           " x " + std::to_string(obs_dim()) + ", got " + shape_str(s));
    }
    const std::size_t b = s[0];
    Var flat = reshape(batch, {b * frames, obs_dim()});
    Var per_frame = mlp.forward(tape, flat);
    return mean_over_axis(reshape(per_frame, {b, frames, feature_dim()}), 1);
  }

  template <class F>
  void for_each_param(F&& f) {
    mlp.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    mlp.for_each_param(f);
  }
};

/// Maps features into the unified space. Output is not normalized.
struct ProjectionHead {
  Mlp mlp;

  Var project(Tape& tape, Var f) {
    if (f.shape().size() != 2 || f.shape()[1] != mlp.in_dim()) {
      throw DimensionError("projection head expects B x " + std::to_string(mlp.in_dim()) + ", got " +
                           shape_str(f.shape()));
    }
    return mlp.forward(tape, f);
  }

  template <class F>
  void for_each_param(F&& f) {
    mlp.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    mlp.for_each_param(f);
  }
};

/// Translates modality `source` features into modality `target` feature space.
struct MappingHead {
  int source = 0;
  int target = 0;
  Mlp mlp;

  /// `f_source` must be a constant on the tape: gradients never reach source encoders.
  Var map_features(Tape& tape, Var f_source) {
    if (f_source.requires_grad()) {
      throw TapeError("map_features: source features must be detached from their encoder");
    }
    if (f_source.shape().size() != 2 || f_source.shape()[1] != mlp.in_dim()) {
      throw DimensionError("mapping head " + std::to_string(source) + "->" + std::to_string(target) +
                           " expects B x " + std::to_string(mlp.in_dim()) + ", got " + shape_str(f_source.shape()));
    }
    return mlp.forward(tape, f_source);
  }

  template <class F>
  void for_each_param(F&& f) {
    mlp.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    mlp.for_each_param(f);
  }
};

/// Deterministic stand-in for a frozen language model: the bytes of
/// prefix + label key a counter-based stream of standard normals, which is
/// then L2-normalized.
struct FrozenTextEmbedder {
  std::vector<std::string> vocabulary;
  std::string prefix = "A video of a driver ";
  std::size_t dim = 64;
  std::uint64_t seed = 0;

  std::size_t index_of(const std::string& label) const {
    for (std::size_t i = 0; i < vocabulary.size(); ++i)
      if (vocabulary[i] == label) return i;
    throw ConfigError("unknown label '" + label + "'");
  }

  Tensor embed(const std::string& label) const {
    index_of(label);
    const std::string text = prefix + label;
    CounterRng rng(derive_key(seed, {fnv1a64(text)}));
    Tensor v({dim});
    double s = 0.0;
    for (double& x : v.data()) {
      x = rng.normal();
      s += x * x;
    }
    const double norm = std::sqrt(s);
    for (double& x : v.data()) x /= norm;
    return v;
  }

  /// One embedded label per row, in vocabulary order.
  Tensor matrix() const {
    Tensor m({vocabulary.size(), dim});
    for (std::size_t c = 0; c < vocabulary.size(); ++c) {
      Tensor v = embed(vocabulary[c]);
      for (std::size_t j = 0; j < dim; ++j) m.at(c, j) = v[j];
    }
    return m;
  }
};

struct StageDims {
  std::size_t obs_dim = 32;
  std::size_t frames = 4;
  std::size_t encoder_hidden = 64;
  std::size_t feature_dim = 64;
  std::size_t head_hidden = 64;
  std::size_t unified_dim = 16;
  Activation encoder_activation = Activation::tanh;
  Activation head_activation = Activation::tanh;

  static StageDims from(const ModelConfig& m, std::size_t obs_dim) {
    return {obs_dim, m.frames, m.encoder_hidden, m.feature_dim, m.head_hidden, m.unified_dim,
            m.encoder_activation, m.head_activation};
  }

  std::size_t parameter_count() const {
    return obs_dim * encoder_hidden + encoder_hidden + encoder_hidden * feature_dim + feature_dim +
           feature_dim * head_hidden + head_hidden + head_hidden * unified_dim + unified_dim;
  }
};

/// One modality's encoder and projection head.
struct EncoderStage {
  int modality_id = 0;
  ModalityEncoder encoder;
  ProjectionHead head;

  /// B x T x d_obs -> B x d_unified
  Var embed(Tape& tape, Var batch) { return head.project(tape, encoder.encode(tape, batch)); }

  void set_frozen(bool frozen) {
    for_each_param([frozen](Parameter& p) { p.frozen = frozen; });
  }
  bool frozen() const {
    bool all = true;
    for_each_param([&all](const Parameter& p) { all = all && p.frozen; });
    return all;
  }

  template <class F>
  void for_each_param(F&& f) {
    encoder.for_each_param(f);
    head.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    encoder.for_each_param(f);
    head.for_each_param(f);
  }
};

namespace stream {
inline constexpr std::uint64_t kStage = 1;
inline constexpr std::uint64_t kTextHead = 2;
inline constexpr std::uint64_t kMapping = 3;
}  // namespace stream

inline EncoderStage init_stage(int modality_id, const StageDims& dims, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {stream::kStage, static_cast<std::uint64_t>(modality_id)}));
  const std::string id = std::to_string(modality_id);
  EncoderStage s;
  s.modality_id = modality_id;
  s.encoder.modality_id = modality_id;
  s.encoder.frames = dims.frames;
  s.encoder.mlp = make_mlp("encoder/" + id, dims.obs_dim, dims.encoder_hidden, dims.feature_dim,
                           dims.encoder_activation, rng);
  s.head.mlp =
      make_mlp("head/" + id, dims.feature_dim, dims.head_hidden, dims.unified_dim, dims.head_activation, rng);
  return s;
}

inline ProjectionHead init_text_head(const ModelConfig& m, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {stream::kTextHead}));
  return ProjectionHead{make_mlp("text_head", m.text_dim, m.head_hidden, m.unified_dim, m.head_activation, rng)};
}

inline MappingHead init_mapping_head(int source, int target, std::size_t source_dim, std::size_t target_dim,
                                     const ModelConfig& m, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {stream::kMapping, static_cast<std::uint64_t>(source),
                                   static_cast<std::uint64_t>(target)}));
  const std::string prefix = "mapping/" + std::to_string(source) + "-" + std::to_string(target);
  return MappingHead{source, target,
                     make_mlp(prefix, source_dim, m.mapping_hidden, target_dim, m.head_activation, rng)};
}

/// Completed stages, their mapping heads and the text pipeline of one continual run.
struct ContinualState {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::vector<int> modality_order;
  std::map<int, std::size_t> obs_dims;
  FrozenTextEmbedder text;
  ProjectionHead text_head;
  std::vector<EncoderStage> stages;
  std::map<std::pair<int, int>, MappingHead> mapping_heads;

  std::size_t completed() const noexcept { return stages.size(); }

  bool has_modality(int modality) const {
    for (const auto& s : stages)
      if (s.modality_id == modality) return true;
    return false;
  }

  const EncoderStage& stage_for(int modality) const {
    for (const auto& s : stages)
      if (s.modality_id == modality) return s;
    throw ConfigError("modality " + std::to_string(modality) + " has no completed stage");
  }
  EncoderStage& stage_for(int modality) {
    return const_cast<EncoderStage&>(std::as_const(*this).stage_for(modality));
  }

  /// Modalities whose features prompt stage `stage_index`: all earlier stages.
  std::vector<int> prompt_sources(std::size_t stage_index) const {
    if (stage_index > modality_order.size()) throw ConfigError("stage index beyond modality order");
    return {modality_order.begin(), modality_order.begin() + static_cast<std::ptrdiff_t>(stage_index)};
  }

  StageDims dims_for(int modality) const {
    auto it = obs_dims.find(modality);
    if (it == obs_dims.end()) throw ConfigError("no observation dimension for modality " + std::to_string(modality));
    return StageDims::from(model, it->second);
  }

  template <class F>
  void for_each_param(F&& f) {
    text_head.for_each_param(f);
    for (auto& s : stages) s.for_each_param(f);
    for (auto& [k, h] : mapping_heads) h.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    text_head.for_each_param(f);
    for (const auto& s : stages) s.for_each_param(f);
    for (const auto& [k, h] : mapping_heads) h.for_each_param(f);
  }
};

inline ContinualState make_state(const ModelConfig& model, std::vector<int> modality_order,
                                 std::map<int, std::size_t> obs_dims, std::vector<std::string> vocabulary,
                                 std::uint64_t seed) {
  if (modality_order.empty()) throw ConfigError("modality order is empty");
  ContinualState st;
  st.model = model;
  st.seed = seed;
  st.modality_order = std::move(modality_order);
  st.obs_dims = std::move(obs_dims);
  st.text = FrozenTextEmbedder{std::move(vocabulary), model.text_prefix, model.text_dim, model.text_seed};
  st.text_head = init_text_head(model, seed);
  return st;
}

}  // namespace cm2
