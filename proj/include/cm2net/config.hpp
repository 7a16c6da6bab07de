#pragma once

// JSON form of every configuration struct. Reading only overrides keys that
// are present, so a partial document layers on top of defaults.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cm2net/model.hpp"
#include "cm2net/rng.hpp"
#include "cm2net/synthetic.hpp"
#include "cm2net/trainer.hpp"

namespace cm2 {

using json = nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::tanh, "tanh"},
                                          {Activation::relu, "relu"},
                                          {Activation::identity, "identity"}})

namespace detail {
template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}
}  // namespace detail

inline void to_json(json& j, const ModelConfig& m) {
  j = json{{"frames", m.frames},
           {"encoder_hidden", m.encoder_hidden},
           {"feature_dim", m.feature_dim},
           {"text_dim", m.text_dim},
           {"head_hidden", m.head_hidden},
           {"unified_dim", m.unified_dim},
           {"mapping_hidden", m.mapping_hidden},
           {"encoder_activation", m.encoder_activation},
           {"head_activation", m.head_activation},
           {"text_prefix", m.text_prefix},
           {"text_seed", m.text_seed}};
}

inline void from_json(const json& j, ModelConfig& m) {
  detail::read_if(j, "frames", m.frames);
  detail::read_if(j, "encoder_hidden", m.encoder_hidden);
  detail::read_if(j, "feature_dim", m.feature_dim);
  detail::read_if(j, "text_dim", m.text_dim);
  detail::read_if(j, "head_hidden", m.head_hidden);
  detail::read_if(j, "unified_dim", m.unified_dim);
  detail::read_if(j, "mapping_hidden", m.mapping_hidden);
  detail::read_if(j, "encoder_activation", m.encoder_activation);
  detail::read_if(j, "head_activation", m.head_activation);
  detail::read_if(j, "text_prefix", m.text_prefix);
  detail::read_if(j, "text_seed", m.text_seed);
}

inline void to_json(json& j, const LossWeights& w) {
  j = json{{"lambda", w.lambda}, {"epsilon", w.epsilon}, {"omega", w.omega}, {"tau", w.tau}, {"tau_cls", w.tau_cls}};
}

inline void from_json(const json& j, LossWeights& w) {
  detail::read_if(j, "lambda", w.lambda);
  detail::read_if(j, "epsilon", w.epsilon);
  detail::read_if(j, "omega", w.omega);
  detail::read_if(j, "tau", w.tau);
  detail::read_if(j, "tau_cls", w.tau_cls);
}

inline void to_json(json& j, const AdamWConfig& a) {
  j = json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

inline void from_json(const json& j, AdamWConfig& a) {
  detail::read_if(j, "beta1", a.beta1);
  detail::read_if(j, "beta2", a.beta2);
  detail::read_if(j, "eps", a.eps);
  detail::read_if(j, "weight_decay", a.weight_decay);
}

inline void to_json(json& j, const TrainConfig& t) {
  j = json{{"weights", t.weights},
           {"lr", t.lr},
           {"epochs", t.epochs},
           {"batch_size", t.batch_size},
           {"adamw", t.adamw},
           {"modality_order", t.modality_order},
           {"seed", t.seed},
           {"cache_prompt_features", t.cache_prompt_features}};
}

inline void from_json(const json& j, TrainConfig& t) {
  detail::read_if(j, "weights", t.weights);
  detail::read_if(j, "lr", t.lr);
  detail::read_if(j, "epochs", t.epochs);
  detail::read_if(j, "batch_size", t.batch_size);
  detail::read_if(j, "adamw", t.adamw);
  detail::read_if(j, "modality_order", t.modality_order);
  detail::read_if(j, "seed", t.seed);
  detail::read_if(j, "cache_prompt_features", t.cache_prompt_features);
}

inline void to_json(json& j, const LatentActionSpec& s) {
  j = json{{"classes", s.classes},
           {"latent_dim", s.latent_dim},
           {"separation", s.separation},
           {"within_class_noise", s.within_class_noise},
           {"frames", s.frames}};
}

inline void from_json(const json& j, LatentActionSpec& s) {
  detail::read_if(j, "classes", s.classes);
  detail::read_if(j, "latent_dim", s.latent_dim);
  detail::read_if(j, "separation", s.separation);
  detail::read_if(j, "within_class_noise", s.within_class_noise);
  detail::read_if(j, "frames", s.frames);
}

inline void to_json(json& j, const ChannelParams& p) {
  j = json{{"obs_dim", p.obs_dim}, {"rank", p.rank},   {"noise", p.noise},
           {"nonlinear", p.nonlinear}, {"gain", p.gain}, {"bias_scale", p.bias_scale}};
}

inline void from_json(const json& j, ChannelParams& p) {
  detail::read_if(j, "obs_dim", p.obs_dim);
  detail::read_if(j, "rank", p.rank);
  detail::read_if(j, "noise", p.noise);
  detail::read_if(j, "nonlinear", p.nonlinear);
  detail::read_if(j, "gain", p.gain);
  detail::read_if(j, "bias_scale", p.bias_scale);
}

inline void to_json(json& j, const SplitFractions& f) { j = json{{"train", f.train}, {"val", f.val}}; }

inline void from_json(const json& j, SplitFractions& f) {
  detail::read_if(j, "train", f.train);
  detail::read_if(j, "val", f.val);
}

/// Benchmark generation settings.
struct DataConfig {
  LatentActionSpec latent;
  std::size_t per_class = 200;
  std::size_t obs_dim = 32;
  /// Degradation preset of modality i.
  std::vector<std::string> presets{"high_fidelity", "mid", "degraded"};
  /// Zero observation noise on every channel.
  bool noise_free = false;
  SplitFractions fractions;
  std::uint64_t seed = 0;

  std::vector<ChannelParams> channel_params() const {
    std::vector<ChannelParams> out;
    for (const auto& name : presets) {
      ChannelParams p = degradation_preset(name, latent.latent_dim, obs_dim);
      if (noise_free) p.noise = 0.0;
      out.push_back(p);
    }
    return out;
  }
};

inline void to_json(json& j, const DataConfig& d) {
  j = json{{"latent", d.latent}, {"per_class", d.per_class},   {"obs_dim", d.obs_dim}, {"presets", d.presets},
           {"noise_free", d.noise_free}, {"fractions", d.fractions}, {"seed", d.seed}};
}

inline void from_json(const json& j, DataConfig& d) {
  detail::read_if(j, "latent", d.latent);
  detail::read_if(j, "per_class", d.per_class);
  detail::read_if(j, "obs_dim", d.obs_dim);
  detail::read_if(j, "presets", d.presets);
  detail::read_if(j, "noise_free", d.noise_free);
  detail::read_if(j, "fractions", d.fractions);
  detail::read_if(j, "seed", d.seed);
}

inline SyntheticDataset generate(const DataConfig& d) {
  std::vector<ModalityChannel> channels;
  const auto params = d.channel_params();
  for (std::size_t m = 0; m < params.size(); ++m) {
    channels.push_back(make_channel(static_cast<int>(m), params[m], d.latent.latent_dim, d.seed));
  }
  return gen_dataset(d.latent, std::move(channels), d.per_class, d.seed, d.fractions);
}

/// Everything a training run depends on.
struct RunConfig {
  std::string dims = "desk";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

inline ModelConfig dims_preset(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper();
  throw ConfigError("unknown dimension preset '" + name + "'");
}

inline void to_json(json& j, const RunConfig& r) {
  j = json{{"dims", r.dims}, {"model", r.model}, {"train", r.train}, {"data", r.data}};
}

/// A "dims" key resets the model section to that preset before "model" overrides apply.
inline void from_json(const json& j, RunConfig& r) {
  if (auto it = j.find("dims"); it != j.end()) {
    r.dims = it->get<std::string>();
    r.model = dims_preset(r.dims);
  }
  detail::read_if(j, "model", r.model);
  detail::read_if(j, "train", r.train);
  detail::read_if(j, "data", r.data);
}

/// Canonical text (sorted keys, compact) of the parts that determine trained weights.
inline std::string training_config_text(const ModelConfig& model, const TrainConfig& train) {
  return json{{"model", model}, {"train", train}}.dump();
}

inline std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train) {
  return fnv1a64(training_config_text(model, train));
}

}  // namespace cm2
