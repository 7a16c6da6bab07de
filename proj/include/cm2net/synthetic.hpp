#pragma once

// Synthetic multi-modal action benchmark. A latent action trajectory per
// sample is observed through several lossy channels
//   x_t = nonlin(A z_t + b) + sigma * noise,
// one per modality, with A of configurable rank.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cm2net/error.hpp"
#include "cm2net/rng.hpp"
#include "cm2net/tensor.hpp"

namespace cm2 {

struct LatentActionSpec {
  std::size_t classes = 10;
  std::size_t latent_dim = 32;
  double separation = 3.0;
  double within_class_noise = 0.5;
  std::size_t frames = 4;
};

struct ChannelParams {
  std::size_t obs_dim = 32;
  std::size_t rank = 32;
  double noise = 0.1;
  bool nonlinear = false;
  /// Multiplies A; with the default normalization A z has roughly the scale of z.
  double gain = 1.0;
  double bias_scale = 0.5;
};

struct ModalityChannel {
  int modality_id = 0;
  ChannelParams params;
  Tensor matrix;  // obs_dim x latent_dim
  Tensor bias;    // obs_dim
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

namespace stream {
inline constexpr std::uint64_t kClassMeans = 11;
inline constexpr std::uint64_t kChannel = 12;
inline constexpr std::uint64_t kLatent = 13;
inline constexpr std::uint64_t kObserve = 14;
}  // namespace stream

/// high_fidelity: full rank, sigma 0.1. mid: rank 3/4, sigma 0.3.
/// degraded: rank 1/2, sigma 0.6, tanh.
inline ChannelParams degradation_preset(std::string_view name, std::size_t latent_dim, std::size_t obs_dim) {
  ChannelParams p;
  p.obs_dim = obs_dim;
  const std::size_t full = std::min(latent_dim, obs_dim);
  if (name == "high_fidelity") {
    p.rank = full;
    p.noise = 0.1;
  } else if (name == "mid") {
    p.rank = std::max<std::size_t>(1, std::min(full, 3 * latent_dim / 4));
    p.noise = 0.3;
  } else if (name == "degraded") {
    p.rank = std::max<std::size_t>(1, std::min(full, latent_dim / 2));
    p.noise = 0.6;
    p.nonlinear = true;
  } else {
    throw ConfigError("unknown degradation preset '" + std::string(name) + "'");
  }
  return p;
}

inline Tensor gaussian_matrix(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Tensor m({rows, cols});
  for (double& v : m.data()) v = rng.normal();
  return m;
}

/// A = G1 G2 * gain / sqrt(rank * latent_dim) with Gaussian factors G1 (obs x r), G2 (r x latent).
inline ModalityChannel make_channel(int modality_id, const ChannelParams& params, std::size_t latent_dim,
                                    std::uint64_t seed) {
  if (params.rank == 0 || params.rank > std::min(params.obs_dim, latent_dim)) {
    throw ConfigError("channel rank " + std::to_string(params.rank) + " invalid for " +
                      std::to_string(params.obs_dim) + "x" + std::to_string(latent_dim));
  }
  CounterRng rng(derive_key(seed, {stream::kChannel, static_cast<std::uint64_t>(modality_id)}));
  const Tensor left = gaussian_matrix(params.obs_dim, params.rank, rng);
  const Tensor right = gaussian_matrix(params.rank, latent_dim, rng);
  Tensor a = kernels::matmul(left, right);
  const double norm = params.gain / std::sqrt(static_cast<double>(params.rank * latent_dim));
  for (double& v : a.data()) v *= norm;
  Tensor b({params.obs_dim});
  for (double& v : b.data()) v = params.bias_scale * rng.normal();
  return ModalityChannel{modality_id, params, std::move(a), std::move(b)};
}

/// C x d_latent, rows drawn from separation * N(0, I).
inline Tensor class_means(const LatentActionSpec& spec, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {stream::kClassMeans}));
  Tensor m({spec.classes, spec.latent_dim});
  for (double& v : m.data()) v = spec.separation * rng.normal();
  return m;
}

/// T x d_latent trajectory: class mean plus independent per-frame noise.
inline Tensor gen_latent(const LatentActionSpec& spec, const Tensor& means, std::size_t class_idx, CounterRng& rng) {
  if (class_idx >= spec.classes) throw ConfigError("class index " + std::to_string(class_idx) + " out of range");
  Tensor z({spec.frames, spec.latent_dim});
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t j = 0; j < spec.latent_dim; ++j)
      z.at(t, j) = means.at(class_idx, j) + spec.within_class_noise * rng.normal();
  return z;
}

/// T x d_obs observation of a latent trajectory through one channel.
inline Tensor observe(const ModalityChannel& ch, const Tensor& latent, CounterRng& rng) {
  const std::size_t frames = latent.rows();
  const std::size_t obs = ch.params.obs_dim;
  if (latent.cols() != ch.matrix.cols()) {
    throw DimensionError("observe: latent " + shape_str(latent.shape()) + " vs channel " + shape_str(ch.matrix.shape()));
  }
  Tensor x = kernels::matmul(latent, kernels::transpose(ch.matrix));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < obs; ++j) {
      double v = x.at(t, j) + ch.bias[j];
      if (ch.params.nonlinear) v = std::tanh(v);
      if (ch.params.noise > 0.0) v += ch.params.noise * rng.normal();
      x.at(t, j) = v;
    }
  }
  return x;
}

inline std::vector<std::string> default_class_names(std::size_t classes) {
  static const char* const kNames[] = {
      "eating",         "drinking",          "talking on phone",     "reading magazine",  "writing",
      "fastening seat belt", "opening bottle", "closing bottle",  "putting on jacket", "taking off jacket",
      "adjusting mirror", "looking back",     "interacting with phone", "using multimedia display",
      "preparing food", "opening laptop",    "closing laptop",       "working on laptop", "reading newspaper",
      "putting on sunglasses", "taking off sunglasses", "unfastening seat belt", "fetching an object",
      "placing an object", "pressing automation button", "opening door outside", "closing door outside",
      "opening door inside", "closing door inside", "entering car", "exiting car", "sitting still",
      "putting laptop into backpack", "taking laptop from backpack"};
  constexpr std::size_t kCount = sizeof(kNames) / sizeof(kNames[0]);
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) {
    out.push_back(c < kCount ? std::string(kNames[c]) : "action " + std::to_string(c));
  }
  return out;
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
};

struct Sample {
  /// One T x d_obs tensor per channel, in channel order.
  std::vector<Tensor> obs;
  std::size_t label = 0;
  Split split = Split::train;
};

struct SyntheticDataset {
  LatentActionSpec spec;
  std::vector<ModalityChannel> channels;
  Tensor means;
  std::vector<std::string> class_names;
  std::size_t per_class = 0;
  std::uint64_t seed = 0;
  SplitFractions fractions;
  std::vector<Sample> samples;

  std::size_t channel_index(int modality) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
      if (channels[i].modality_id == modality) return i;
    throw ConfigError("dataset has no modality " + std::to_string(modality));
  }

  bool has_modality(int modality) const {
    for (const auto& c : channels)
      if (c.modality_id == modality) return true;
    return false;
  }

  std::map<int, std::size_t> obs_dims() const {
    std::map<int, std::size_t> out;
    for (const auto& c : channels) out[c.modality_id] = c.params.obs_dim;
    return out;
  }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == split) out.push_back(i);
    return out;
  }

  /// B x T x d_obs batch of one modality for the given samples.
  Tensor batch(const std::vector<std::size_t>& idx, int modality) const {
    const std::size_t ci = channel_index(modality);
    const std::size_t t = spec.frames, d = channels[ci].params.obs_dim;
    Tensor out({idx.size(), t, d});
    auto dst = out.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto src = samples.at(idx[b]).obs[ci].data();
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * t * d));
    }
    return out;
  }

  std::vector<std::size_t> labels(const std::vector<std::size_t>& idx) const {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(samples.at(i).label);
    return out;
  }
};

/// Per-class split sizes (train, val, test) for n samples.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val));
  if (train + val >= n) return {train, val, 0};
  return {train, val, n - train - val};
}

/// Balanced, paired dataset: every sample carries all modalities observed from
/// one latent trajectory. Samples are ordered class-major; within a class the
/// first entries are train, then val, then test.
inline SyntheticDataset gen_dataset(const LatentActionSpec& spec, std::vector<ModalityChannel> channels,
                                    std::size_t n_per_class, std::uint64_t seed, SplitFractions fractions = {}) {
  if (spec.classes < 2) throw ConfigError("need at least 2 classes");
  if (channels.empty()) throw ConfigError("need at least one modality channel");
  const auto counts = split_counts(n_per_class, fractions);
  for (std::size_t c : counts) {
    if (c < 2) {
      throw ConfigError("split sizes " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                        std::to_string(counts[2]) + " per class: each split needs at least 2 samples per class");
    }
  }
  SyntheticDataset ds;
  ds.spec = spec;
  ds.channels = std::move(channels);
  ds.means = class_means(spec, seed);
  ds.class_names = default_class_names(spec.classes);
  ds.per_class = n_per_class;
  ds.seed = seed;
  ds.fractions = fractions;
  ds.samples.reserve(spec.classes * n_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::uint64_t idx = ds.samples.size();
      Sample s;
      s.label = c;
      s.split = k < counts[0] ? Split::train : (k < counts[0] + counts[1] ? Split::val : Split::test);
      CounterRng latent_rng(derive_key(seed, {stream::kLatent, idx}));
      const Tensor z = gen_latent(spec, ds.means, c, latent_rng);
      for (const auto& ch : ds.channels) {
        CounterRng obs_rng(derive_key(seed, {stream::kObserve, idx, static_cast<std::uint64_t>(ch.modality_id)}));
        s.obs.push_back(observe(ch, z, obs_rng));
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace cm2
