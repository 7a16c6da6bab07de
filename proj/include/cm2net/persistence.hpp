#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cm2net/config.hpp"
#include "cm2net/container.hpp"
#include "cm2net/model.hpp"
#include "cm2net/synthetic.hpp"
#include "cm2net/trainer.hpp"

namespace cm2 {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

inline std::string sample_tensor_name(std::size_t idx, int modality) {
  return "sample/" + std::to_string(idx) + "/m" + std::to_string(modality);
}

inline Container dataset_container(const SyntheticDataset& ds) {
  json channels = json::array();
  for (const auto& ch : ds.channels) channels.push_back({{"modality", ch.modality_id}, {"params", ch.params}});
  const json cfg{{"kind", "dataset"},       {"latent", ds.spec},        {"channels", channels},
                 {"per_class", ds.per_class}, {"seed", ds.seed},        {"fractions", ds.fractions},
                 {"class_names", ds.class_names}};
  Container c;
  for (const auto& ch : ds.channels) c.meta.modality_order.push_back(static_cast<std::uint32_t>(ch.modality_id));
  c.meta.config_text = cfg.dump();
  c.meta.config_hash = fnv1a64(c.meta.config_text);
  c.tensors.push_back({"latent/class_means", ds.means});
  for (const auto& ch : ds.channels) {
    const std::string p = "channel/" + std::to_string(ch.modality_id);
    c.tensors.push_back({p + "/matrix", ch.matrix});
    c.tensors.push_back({p + "/bias", ch.bias});
  }
  Tensor labels({ds.samples.size()});
  Tensor splits({ds.samples.size()});
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    labels[i] = static_cast<double>(ds.samples[i].label);
    splits[i] = static_cast<double>(static_cast<int>(ds.samples[i].split));
    for (std::size_t k = 0; k < ds.channels.size(); ++k) {
      c.tensors.push_back({sample_tensor_name(i, ds.channels[k].modality_id), ds.samples[i].obs[k]});
    }
  }
  c.tensors.push_back({"labels", std::move(labels)});
  c.tensors.push_back({"splits", std::move(splits)});
  return c;
}

inline SyntheticDataset dataset_from_container(const Container& c) {
  json cfg;
  try {
    cfg = json::parse(c.meta.config_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset metadata is not valid JSON: ") + e.what());
  }
  if (cfg.value("kind", "") != "dataset") throw FormatError("container does not hold a dataset");
  SyntheticDataset ds;
  cfg.at("latent").get_to(ds.spec);
  cfg.at("per_class").get_to(ds.per_class);
  cfg.at("seed").get_to(ds.seed);
  cfg.at("fractions").get_to(ds.fractions);
  cfg.at("class_names").get_to(ds.class_names);
  ds.means = c.get("latent/class_means");
  for (const auto& entry : cfg.at("channels")) {
    ModalityChannel ch;
    ch.modality_id = entry.at("modality").get<int>();
    entry.at("params").get_to(ch.params);
    const std::string p = "channel/" + std::to_string(ch.modality_id);
    ch.matrix = c.get(p + "/matrix");
    ch.bias = c.get(p + "/bias");
    ds.channels.push_back(std::move(ch));
  }
  const Tensor& labels = c.get("labels");
  const Tensor& splits = c.get("splits");
  if (labels.size() != splits.size()) throw FormatError("labels and splits differ in length");
  ds.samples.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Sample& s = ds.samples[i];
    s.label = static_cast<std::size_t>(labels[i]);
    if (s.label >= ds.spec.classes) throw FormatError("label out of range in sample " + std::to_string(i));
    const int sp = static_cast<int>(splits[i]);
    if (sp < 0 || sp > 2) throw FormatError("bad split tag in sample " + std::to_string(i));
    s.split = static_cast<Split>(sp);
    for (const auto& ch : ds.channels) {
      const Tensor& t = c.get(sample_tensor_name(i, ch.modality_id));
      if (t.shape() != Shape{ds.spec.frames, ch.params.obs_dim}) {
        throw FormatError("sample " + std::to_string(i) + " has shape " + shape_str(t.shape()));
      }
      s.obs.push_back(t);
    }
  }
  return ds;
}

inline void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& path) {
  write_container(path, dataset_container(ds));
}

inline SyntheticDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_container(read_container(path));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// `run` is the resolved run configuration, embedded for provenance.
inline Container checkpoint_container(const ContinualState& st, const TrainConfig& train, const json& run = {}) {
  json obs = json::array();
  for (const auto& [m, d] : st.obs_dims) obs.push_back({m, d});
  json cfg{{"kind", "checkpoint"}, {"model", st.model},          {"train", train}, {"obs_dims", obs},
           {"vocabulary", st.text.vocabulary}, {"seed", st.seed}};
  if (!run.is_null()) cfg["run"] = run;
  Container c;
  for (int m : st.modality_order) c.meta.modality_order.push_back(static_cast<std::uint32_t>(m));
  c.meta.completed_stages = static_cast<std::uint32_t>(st.completed());
  c.meta.config_hash = config_hash(st.model, train);
  c.meta.config_text = cfg.dump();
  st.for_each_param([&c](const Parameter& p) { c.tensors.push_back({p.name, p.value}); });
  return c;
}

struct LoadedCheckpoint {
  ContinualState state;
  TrainConfig train;
  ContainerMeta meta;
};

inline LoadedCheckpoint checkpoint_from_container(const Container& c) {
  json cfg;
  try {
    cfg = json::parse(c.meta.config_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (cfg.value("kind", "") != "checkpoint") throw FormatError("container does not hold a checkpoint");
  LoadedCheckpoint out;
  out.meta = c.meta;
  ModelConfig model;
  cfg.at("model").get_to(model);
  cfg.at("train").get_to(out.train);
  if (config_hash(model, out.train) != c.meta.config_hash) {
    throw FormatError("checkpoint config hash does not match its embedded configuration");
  }
  std::vector<int> order(c.meta.modality_order.begin(), c.meta.modality_order.end());
  std::map<int, std::size_t> obs_dims;
  for (const auto& e : cfg.at("obs_dims")) obs_dims[e.at(0).get<int>()] = e.at(1).get<std::size_t>();
  if (c.meta.completed_stages > order.size()) throw FormatError("completed stage count exceeds modality order");

  ContinualState st = make_state(model, order, obs_dims, cfg.at("vocabulary").get<std::vector<std::string>>(),
                                 cfg.at("seed").get<std::uint64_t>());
  for (std::size_t k = 0; k < c.meta.completed_stages; ++k) {
    const int m = order[k];
    st.stages.push_back(init_stage(m, st.dims_for(m), st.seed));
    for (std::size_t i = 0; i < k; ++i) {
      const int src = order[i];
      st.mapping_heads.emplace(std::pair{src, m},
                               init_mapping_head(src, m, st.stage_for(src).encoder.feature_dim(),
                                                 st.stages.back().encoder.feature_dim(), model, st.seed));
    }
  }
  std::size_t expected = 0;
  st.for_each_param([&](Parameter& p) {
    const Tensor& t = c.get(p.name);
    if (t.shape() != p.value.shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(p.value.shape()));
    }
    p.value = t;
    p.zero_grad();
    ++expected;
  });
  if (expected != c.tensors.size()) throw FormatError("checkpoint holds unexpected tensors");
  const bool any = c.meta.completed_stages > 0;
  st.text_head.for_each_param([any](Parameter& p) { p.frozen = any; });
  for (auto& s : st.stages) s.set_frozen(true);
  for (auto& [k, h] : st.mapping_heads) h.for_each_param([](Parameter& p) { p.frozen = true; });
  out.state = std::move(st);
  return out;
}

inline void save_checkpoint(const ContinualState& st, const TrainConfig& train, const std::filesystem::path& path,
                            const json& run = {}) {
  write_container(path, checkpoint_container(st, train, run));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_container(read_container(path));
}

/// Hash over names and raw bytes of the given parameters.
template <class Component>
std::uint64_t parameter_fingerprint(const Component& c) {
  std::string bytes;
  c.for_each_param([&bytes](const Parameter& p) {
    bytes += p.name;
    bytes.push_back('\0');
    for (double v : p.value.data()) {
      const auto u = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
    }
  });
  return fnv1a64(bytes);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMetricsHeader =
    "stage,epoch,lr,loss_total,loss_cls,loss_text,loss_prompt,val_top1,val_mean1";

inline std::string metrics_row(const EpochRecord& r) {
  return std::to_string(r.stage) + ',' + std::to_string(r.epoch) + ',' + format_double(r.lr) + ',' +
         format_double(r.loss_total) + ',' + format_double(r.loss_cls) + ',' + format_double(r.loss_text) + ',' +
         format_double(r.loss_prompt) + ',' + format_double(r.val_top1) + ',' + format_double(r.val_mean1);
}

/// Appends rows, creating the file with its header when absent.
inline void append_metrics(const std::filesystem::path& path, const std::vector<EpochRecord>& rows) {
  std::string text;
  if (std::filesystem::exists(path)) {
    text = read_file(path);
  } else {
    text = std::string(kMetricsHeader) + '\n';
  }
  for (const auto& r : rows) text += metrics_row(r) + '\n';
  write_file_atomic(path, text);
}

}  // namespace cm2
