#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using namespace cm2;
namespace fs = std::filesystem;

template <class T>
void set_if(const std::optional<T>& v, T& dst) {
  if (v) dst = *v;
}

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out = ".";
  std::size_t threads = 1;
};

struct DataFlags {
  std::optional<std::size_t> classes, per_class, latent_dim, obs_dim, frames;
  std::optional<std::string> preset[3];
  bool noise_free = false;
};

struct ModelFlags {
  std::optional<std::string> dims;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, lambda, epsilon, tau, tau_cls, weight_decay;
  std::optional<std::vector<double>> omega;
  std::optional<std::vector<int>> order;
  bool cache = false;
};

void add_model_flags(CLI::App* sub, ModelFlags& f) {
  sub->add_option("--dims", f.dims, "dimension preset")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--epochs", f.epochs, "epochs per stage")->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", f.batch_size, "batch size");
  sub->add_option("--lr", f.lr, "initial learning rate");
  sub->add_option("--lambda", f.lambda, "weight of the label-text loss");
  sub->add_option("--epsilon", f.epsilon, "weight of the prompt loss");
  sub->add_option("--omega", f.omega, "per-source prompt weights")->delimiter(',');
  sub->add_option("--tau", f.tau, "contrastive temperature");
  sub->add_option("--tau-cls", f.tau_cls, "classification temperature");
  sub->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
  sub->add_option("--order", f.order, "modality training order")->delimiter(',');
  sub->add_flag("--cache-prompt-features", f.cache, "precompute frozen source features once per stage");
}

RunConfig resolve(const Globals& g, const ModelFlags& m) {
  RunConfig rc = cli::load_run_config(g.config);
  if (m.dims) {
    rc.dims = *m.dims;
    rc.model = dims_preset(*m.dims);
  }
  if (g.seed) {
    rc.train.seed = *g.seed;
    rc.data.seed = *g.seed;
  }
  set_if(m.epochs, rc.train.epochs);
  set_if(m.batch_size, rc.train.batch_size);
  set_if(m.lr, rc.train.lr);
  set_if(m.lambda, rc.train.weights.lambda);
  set_if(m.epsilon, rc.train.weights.epsilon);
  set_if(m.tau, rc.train.weights.tau);
  set_if(m.tau_cls, rc.train.weights.tau_cls);
  set_if(m.weight_decay, rc.train.adamw.weight_decay);
  set_if(m.omega, rc.train.weights.omega);
  set_if(m.order, rc.train.modality_order);
  if (m.cache) rc.train.cache_prompt_features = true;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_st("cm2");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(cli::log_level_from_env());

  CLI::App app{"Continual cross-modal training on a synthetic multi-modal benchmark"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "seed for data generation and training");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads (kernels are single-threaded)")->check(CLI::PositiveNumber);

  DataFlags df;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--classes", df.classes, "number of classes")->check(CLI::Range(2, 100000));
  gen->add_option("--per-class", df.per_class, "samples per class");
  gen->add_option("--latent-dim", df.latent_dim, "latent dimension");
  gen->add_option("--obs-dim", df.obs_dim, "observation dimension of every modality");
  gen->add_option("--frames", df.frames, "frames per sample");
  const std::vector<std::string> presets{"high_fidelity", "mid", "degraded"};
  for (int m = 0; m < 3; ++m) {
    gen->add_option("--preset-m" + std::to_string(m), df.preset[m], "degradation preset of modality " + std::to_string(m))
        ->check(CLI::IsMember(presets));
  }
  gen->add_flag("--noise-free", df.noise_free, "zero observation noise");

  ModelFlags train_flags;
  cli::TrainOptions topt;
  std::optional<fs::path> resume;
  auto* train = app.add_subcommand("train", "train stages in order");
  train->add_option("--data", topt.data, "dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--stages", topt.stages, "number of stages completed at exit (default: all)");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  add_model_flags(train, train_flags);

  ModelFlags eval_flags;
  cli::EvalOptions eopt;
  std::optional<fs::path> eval_ckpt;
  std::string eval_split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--data", eopt.data, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_flag("--init-only", eopt.init_only, "evaluate untrained stages");
  add_model_flags(eval, eval_flags);

  bool inject_fault = false;
  auto* gc = app.add_subcommand("gradcheck", "compare autodiff gradients with finite differences");
  gc->add_flag("--inject-fault", inject_fault, "add an op with a wrong backward rule");

  cli::ExportOptions xopt;
  std::optional<std::string> export_split;
  std::optional<fs::path> export_file;
  auto* exp = app.add_subcommand("export-features", "write encoder features as CSV");
  exp->add_option("--data", xopt.data, "dataset file")->required()->check(CLI::ExistingFile);
  exp->add_option("--checkpoint", xopt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  exp->add_option("--modality", xopt.modality, "modality id");
  exp->add_option("--split", export_split, "restrict to one split")->check(CLI::IsMember({"train", "val", "test"}));
  exp->add_option("--file", export_file, "output file (default: <out>/features_m<id>.csv)");

  CLI11_PARSE(app, argc, argv);
  if (g.threads != 1) spdlog::info("--threads {}: kernels run on one thread", g.threads);

  try {
    if (*gen) {
      RunConfig rc = resolve(g, {});
      DataConfig& d = rc.data;
      set_if(df.classes, d.latent.classes);
      set_if(df.per_class, d.per_class);
      set_if(df.latent_dim, d.latent.latent_dim);
      set_if(df.obs_dim, d.obs_dim);
      set_if(df.frames, d.latent.frames);
      for (std::size_t m = 0; m < 3 && m < d.presets.size(); ++m) set_if(df.preset[m], d.presets[m]);
      if (df.noise_free) d.noise_free = true;
      const auto r = cli::cmd_gen_data(d, g.out);
      std::printf("%s %s\n", hex64(r.content_hash).c_str(), r.path.string().c_str());
    } else if (*train) {
      topt.resume = resume;
      cli::cmd_train(resolve(g, train_flags), topt, g.out);
    } else if (*eval) {
      eopt.checkpoint = eval_ckpt;
      eopt.split = parse_split(eval_split);
      const auto r = cli::cmd_eval(resolve(g, eval_flags), eopt, g.out);
      std::printf("%-8s %-8s %-8s\n", "scope", "top1", "mean1");
      for (const auto& row : r.rows) std::printf("%-8s %-8.4f %-8.4f\n", row.scope.c_str(), row.top1, row.mean1);
    } else if (*gc) {
      const auto cases = run_gradcheck_suite(g.seed.value_or(0), inject_fault);
      for (const auto& c : cases) {
        std::size_t n = 0;
        for (const auto& e : c.report.entries) n += e.checked;
        const bool ok = c.report.passed(kGradCheckTolerance);
        std::printf("%-20s max_rel_error %.3e over %zu entries  %s\n", c.name.c_str(), c.report.max_rel_error(), n,
                    ok ? "ok" : "FAIL");
      }
      if (!gradcheck_passed(cases)) {
        spdlog::error("gradient check failed (tolerance {:.0e})", kGradCheckTolerance);
        return 1;
      }
    } else if (*exp) {
      if (export_split) xopt.split = parse_split(*export_split);
      xopt.file = export_file;
      const auto path = cli::cmd_export_features(xopt, g.out);
      std::printf("%s\n", path.string().c_str());
    }
  } catch (const cm2::Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 0;
}
