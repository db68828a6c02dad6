// Command-line front end for the experiment pipeline.
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mmlip/mmlip.hpp"

namespace {

const char* kColumns = R"(Output files:
  gen-data  manifest.yaml, modality_<i>.csv (header f0..f<d-1>, one sample per row)
  train     <fusion>/trial_<t>.jsonl (one epoch per line), <fusion>/trial_<t>.snapshot.json,
            summary.csv (fusion,epoch,metric,mean,std,min,max,count),
            trials.csv (fusion,trial,seed,epochs_completed,final_combined_train,
                        final_combined_test,final_model_lipschitz,diverged,message)
  bounds    bounds.csv (quantity,submodel,value,status,note)
  estimate  estimates.csv (submodel,statistic,value,pairs_evaluated,pairs_skipped,seed,low,high,n_pairs)
  ablate    ablation.csv, ablation_trials.csv
  detect    detection.csv (sample,label,score,predicted), detection_summary.yaml
Every command writing to --out also writes effective_config.yaml.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.)";

}  // namespace

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  using namespace mmlip;

  CLI::App app{"Lipschitz analysis of multimodal autoencoder fusion"};
  app.footer(kColumns);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::string snapshot;
  std::optional<std::uint64_t> seed_override;
  bool strict = false;
  bool self_test = false;

  app.add_option("--config", config_path, "YAML experiment config (defaults when omitted)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed-override", seed_override, "replace training.seed");
  app.add_flag("--strict", strict, "exit 1 when any training run diverges");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* trn = app.add_subcommand("train", "train every configured fusion kind for every trial");
  auto* bnd = app.add_subcommand("bounds", "evaluate the analytic bounds for a snapshot");
  auto* est = app.add_subcommand("estimate", "sampled Lipschitz estimates for a snapshot");
  auto* abl = app.add_subcommand("ablate", "attention regularization sweep");
  auto* det = app.add_subcommand("detect", "kPCA fault detection on a snapshot's latents");
  for (auto* sub : {bnd, est, det}) sub->add_option("snapshot", snapshot, "model snapshot (.snapshot.json)");
  est->add_flag("--self-test", self_test, "run the quadratic oracle check instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cmd::kExitConfig;
  }

  auto require_out = [&]() {
    if (out_dir.empty()) throw ConfigError("--out is required for this command");
    return fs::path(out_dir);
  };
  auto require_snapshot = [&]() {
    if (snapshot.empty()) throw ConfigError("a snapshot path is required for this command");
    return fs::path(snapshot);
  };

  try {
    auto cfg = config_path.empty() ? config::ExperimentConfig{} : config::load(config_path);
    if (seed_override) cfg.training.seed = *seed_override;
    cfg.validate();

    if (gen->parsed()) return cmd::cmd_gen_data(cfg, require_out());
    if (trn->parsed()) return cmd::cmd_train(cfg, require_out(), strict);
    if (bnd->parsed()) return cmd::cmd_bounds(require_snapshot(), cfg, fs::path(out_dir));
    if (est->parsed()) {
      if (self_test) return cmd::cmd_self_test(cfg);
      return cmd::cmd_estimate(require_snapshot(), cfg, fs::path(out_dir));
    }
    if (abl->parsed()) return cmd::cmd_ablate(cfg, require_out(), strict);
    if (det->parsed()) return cmd::cmd_detect(require_snapshot(), cfg, require_out());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cmd::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cmd::kExitFailure;
  }
  return cmd::kExitFailure;
}
