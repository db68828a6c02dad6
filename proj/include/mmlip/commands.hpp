#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mmlip/anomaly.hpp"
#include "mmlip/autoencoder.hpp"
#include "mmlip/bounds.hpp"
#include "mmlip/config.hpp"
#include "mmlip/errors.hpp"
#include "mmlip/estimator.hpp"
#include "mmlip/fusion.hpp"
#include "mmlip/io.hpp"
#include "mmlip/stats.hpp"
#include "mmlip/synthdata.hpp"
#include "mmlip/train.hpp"

namespace mmlip::cmd {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

/// Seed of trial t; trial 0 uses the configured seed unchanged.
inline std::uint64_t trial_seed(std::uint64_t base, std::size_t t) { return base + t; }

inline std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

inline void write_effective_config(const fs::path& out, const config::ExperimentConfig& cfg) {
  io::write_file_atomic(out / "effective_config.yaml", config::to_yaml(cfg));
}

inline io::Snapshot make_snapshot(const ae::MultimodalAutoencoder& model,
                                  const data::MultimodalDataset& ds) {
  const auto idx = ds.indices(false);
  const auto samples = ds.gather(idx);
  return {model, io::measure(model, samples)};
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const config::ExperimentConfig& cfg, const fs::path& out,
                        std::ostream& log = std::cout) {
  const auto ds = data::generate(cfg.dataset);
  io::save_dataset(out, ds, cfg.dataset);
  write_effective_config(out, cfg);
  log << "wrote " << ds.samples() << " samples (" << ds.indices(true).size()
      << " held out) to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrialOutcome {
  ae::FusionType fusion{};
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  train::TrainResult result;
};

inline double final_model_lipschitz(const train::TrainLog& log) {
  for (auto it = log.epochs.rbegin(); it != log.epochs.rend(); ++it) {
    if (!std::isnan(it->model_lipschitz)) return it->model_lipschitz;
  }
  return std::nan("");
}

/// Long-format per-epoch summary across trials.
inline std::string summary_csv(const std::vector<TrialOutcome>& outcomes) {
  // (fusion, epoch, metric) -> values across trials, in first-seen order.
  std::vector<std::tuple<std::string, std::size_t, std::string>> keys;
  std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<double>> values;
  auto push = [&](const std::string& f, std::size_t e, const std::string& m, double v) {
    const auto key = std::make_tuple(f, e, m);
    auto [it, inserted] = values.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(v);
  };
  for (const auto& o : outcomes) {
    const auto f = ae::fusion_name(o.fusion);
    for (const auto& e : o.result.log.epochs) {
      for (std::size_t i = 0; i < e.train_loss.size(); ++i) {
        push(f, e.epoch, "train_loss_" + std::to_string(i), e.train_loss[i]);
        push(f, e.epoch, "test_loss_" + std::to_string(i), e.test_loss[i]);
      }
      push(f, e.epoch, "combined_train", e.combined_train);
      push(f, e.epoch, "combined_test", e.combined_test);
      for (const auto& s : e.lipschitz) push(f, e.epoch, "lipschitz_" + s.name, s.estimate.value);
      if (!std::isnan(e.model_lipschitz)) push(f, e.epoch, "model_lipschitz", e.model_lipschitz);
    }
  }
  io::Csv csv({"fusion", "epoch", "metric", "mean", "std", "min", "max", "count"});
  for (const auto& key : keys) {
    const auto s = stats::summarize(values[key]);
    csv.add(std::get<0>(key), std::get<1>(key), std::get<2>(key), s.mean, s.std, s.min, s.max, s.count);
  }
  return csv.str();
}

inline std::string trials_csv(const std::vector<TrialOutcome>& outcomes) {
  io::Csv csv({"fusion", "trial", "seed", "epochs_completed", "final_combined_train",
               "final_combined_test", "final_model_lipschitz", "diverged", "message"});
  for (const auto& o : outcomes) {
    const auto& log = o.result.log;
    const double tr = log.epochs.empty() ? log.initial_train_loss : log.epochs.back().combined_train;
    const double te = log.epochs.empty() ? std::nan("") : log.epochs.back().combined_test;
    csv.add(ae::fusion_name(o.fusion), o.trial, std::to_string(o.seed), log.epochs.size(), tr, te,
            final_model_lipschitz(log), log.diverged, sanitize(log.divergence_message));
  }
  return csv.str();
}

/// Trains every configured fusion kind for every trial. Results are also
/// returned so callers can inspect them without re-reading files.
inline int cmd_train(const config::ExperimentConfig& cfg, const fs::path& out, bool strict,
                     std::ostream& log = std::cout, std::vector<TrialOutcome>* results = nullptr) {
  const auto ds = data::generate(cfg.dataset);
  write_effective_config(out, cfg);
  std::vector<TrialOutcome> outcomes;
  for (auto fusion : cfg.model.fusions) {
    const auto spec = cfg.model_spec(fusion);
    const auto name = ae::fusion_name(fusion);
    for (std::size_t t = 0; t < cfg.training.trials; ++t) {
      auto tc = cfg.training;
      tc.seed = trial_seed(cfg.training.seed, t);
      TrialOutcome o{fusion, t, tc.seed, train::train(spec, ds, tc)};
      const auto stem = out / name / ("trial_" + std::to_string(t));
      io::write_file_atomic(fs::path(stem) += ".jsonl", io::train_log_to_jsonl(o.result.log));
      io::save_snapshot(fs::path(stem) += ".snapshot.json", make_snapshot(o.result.model, ds));
      log << name << " trial " << t << ": final test loss "
          << (o.result.log.epochs.empty() ? std::nan("") : o.result.log.epochs.back().combined_test)
          << ", final model Lipschitz " << final_model_lipschitz(o.result.log)
          << (o.result.log.diverged ? " (diverged)" : "") << "\n";
      outcomes.push_back(std::move(o));
    }
  }
  io::write_file_atomic(out / "summary.csv", summary_csv(outcomes));
  io::write_file_atomic(out / "trials.csv", trials_csv(outcomes));

  std::size_t diverged = 0;
  for (const auto& o : outcomes) diverged += o.result.log.diverged ? 1 : 0;
  if (results) *results = std::move(outcomes);
  if (diverged > 0) {
    std::cerr << "warning: " << diverged << " trial(s) diverged; see trials.csv\n";
    if (strict) return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BoundRow {
  std::string quantity;
  std::string submodel;
  double value = std::nan("");
  std::string status;  ///< "ok" or "requires-parameter"
  std::string note;
};

inline std::vector<BoundRow> bound_rows(const io::Snapshot& snap, const config::BoundsSection& user) {
  const auto& m = snap.model;
  const auto& meas = snap.measurements;
  const std::size_t n = m.modalities();
  std::vector<BoundRow> rows;
  auto func_lip = [](const nn::Mlp& p) {
    return bounds::mlp_func_lipschitz(p.weights, p.activation_lipschitz());
  };

  std::vector<double> enc(n), dec(n);
  for (std::size_t i = 0; i < n; ++i) {
    enc[i] = func_lip(m.encoders[i]);
    rows.push_back({"func_lipschitz", "encoder_" + std::to_string(i), enc[i], "ok", ""});
  }
  for (std::size_t i = 0; i < n; ++i) {
    dec[i] = func_lip(m.decoders[i]);
    rows.push_back({"func_lipschitz", "decoder_" + std::to_string(i), dec[i], "ok", ""});
  }
  const auto agg = bounds::aggregation_bounds(enc);
  rows.push_back({"aggregation_concat", "encoders", agg.l_concat, "ok", "sqrt of summed squares"});
  rows.push_back({"aggregation_sum", "encoders", agg.l_sum, "ok", "sum"});

  // Lipschitz constant of the fusion map w.r.t. one encoder output.
  double l_agg = 1.0;
  if (m.spec.fusion == ae::FusionType::Attention) {
    const auto prep = ae::detail::prepare_attention(m);
    double m_max = 0.0;
    for (const auto& chain : prep.effective) {
      double prod = 1.0;
      for (const auto& w : chain) prod *= spectral_norm(w, 1e-12, 10000);
      m_max = std::max(m_max, prod);
    }
    const double r = meas.attention_input_norm_max;
    rows.push_back({"attention_weight_norm", "attention", m_max, "ok", "max over modalities of the effective chain norm"});
    rows.push_back({"attention_input_norm", "attention", r, "ok", "measured on the training split"});
    l_agg = bounds::attention_func_bound(m_max, r);
    rows.push_back({"attention_func_bound", "attention", l_agg, "ok", "4 M^2 R^2"});
    const double c_n = user.attention_grad_constant.value_or(bounds::default_attention_grad_constant(n));
    rows.push_back({"attention_grad_bound", "attention", bounds::attention_grad_bound(c_n, m_max, r), "ok",
                    user.attention_grad_constant ? "user constant" : "default constant 4n"});
  }
  const double l_enc = *std::max_element(enc.begin(), enc.end());

  for (std::size_t k = 0; k < n; ++k) {
    BoundRow row{"decoder_grad_bound", "decoder_" + std::to_string(k), std::nan(""), "", ""};
    if (k < user.decoder_grad_lipschitz.size()) {
      bounds::DecoderBoundInputs in;
      in.b_grad = meas.decoder_jacobian_norm_max[k];
      in.l_dec_func = dec[k];
      in.l_dec_grad = user.decoder_grad_lipschitz[k];
      in.c_input = meas.input_norm_max[k];
      in.l_agg = l_agg;
      in.l_enc_func = l_enc;
      row.value = bounds::decoder_grad_bound(in);
      row.status = "ok";
    } else {
      row.status = "requires-parameter";
      row.note = "bounds.decoder_grad_lipschitz[" + std::to_string(k) + "]";
    }
    rows.push_back(row);
  }

  for (std::size_t k = 0; k < n; ++k) {
    BoundRow row{"encoder_grad_bound", "encoder_" + std::to_string(k), std::nan(""), "", ""};
    std::vector<std::string> missing;
    if (user.decoder_grad_lipschitz.size() < n) missing.push_back("bounds.decoder_grad_lipschitz");
    if (!user.aggregation_grad_lipschitz) missing.push_back("bounds.aggregation_grad_lipschitz");
    if (!user.aggregation_param_gradient_bound) missing.push_back("bounds.aggregation_param_gradient_bound");
    if (missing.empty()) {
      bounds::EncoderBoundInputs in;
      for (std::size_t i = 0; i < n; ++i) in.decoders.push_back({dec[i], user.decoder_grad_lipschitz[i]});
      in.b_agg = *user.aggregation_param_gradient_bound;
      in.l_agg_func = l_agg;
      in.l_agg_grad_k = *user.aggregation_grad_lipschitz;
      in.c_input = meas.input_norm_max[k];
      row.value = bounds::encoder_grad_bound(in);
      row.status = "ok";
    } else {
      row.status = "requires-parameter";
      for (std::size_t i = 0; i < missing.size(); ++i) row.note += (i ? " " : "") + missing[i];
    }
    rows.push_back(row);
  }
  return rows;
}

inline int cmd_bounds(const fs::path& snapshot_path, const config::ExperimentConfig& cfg,
                      const fs::path& out, std::ostream& log = std::cout) {
  const auto snap = io::load_snapshot(snapshot_path);
  const auto rows = bound_rows(snap, cfg.bounds);
  io::Csv csv({"quantity", "submodel", "value", "status", "note"});
  for (const auto& r : rows) {
    csv.add(r.quantity, r.submodel, r.value, r.status, sanitize(r.note));
  }
  log << csv.str();
  if (!out.empty()) io::write_file_atomic(out / "bounds.csv", csv.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// ½‖x‖² has gradient x, so its gradient-Lipschitz estimate is exactly 1.
inline estimator::LipschitzEstimate quadratic_self_test(const config::EstimationSection& e,
                                                        std::size_t dim = 4) {
  const estimator::SamplingDomain domain{dim, e.low, e.high};
  return estimator::estimate_gradient_lipschitz(
      [](std::span<const double> x) { return Vector(x.begin(), x.end()); }, domain, e.n_pairs,
      e.epsilon, e.seed, e.workers);
}

inline int cmd_self_test(const config::ExperimentConfig& cfg, std::ostream& log = std::cout) {
  const auto est = quadratic_self_test(cfg.estimation);
  const bool ok = std::abs(est.value - 1.0) <= 1e-12;
  log << "quadratic self-test: estimate " << io::format_double(est.value) << " over "
      << est.pairs_evaluated << " pairs: " << (ok ? "ok" : "FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

inline int cmd_estimate(const fs::path& snapshot_path, const config::ExperimentConfig& cfg,
                        const fs::path& out, std::ostream& log = std::cout) {
  const auto snap = io::load_snapshot(snapshot_path);
  const auto& m = snap.model;
  const auto& e = cfg.estimation;
  io::Csv csv({"submodel", "statistic", "value", "pairs_evaluated", "pairs_skipped", "seed", "low", "high",
               "n_pairs"});
  std::vector<std::pair<std::string, const nn::Mlp*>> parts;
  for (std::size_t i = 0; i < m.modalities(); ++i) parts.emplace_back("encoder_" + std::to_string(i), &m.encoders[i]);
  for (std::size_t i = 0; i < m.modalities(); ++i) parts.emplace_back("decoder_" + std::to_string(i), &m.decoders[i]);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& part = *parts[p].second;
    const estimator::SamplingDomain domain{part.input_dim(), e.low, e.high};
    const auto seed = mix_seed(e.seed, p);
    const auto f = estimator::estimate_function_lipschitz(
        [&part](std::span<const double> x) { return part.forward(x); }, domain, e.n_pairs, e.epsilon, seed,
        e.workers);
    const auto g = estimator::estimate_gradient_lipschitz(estimator::jacobian_map(part), domain, e.n_pairs,
                                                          e.epsilon, seed, e.workers);
    csv.add(parts[p].first, "function_lipschitz", f.value, f.pairs_evaluated, f.pairs_skipped,
            std::to_string(seed), e.low, e.high, e.n_pairs);
    csv.add(parts[p].first, "gradient_lipschitz", g.value, g.pairs_evaluated, g.pairs_skipped,
            std::to_string(seed), e.low, e.high, e.n_pairs);
  }
  log << csv.str();
  if (!out.empty()) {
    io::write_file_atomic(out / "estimates.csv", csv.str());
    write_effective_config(out, cfg);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AblationPoint {
  double lambda = 0.0;
  stats::Summary final_lipschitz;
  stats::Summary final_loss;
  stats::Summary parameter_norm;
  stats::Summary attention_parameter_norm;
};

inline int cmd_ablate(const config::ExperimentConfig& cfg, const fs::path& out, bool strict,
                      std::ostream& log = std::cout, std::vector<AblationPoint>* results = nullptr) {
  const auto ds = data::generate(cfg.dataset);
  write_effective_config(out, cfg);
  io::Csv per_trial({"lambda", "trial", "seed", "final_model_lipschitz", "final_combined_test",
                     "parameter_norm", "attention_parameter_norm", "diverged"});
  io::Csv summary({"lambda", "final_model_lipschitz_mean", "final_model_lipschitz_std", "final_combined_test_mean",
                   "final_combined_test_std", "parameter_norm_mean", "parameter_norm_std",
                   "attention_parameter_norm_mean", "attention_parameter_norm_std", "trials"});
  std::vector<AblationPoint> points;
  std::size_t diverged = 0;
  for (double lambda : cfg.ablation.lambdas) {
    auto c = cfg;
    c.training.lambda_reg = lambda;
    const auto spec = c.model_spec(ae::FusionType::Attention);
    std::vector<double> lip, loss, pn, apn;
    for (std::size_t t = 0; t < c.training.trials; ++t) {
      auto tc = c.training;
      tc.seed = trial_seed(c.training.seed, t);
      const auto r = train::train(spec, ds, tc);
      diverged += r.log.diverged ? 1 : 0;
      const double l = final_model_lipschitz(r.log);
      const double te = r.log.epochs.empty() ? std::nan("") : r.log.epochs.back().combined_test;
      lip.push_back(l);
      loss.push_back(te);
      pn.push_back(r.model.parameter_norm());
      apn.push_back(r.model.attention_parameter_norm());
      per_trial.add(lambda, t, std::to_string(tc.seed), l, te, pn.back(), apn.back(), r.log.diverged);
    }
    AblationPoint p{lambda, stats::summarize(lip), stats::summarize(loss), stats::summarize(pn),
                    stats::summarize(apn)};
    summary.add(lambda, p.final_lipschitz.mean, p.final_lipschitz.std, p.final_loss.mean, p.final_loss.std,
                p.parameter_norm.mean, p.parameter_norm.std, p.attention_parameter_norm.mean,
                p.attention_parameter_norm.std, c.training.trials);
    log << "lambda " << io::format_double(lambda) << ": final Lipschitz " << p.final_lipschitz.mean
        << ", parameter norm " << p.parameter_norm.mean << "\n";
    points.push_back(p);
  }
  io::write_file_atomic(out / "ablation.csv", summary.str());
  io::write_file_atomic(out / "ablation_trials.csv", per_trial.str());
  if (results) *results = std::move(points);
  if (diverged > 0) {
    std::cerr << "warning: " << diverged << " ablation run(s) diverged; see ablation_trials.csv\n";
    if (strict) return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Detection operates on the per-modality encoder latents, concatenated.
inline Vector detection_latent(const ae::ForwardResult& fr) {
  Vector v;
  for (const auto& l : fr.latents) v.insert(v.end(), l.begin(), l.end());
  return v;
}

struct DetectionOutcome {
  anomaly::AnomalyModel model;
  anomaly::DetectionReport report;
  std::vector<std::size_t> sample_index;
  double roc_auc = std::nan("");
  double clean_false_positive_rate = std::nan("");
};

inline DetectionOutcome run_detection(const ae::MultimodalAutoencoder& model, const config::ExperimentConfig& cfg) {
  const auto ds = data::generate(cfg.dataset);
  if (ds.modality_count() != model.modalities()) throw InvalidInputError("snapshot and dataset disagree on modalities");
  for (std::size_t i = 0; i < ds.modality_count(); ++i) {
    if (ds.modalities[i].cols() != model.encoders[i].input_dim()) {
      throw InvalidInputError("snapshot and dataset disagree on modality " + std::to_string(i) + " width");
    }
  }
  const auto faulted = data::inject_faults(ds, cfg.detection.fault);
  const auto& d = cfg.detection;

  auto train_idx = ds.indices(false);
  if (train_idx.size() > d.fit_samples) {
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < d.fit_samples; ++i) pick.push_back(train_idx[i * train_idx.size() / d.fit_samples]);
    train_idx = std::move(pick);
  }
  std::vector<Vector> fit_latents;
  for (const auto& fr : ae::forward_many(model, ds.gather(train_idx))) fit_latents.push_back(detection_latent(fr));

  DetectionOutcome out;
  out.model = anomaly::fit(fit_latents, {d.kernel, d.gamma}, d.k_components, d.percentile);

  // Every held-out sample in its clean form, plus the faulty copy of those
  // selected for injection.
  const auto test_idx = ds.indices(true);
  std::vector<Vector> latents;
  std::vector<std::uint8_t> labels;
  const auto clean = ae::forward_many(model, ds.gather(test_idx));
  const auto dirty = ae::forward_many(model, faulted.gather(test_idx));
  for (std::size_t t = 0; t < test_idx.size(); ++t) {
    latents.push_back(detection_latent(clean[t]));
    labels.push_back(0);
    out.sample_index.push_back(test_idx[t]);
  }
  for (std::size_t t = 0; t < test_idx.size(); ++t) {
    if (!faulted.faulty[test_idx[t]]) continue;
    latents.push_back(detection_latent(dirty[t]));
    labels.push_back(1);
    out.sample_index.push_back(test_idx[t]);
  }
  out.report = anomaly::detect(out.model, latents, labels);
  out.roc_auc = anomaly::roc_auc(out.report.scores, out.report.labels);
  out.clean_false_positive_rate = out.report.counts.false_positive_rate();
  return out;
}

inline int cmd_detect(const fs::path& snapshot_path, const config::ExperimentConfig& cfg, const fs::path& out,
                      std::ostream& log = std::cout, DetectionOutcome* result = nullptr) {
  const auto snap = io::load_snapshot(snapshot_path);
  auto o = run_detection(snap.model, cfg);
  const auto& r = o.report;
  io::Csv csv({"sample", "label", "score", "predicted"});
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    csv.add(o.sample_index[i], int(r.labels[i]), r.scores[i], int(r.predicted[i]));
  }
  YAML::Node s;
  s["threshold"] = r.threshold;
  s["percentile"] = cfg.detection.percentile;
  s["kernel"] = anomaly::kernel_name(o.model.kernel.type);
  s["gamma"] = o.model.kernel.gamma;
  s["components"] = o.model.components();
  s["fit_samples"] = o.model.train.size();
  s["tp"] = r.counts.tp;
  s["fp"] = r.counts.fp;
  s["tn"] = r.counts.tn;
  s["fn"] = r.counts.fn;
  s["false_positive_rate"] = r.counts.false_positive_rate();
  s["true_positive_rate"] = r.counts.true_positive_rate();
  s["precision"] = r.counts.precision();
  s["accuracy"] = r.counts.accuracy();
  s["roc_auc"] = io::format_double(o.roc_auc);
  s["warning"] = o.model.warning;
  io::write_file_atomic(out / "detection.csv", csv.str());
  io::write_file_atomic(out / "detection_summary.yaml", io::emit_yaml(s));
  write_effective_config(out, cfg);
  if (!o.model.warning.empty()) std::cerr << "warning: " << o.model.warning << "\n";
  log << "threshold " << r.threshold << "; TP " << r.counts.tp << " FP " << r.counts.fp << " TN " << r.counts.tn
      << " FN " << r.counts.fn << "; clean FP rate " << o.clean_false_positive_rate << "; ROC-AUC "
      << io::format_double(o.roc_auc) << "\n";
  if (result) *result = std::move(o);
  return kExitOk;
}

}  // namespace mmlip::cmd
