#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mmlip/adam.hpp"
#include "mmlip/autoencoder.hpp"
#include "mmlip/errors.hpp"
#include "mmlip/estimator.hpp"
#include "mmlip/random.hpp"
#include "mmlip/synthdata.hpp"

namespace mmlip::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  /// Attention regularization strength; overrides the model spec's value.
  double lambda_reg = 1e-5;
  std::uint64_t seed = 1;
  std::size_t trials = 1;
  std::size_t lipschitz_every = 10;
  std::size_t lipschitz_pairs = 500;
  /// Data points (from the head of the training split) used for estimation.
  std::size_t lipschitz_sample = 200;
  double lipschitz_epsilon = estimator::kDefaultEpsilon;
  std::size_t workers = 1;

  void validate() const {
    if (batch_size < 1) throw InvalidInputError("batch_size must be >= 1");
    if (trials < 1) throw InvalidInputError("trials must be >= 1");
    if (lipschitz_every < 1) throw InvalidInputError("lipschitz_every must be >= 1");
    if (lipschitz_pairs < 1) throw InvalidInputError("lipschitz_pairs must be >= 1");
    if (lipschitz_sample < 2) throw InvalidInputError("lipschitz_sample must be >= 2");
    if (!(learning_rate > 0.0)) throw InvalidInputError("learning_rate must be > 0");
    if (!(lambda_reg >= 0.0)) throw InvalidInputError("lambda_reg must be >= 0");
  }
};

struct SubmodelEstimate {
  std::string name;  ///< "encoder_<i>" or "decoder_<i>"
  estimator::LipschitzEstimate estimate;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Vector train_loss;  ///< per modality, mean ‖x − x̂‖² over the split
  Vector test_loss;
  double combined_train = 0.0;
  double combined_test = 0.0;
  /// Empty on epochs without estimation.
  std::vector<SubmodelEstimate> lipschitz;
  /// Max over submodels; NaN when not estimated this epoch.
  double model_lipschitz = std::nan("");
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double initial_train_loss = 0.0;
  bool diverged = false;
  std::string divergence_message;
};

struct TrainResult {
  TrainLog log;
  ae::MultimodalAutoencoder model;
};

struct SplitLosses {
  Vector per_modality;
  double combined = 0.0;
};

inline SplitLosses evaluate_losses(const ae::MultimodalAutoencoder& model,
                                   const data::MultimodalDataset& ds,
                                   std::span<const std::size_t> idx) {
  SplitLosses out{Vector(model.modalities(), 0.0), 0.0};
  if (idx.empty()) return out;
  const auto samples = ds.gather(idx);
  const auto results = ae::forward_many(model, samples);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    axpy(1.0, ae::reconstruction_errors(results[k], samples[k]), out.per_modality);
  }
  for (double& v : out.per_modality) v /= double(idx.size());
  out.combined = std::accumulate(out.per_modality.begin(), out.per_modality.end(), 0.0);
  return out;
}

/// Gradient-Lipschitz estimates of every encoder and decoder. Encoders see
/// their modality's inputs, decoders the fused latents of the same samples.
inline std::vector<SubmodelEstimate> estimate_submodels(const ae::MultimodalAutoencoder& model,
                                                        std::span<const std::vector<Vector>> samples,
                                                        std::size_t n_pairs, double epsilon,
                                                        std::uint64_t seed, std::size_t workers) {
  const std::size_t n = model.modalities();
  std::vector<std::vector<Vector>> enc_inputs(n);
  std::vector<Vector> fused;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < n; ++i) enc_inputs[i].push_back(s[i]);
  }
  for (auto& r : ae::forward_many(model, samples)) fused.push_back(std::move(r.fused.u));
  std::vector<SubmodelEstimate> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"encoder_" + std::to_string(i),
                   estimator::estimate_model_lipschitz(model.encoders[i], enc_inputs[i], n_pairs,
                                                       epsilon, mix_seed(seed, i), workers)});
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"decoder_" + std::to_string(i),
                   estimator::estimate_model_lipschitz(model.decoders[i], fused, n_pairs, epsilon,
                                                       mix_seed(seed, n + i), workers)});
  }
  return out;
}

inline double overall_lipschitz(std::span<const SubmodelEstimate> parts) {
  double m = 0.0;
  for (const auto& p : parts) m = std::max(m, p.estimate.value);
  return m;
}

/// Trains one model. Deterministic in (spec, dataset, config). A non-finite
/// loss stops training and returns the partial log with `diverged` set.
inline TrainResult train(ae::ModelSpec spec, const data::MultimodalDataset& ds,
                         const TrainConfig& config) {
  config.validate();
  ds.validate();
  if (ds.samples() == 0) throw InvalidInputError("dataset is empty");
  spec.attention.lambda_reg = config.lambda_reg;
  TrainResult res{{}, ae::MultimodalAutoencoder::initialize(spec, mix_seed(config.seed, 0))};
  auto& model = res.model;

  auto train_idx = ds.indices(false);
  const auto test_idx = ds.indices(true);
  if (train_idx.empty()) throw InvalidInputError("dataset has no training samples");
  res.log.initial_train_loss = evaluate_losses(model, ds, train_idx).combined;

  std::vector<std::vector<Vector>> probe;
  for (std::size_t k = 0; k < std::min(config.lipschitz_sample, train_idx.size()); ++k) {
    probe.push_back(ds.sample(train_idx[k]));
  }

  Rng shuffler(config.seed, 1);
  optim::AdamState adam;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffler.engine());
    try {
      for (std::size_t b = 0; b < train_idx.size(); b += config.batch_size) {
        const std::size_t e = std::min(train_idx.size(), b + config.batch_size);
        const auto batch = ds.gather(std::span(train_idx).subspan(b, e - b));
        auto g = ae::batch_gradient(model, batch);
        if (!std::isfinite(g.loss)) throw DivergenceError("non-finite batch loss");
        const auto params = model.parameters();
        const auto grads = std::as_const(g.grad).parameters();
        optim::adam_step(params, grads, adam, config.learning_rate);
      }
    } catch (const DivergenceError& err) {
      res.log.diverged = true;
      res.log.divergence_message =
          "epoch " + std::to_string(epoch) + ": " + std::string(err.what());
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const auto tr = evaluate_losses(model, ds, train_idx);
    const auto te = evaluate_losses(model, ds, test_idx);
    rec.train_loss = tr.per_modality;
    rec.test_loss = te.per_modality;
    rec.combined_train = tr.combined;
    rec.combined_test = te.combined;
    if (!std::isfinite(tr.combined) || !std::isfinite(te.combined)) {
      res.log.diverged = true;
      res.log.divergence_message = "epoch " + std::to_string(epoch) + ": non-finite loss";
      break;
    }
    if (epoch == 1 || epoch % config.lipschitz_every == 0 || epoch == config.epochs) {
      try {
        rec.lipschitz = estimate_submodels(model, probe, config.lipschitz_pairs,
                                           config.lipschitz_epsilon,
                                           mix_seed(config.seed, 1000 + epoch), config.workers);
        rec.model_lipschitz = overall_lipschitz(rec.lipschitz);
      } catch (const DegenerateDomainError&) {
        // Collapsed latents: every decoder input coincides.
        rec.lipschitz.clear();
      }
    }
    res.log.epochs.push_back(std::move(rec));
  }
  return res;
}

}  // namespace mmlip::train
