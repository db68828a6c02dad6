#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "mmlip/anomaly.hpp"
#include "mmlip/autoencoder.hpp"
#include "mmlip/errors.hpp"
#include "mmlip/estimator.hpp"
#include "mmlip/io.hpp"
#include "mmlip/synthdata.hpp"
#include "mmlip/train.hpp"

namespace mmlip::config {

struct ModelSection {
  std::vector<std::size_t> hidden_widths{32};
  std::size_t latent_dim = 16;
  nn::Activation activation = nn::Activation::ReLU;
  std::vector<ae::FusionType> fusions{ae::FusionType::Sum, ae::FusionType::Concat,
                                      ae::FusionType::Attention};
  ae::AttentionSettings attention;
};

struct EstimationSection {
  double low = -1.0;
  double high = 1.0;
  std::size_t n_pairs = 10000;
  double epsilon = estimator::kDefaultEpsilon;
  std::uint64_t seed = 3;
  std::size_t workers = 1;
};

/// Constants the bound report cannot measure from a snapshot.
struct BoundsSection {
  std::vector<double> decoder_grad_lipschitz;  ///< per decoder; empty = not supplied
  std::optional<double> aggregation_grad_lipschitz;
  std::optional<double> aggregation_param_gradient_bound;
  std::optional<double> attention_grad_constant;
};

struct AblationSection {
  std::vector<double> lambdas{1e-9, 1e-7, 1e-5, 1e-3, 1e-1};
};

struct DetectionSection {
  data::FaultSpec fault{0.5, data::FaultKind::Bias, 5.0, {0}, 11};
  anomaly::KernelType kernel = anomaly::KernelType::Rbf;
  double gamma = 0.0;  ///< 0 = median heuristic
  std::size_t k_components = 8;
  /// Clean training latents used to fit, taken at an even stride.
  std::size_t fit_samples = 600;
  double percentile = anomaly::kDefaultPercentile;
};

struct ExperimentConfig {
  data::SyntheticSpec dataset;
  ModelSection model;
  train::TrainConfig training{.trials = 5};
  EstimationSection estimation;
  BoundsSection bounds;
  AblationSection ablation;
  DetectionSection detection;

  ae::ModelSpec model_spec(ae::FusionType fusion) const {
    ae::ModelSpec s;
    s.modality_dims = dataset.feature_dims();
    s.hidden_widths = model.hidden_widths;
    s.latent_dim = model.latent_dim;
    s.activation = model.activation;
    s.fusion = fusion;
    s.attention = model.attention;
    s.attention.lambda_reg = training.lambda_reg;
    return s;
  }

  void validate() const {
    try {
      dataset.validate();
      training.validate();
      if (model.fusions.empty()) throw InvalidInputError("model.fusions is empty");
      for (auto f : model.fusions) model_spec(f).validate();
      if (!(estimation.low < estimation.high)) throw InvalidInputError("estimation.low must be < estimation.high");
      if (estimation.n_pairs < 1) throw InvalidInputError("estimation.n_pairs must be >= 1");
      if (ablation.lambdas.empty()) throw InvalidInputError("ablation.lambdas is empty");
      for (double l : ablation.lambdas) {
        if (!(l >= 0.0)) throw InvalidInputError("ablation.lambdas must be >= 0");
      }
      if (!(detection.fault.fraction >= 0.0 && detection.fault.fraction <= 1.0)) {
        throw InvalidInputError("detection.fraction must be in [0, 1]");
      }
      if (detection.fault.affected_modalities.empty()) {
        throw InvalidInputError("detection.affected_modalities is empty");
      }
      for (std::size_t i : detection.fault.affected_modalities) {
        if (i >= dataset.modality_dims.size()) throw InvalidInputError("detection.affected_modalities out of range");
      }
      if (detection.k_components < 1) throw InvalidInputError("detection.k_components must be >= 1");
      if (!(detection.percentile > 0.0 && detection.percentile < 100.0)) {
        throw InvalidInputError("detection.percentile must be in (0, 100)");
      }
    } catch (const InvalidInputError& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::size_t line_of(const YAML::Node& n) {
  const auto mark = n.Mark();
  return mark.line >= 0 ? std::size_t(mark.line) + 1 : 0;
}

/// Reads one mapping, rejecting keys without a handler.
class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError("section '" + name_ + "' must be a mapping", line_of(node_));
    }
  }

  template <class T>
  Section& field(const std::string& key, T& out) {
    return custom(key, [&](const YAML::Node& v) { out = as<T>(v, key); });
  }

  Section& custom(const std::string& key, std::function<void(const YAML::Node&)> fn) {
    handlers_[key] = std::move(fn);
    return *this;
  }

  void apply() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) {
        throw ConfigError("unknown key '" + key + "' in section '" + name_ + "'", line_of(kv.first));
      }
      it->second(kv.second);
    }
  }

  template <class T>
  T as(const YAML::Node& v, const std::string& key) const {
    try {
      return v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("bad value for '" + name_ + "." + key + "'", line_of(v));
    }
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::map<std::string, std::function<void(const YAML::Node&)>> handlers_;
};

template <class T, class Parse>
T parse_enum(const YAML::Node& v, const std::string& key, Parse parse) {
  try {
    return parse(v.as<std::string>());
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for '" + key + "'", line_of(v));
  } catch (const InvalidInputError& e) {
    throw ConfigError(std::string(e.what()) + " for '" + key + "'", line_of(v));
  }
}

inline std::optional<double> optional_double(const YAML::Node& v, const std::string& key) {
  if (v.IsNull()) return std::nullopt;
  try {
    return v.as<double>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for '" + key + "'", line_of(v));
  }
}

}  // namespace detail

/// Parses YAML text; missing keys keep their defaults.
inline ExperimentConfig parse(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("YAML syntax error: " + e.msg, std::size_t(e.mark.line) + 1);
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("config root must be a mapping", detail::line_of(root));

  using detail::Section;
  Section top(root, "<root>");
  top.custom("dataset", [&](const YAML::Node& n) {
    auto& d = c.dataset;
    Section(n, "dataset")
        .field("n_samples", d.n_samples)
        .field("shared_latent_dim", d.shared_latent_dim)
        .field("modality_dims", d.modality_dims)
        .field("noise_std", d.noise_std)
        .field("window_length", d.window_length)
        .field("window_step", d.window_step)
        .field("smoothness", d.smoothness)
        .field("seed", d.seed)
        .apply();
  });
  top.custom("model", [&](const YAML::Node& n) {
    auto& m = c.model;
    Section(n, "model")
        .field("hidden_widths", m.hidden_widths)
        .field("latent_dim", m.latent_dim)
        .custom("activation",
                [&](const YAML::Node& v) {
                  m.activation = detail::parse_enum<nn::Activation>(v, "model.activation", nn::parse_activation);
                })
        .custom("fusions",
                [&](const YAML::Node& v) {
                  if (!v.IsSequence()) throw ConfigError("model.fusions must be a list", detail::line_of(v));
                  m.fusions.clear();
                  for (const auto& f : v) {
                    m.fusions.push_back(detail::parse_enum<ae::FusionType>(f, "model.fusions", ae::parse_fusion));
                  }
                })
        .custom("attention",
                [&](const YAML::Node& v) {
                  auto& a = m.attention;
                  Section(v, "model.attention")
                      .field("depth", a.depth)
                      .field("unit_norm_inputs", a.unit_norm_inputs)
                      .field("spectral_normalize", a.spectral_normalize)
                      .field("scale_by_sqrt_d", a.scale_by_sqrt_d)
                      .apply();
                })
        .apply();
  });
  top.custom("training", [&](const YAML::Node& n) {
    auto& t = c.training;
    Section(n, "training")
        .field("epochs", t.epochs)
        .field("batch_size", t.batch_size)
        .field("learning_rate", t.learning_rate)
        .field("lambda_reg", t.lambda_reg)
        .field("seed", t.seed)
        .field("trials", t.trials)
        .field("lipschitz_every", t.lipschitz_every)
        .field("lipschitz_pairs", t.lipschitz_pairs)
        .field("lipschitz_sample", t.lipschitz_sample)
        .field("lipschitz_epsilon", t.lipschitz_epsilon)
        .field("workers", t.workers)
        .apply();
  });
  top.custom("estimation", [&](const YAML::Node& n) {
    auto& e = c.estimation;
    Section(n, "estimation")
        .field("low", e.low)
        .field("high", e.high)
        .field("n_pairs", e.n_pairs)
        .field("epsilon", e.epsilon)
        .field("seed", e.seed)
        .field("workers", e.workers)
        .apply();
  });
  top.custom("bounds", [&](const YAML::Node& n) {
    auto& b = c.bounds;
    Section(n, "bounds")
        .field("decoder_grad_lipschitz", b.decoder_grad_lipschitz)
        .custom("aggregation_grad_lipschitz",
                [&](const YAML::Node& v) {
                  b.aggregation_grad_lipschitz = detail::optional_double(v, "bounds.aggregation_grad_lipschitz");
                })
        .custom("aggregation_param_gradient_bound",
                [&](const YAML::Node& v) {
                  b.aggregation_param_gradient_bound =
                      detail::optional_double(v, "bounds.aggregation_param_gradient_bound");
                })
        .custom("attention_grad_constant",
                [&](const YAML::Node& v) {
                  b.attention_grad_constant = detail::optional_double(v, "bounds.attention_grad_constant");
                })
        .apply();
  });
  top.custom("ablation", [&](const YAML::Node& n) {
    Section(n, "ablation").field("lambdas", c.ablation.lambdas).apply();
  });
  top.custom("detection", [&](const YAML::Node& n) {
    auto& d = c.detection;
    Section(n, "detection")
        .field("fraction", d.fault.fraction)
        .custom("kind",
                [&](const YAML::Node& v) {
                  d.fault.kind = detail::parse_enum<data::FaultKind>(v, "detection.kind", data::parse_fault);
                })
        .field("magnitude", d.fault.magnitude)
        .field("affected_modalities", d.fault.affected_modalities)
        .field("seed", d.fault.seed)
        .custom("kernel",
                [&](const YAML::Node& v) {
                  d.kernel = detail::parse_enum<anomaly::KernelType>(v, "detection.kernel", anomaly::parse_kernel);
                })
        .field("gamma", d.gamma)
        .field("k_components", d.k_components)
        .field("fit_samples", d.fit_samples)
        .field("percentile", d.percentile)
        .apply();
  });
  top.apply();
  c.validate();
  return c;
}

inline ExperimentConfig load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse(text);
}

/// Every field with its effective value; parse(to_yaml(c)) reproduces c.
inline std::string to_yaml(const ExperimentConfig& c) {
  YAML::Node root;
  root["dataset"] = io::spec_to_yaml(c.dataset);

  YAML::Node m;
  m["hidden_widths"] = io::yaml_seq(c.model.hidden_widths);
  m["latent_dim"] = c.model.latent_dim;
  m["activation"] = nn::activation_name(c.model.activation);
  std::vector<std::string> fusions;
  for (auto f : c.model.fusions) fusions.push_back(ae::fusion_name(f));
  m["fusions"] = io::yaml_seq(fusions);
  m["attention"]["depth"] = c.model.attention.depth;
  m["attention"]["unit_norm_inputs"] = c.model.attention.unit_norm_inputs;
  m["attention"]["spectral_normalize"] = c.model.attention.spectral_normalize;
  m["attention"]["scale_by_sqrt_d"] = c.model.attention.scale_by_sqrt_d;
  root["model"] = m;

  const auto& t = c.training;
  YAML::Node tr;
  tr["epochs"] = t.epochs;
  tr["batch_size"] = t.batch_size;
  tr["learning_rate"] = t.learning_rate;
  tr["lambda_reg"] = t.lambda_reg;
  tr["seed"] = t.seed;
  tr["trials"] = t.trials;
  tr["lipschitz_every"] = t.lipschitz_every;
  tr["lipschitz_pairs"] = t.lipschitz_pairs;
  tr["lipschitz_sample"] = t.lipschitz_sample;
  tr["lipschitz_epsilon"] = t.lipschitz_epsilon;
  tr["workers"] = t.workers;
  root["training"] = tr;

  const auto& e = c.estimation;
  YAML::Node es;
  es["low"] = e.low;
  es["high"] = e.high;
  es["n_pairs"] = e.n_pairs;
  es["epsilon"] = e.epsilon;
  es["seed"] = e.seed;
  es["workers"] = e.workers;
  root["estimation"] = es;

  const auto& b = c.bounds;
  YAML::Node bn;
  bn["decoder_grad_lipschitz"] = io::yaml_seq(b.decoder_grad_lipschitz);
  auto opt = [](const std::optional<double>& v) { return v ? YAML::Node(*v) : YAML::Node(YAML::NodeType::Null); };
  bn["aggregation_grad_lipschitz"] = opt(b.aggregation_grad_lipschitz);
  bn["aggregation_param_gradient_bound"] = opt(b.aggregation_param_gradient_bound);
  bn["attention_grad_constant"] = opt(b.attention_grad_constant);
  root["bounds"] = bn;

  root["ablation"]["lambdas"] = io::yaml_seq(c.ablation.lambdas);

  const auto& d = c.detection;
  YAML::Node dn;
  dn["fraction"] = d.fault.fraction;
  dn["kind"] = data::fault_name(d.fault.kind);
  dn["magnitude"] = d.fault.magnitude;
  dn["affected_modalities"] = io::yaml_seq(d.fault.affected_modalities);
  dn["seed"] = d.fault.seed;
  dn["kernel"] = anomaly::kernel_name(d.kernel);
  dn["gamma"] = d.gamma;
  dn["k_components"] = d.k_components;
  dn["fit_samples"] = d.fit_samples;
  dn["percentile"] = d.percentile;
  root["detection"] = dn;
  return io::emit_yaml(root);
}

}  // namespace mmlip::config
