#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/fusion.hpp"
#include "mmlip/linalg.hpp"
#include "mmlip/mlp.hpp"
#include "mmlip/random.hpp"

namespace mmlip::ae {

enum class FusionType { Sum, Concat, Attention };

inline std::string fusion_name(FusionType t) {
  switch (t) {
    case FusionType::Sum: return "sum";
    case FusionType::Concat: return "concat";
    case FusionType::Attention: return "attention";
  }
  return "?";
}

inline FusionType parse_fusion(const std::string& s) {
  if (s == "sum") return FusionType::Sum;
  if (s == "concat") return FusionType::Concat;
  if (s == "attention") return FusionType::Attention;
  throw InvalidInputError("unknown fusion kind '" + s + "'");
}

/// Guard added to ‖v‖ before unit normalization inside the model.
inline constexpr double kUnitNormGuard = 1e-12;

struct AttentionSettings {
  /// Square projection matrices chained per modality, ReLU in between.
  std::size_t depth = 2;
  bool unit_norm_inputs = true;
  bool spectral_normalize = true;
  bool scale_by_sqrt_d = true;
  double lambda_reg = 1e-5;
};

struct ModelSpec {
  std::vector<std::size_t> modality_dims;
  std::vector<std::size_t> hidden_widths{32};
  std::size_t latent_dim = 16;
  nn::Activation activation = nn::Activation::ReLU;
  FusionType fusion = FusionType::Sum;
  AttentionSettings attention;

  std::size_t modalities() const noexcept { return modality_dims.size(); }

  std::size_t fused_dim() const noexcept {
    return fusion == FusionType::Sum ? latent_dim : latent_dim * modalities();
  }

  nn::MlpSpec encoder_spec(std::size_t i) const {
    nn::MlpSpec s;
    s.widths.push_back(modality_dims.at(i));
    s.widths.insert(s.widths.end(), hidden_widths.begin(), hidden_widths.end());
    s.widths.push_back(latent_dim);
    s.hidden_activations.assign(hidden_widths.size(), activation);
    return s;
  }

  nn::MlpSpec decoder_spec(std::size_t i) const {
    nn::MlpSpec s;
    s.widths.push_back(fused_dim());
    s.widths.insert(s.widths.end(), hidden_widths.rbegin(), hidden_widths.rend());
    s.widths.push_back(modality_dims.at(i));
    s.hidden_activations.assign(hidden_widths.size(), activation);
    return s;
  }

  void validate() const {
    if (modality_dims.empty()) throw InvalidInputError("model needs at least one modality");
    if (latent_dim < 1) throw InvalidInputError("latent_dim must be >= 1");
    for (std::size_t d : modality_dims) {
      if (d < 1) throw InvalidInputError("modality dimensions must be >= 1");
    }
    for (std::size_t w : hidden_widths) {
      if (w < 1) throw InvalidInputError("hidden widths must be >= 1");
    }
    if (fusion == FusionType::Attention) {
      if (modalities() < 2) throw InvalidInputError("attention fusion needs >= 2 modalities");
      if (attention.depth < 1) throw InvalidInputError("attention depth must be >= 1");
      if (!(attention.lambda_reg >= 0.0)) throw InvalidInputError("lambda_reg must be >= 0");
    }
  }
};

class MultimodalAutoencoder {
 public:
  ModelSpec spec;
  std::vector<nn::Mlp> encoders;
  /// attention[i][l]: layer l of modality i's projection chain.
  std::vector<std::vector<Matrix>> attention;
  std::vector<nn::Mlp> decoders;

  MultimodalAutoencoder() = default;

  /// Zero parameters with the shapes implied by `spec`.
  explicit MultimodalAutoencoder(const ModelSpec& s) : spec(s) {
    spec.validate();
    for (std::size_t i = 0; i < spec.modalities(); ++i) {
      encoders.emplace_back(spec.encoder_spec(i));
      decoders.emplace_back(spec.decoder_spec(i));
    }
    if (spec.fusion == FusionType::Attention) {
      attention.assign(spec.modalities(),
                       std::vector<Matrix>(spec.attention.depth,
                                           Matrix(spec.latent_dim, spec.latent_dim)));
    }
  }

  /// Uniform ±1/√fan_in initialization, deterministic in `seed`.
  static MultimodalAutoencoder initialize(const ModelSpec& s, std::uint64_t seed) {
    MultimodalAutoencoder m(s);
    Rng rng(seed);
    for (std::size_t i = 0; i < s.modalities(); ++i) {
      m.encoders[i] = nn::Mlp::initialize(s.encoder_spec(i), rng);
    }
    const double bound = 1.0 / std::sqrt(double(s.latent_dim));
    for (auto& chain : m.attention) {
      for (auto& w : chain) rng.fill_uniform(w.data(), -bound, bound);
    }
    for (std::size_t i = 0; i < s.modalities(); ++i) {
      m.decoders[i] = nn::Mlp::initialize(s.decoder_spec(i), rng);
    }
    return m;
  }

  std::size_t modalities() const noexcept { return spec.modalities(); }

  MultimodalAutoencoder zeros_like() const { return MultimodalAutoencoder(spec); }

  /// Every parameter tensor in a fixed order: encoders (W, b per layer),
  /// attention matrices, decoders.
  std::vector<std::span<double>> parameters() {
    std::vector<std::span<double>> out;
    auto add_mlp = [&](nn::Mlp& m) {
      for (std::size_t l = 0; l < m.layers(); ++l) {
        out.push_back(m.weights[l].data());
        out.push_back(m.biases[l]);
      }
    };
    for (auto& e : encoders) add_mlp(e);
    for (auto& chain : attention) {
      for (auto& w : chain) out.push_back(w.data());
    }
    for (auto& d : decoders) add_mlp(d);
    return out;
  }

  std::vector<std::span<const double>> parameters() const {
    auto spans = const_cast<MultimodalAutoencoder*>(this)->parameters();
    return {spans.begin(), spans.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  /// √(Σ ‖θ‖²) over every parameter tensor.
  double parameter_norm() const {
    double s = 0.0;
    for (const auto& p : parameters()) {
      for (double x : p) s += x * x;
    }
    return std::sqrt(s);
  }

  /// √(Σ ‖W‖²_F) over the raw attention matrices.
  double attention_parameter_norm() const {
    double s = 0.0;
    for (const auto& chain : attention) {
      for (const auto& w : chain) {
        for (double x : w.data()) s += x * x;
      }
    }
    return std::sqrt(s);
  }

  /// λ Σ ‖W‖²_F over the raw attention matrices; 0 for other fusions.
  double regularization() const {
    if (spec.fusion != FusionType::Attention) return 0.0;
    const double n = attention_parameter_norm();
    return spec.attention.lambda_reg * n * n;
  }

  /// Single-matrix attention as the fusion module's parameter type. Only
  /// valid for depth-1 chains.
  fusion::AttentionParams attention_params() const {
    if (spec.fusion != FusionType::Attention || spec.attention.depth != 1) {
      throw UnsupportedConfigurationError("attention_params needs depth-1 attention fusion");
    }
    fusion::AttentionParams p;
    for (const auto& chain : attention) p.weights.push_back(chain.front());
    p.unit_norm_inputs = spec.attention.unit_norm_inputs;
    p.spectral_normalize = spec.attention.spectral_normalize;
    p.scale_by_sqrt_d = spec.attention.scale_by_sqrt_d;
    p.lambda_reg = spec.attention.lambda_reg;
    return p;
  }
};

/// Output of the forward pass on one sample.
struct ForwardResult {
  fusion::FusedOutput fused;
  std::vector<Vector> latents;
  std::vector<Vector> reconstructions;
};

namespace detail {

/// Effective attention weights for one parameter state, with the singular
/// triplets needed to differentiate through spectral normalization.
struct PreparedAttention {
  std::vector<std::vector<Matrix>> effective;
  std::vector<std::vector<SpectralNormResult>> sn;
};

inline PreparedAttention prepare_attention(const MultimodalAutoencoder& m) {
  PreparedAttention p;
  if (m.spec.fusion != FusionType::Attention) return p;
  p.effective = m.attention;
  if (!m.spec.attention.spectral_normalize) return p;
  p.sn.resize(m.attention.size());
  for (std::size_t i = 0; i < m.attention.size(); ++i) {
    for (std::size_t l = 0; l < m.attention[i].size(); ++l) {
      auto res = spectral_norm_full(m.attention[i][l], fusion::kNormalizationPowerIteration);
      if (res.value > 0.0) p.effective[i][l] = m.attention[i][l] * (1.0 / res.value);
      p.sn[i].push_back(std::move(res));
    }
  }
  return p;
}

struct AttentionTrace {
  std::vector<double> raw_norm;
  std::vector<Vector> normalized;               ///< v′ᵢ
  std::vector<std::vector<Vector>> chain_in;    ///< input of each chain layer
  std::vector<std::vector<Vector>> chain_pre;   ///< pre-activation of each layer
  std::vector<Vector> projected;                ///< ṽᵢ
  double score_scale = 1.0;
};

struct SampleTrace {
  std::vector<nn::Mlp::Trace> encoders;
  std::vector<nn::Mlp::Trace> decoders;
  AttentionTrace attention;
  ForwardResult result;
};

inline void check_inputs(const MultimodalAutoencoder& m, std::span<const Vector> inputs) {
  if (inputs.size() != m.modalities()) {
    throw ShapeError("model expects " + std::to_string(m.modalities()) +
                     " modality inputs, got " + std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != m.spec.modality_dims[i]) {
      throw ShapeError("modality " + std::to_string(i) + " input has " +
                       std::to_string(inputs[i].size()) + " entries, expected " +
                       std::to_string(m.spec.modality_dims[i]));
    }
  }
}

inline fusion::FusedOutput attention_forward(const MultimodalAutoencoder& m,
                                             const PreparedAttention& prep,
                                             std::span<const Vector> latents,
                                             AttentionTrace& tr) {
  const auto& cfg = m.spec.attention;
  const std::size_t n = m.modalities();
  const std::size_t d = m.spec.latent_dim;
  tr.raw_norm.assign(n, 0.0);
  tr.normalized.assign(latents.begin(), latents.end());
  tr.chain_in.assign(n, {});
  tr.chain_pre.assign(n, {});
  tr.projected.assign(n, {});
  tr.score_scale = cfg.scale_by_sqrt_d ? 1.0 / std::sqrt(double(d)) : 1.0;

  for (std::size_t i = 0; i < n; ++i) {
    tr.raw_norm[i] = norm2(latents[i]);
    if (cfg.unit_norm_inputs) {
      const double denom = tr.raw_norm[i] + kUnitNormGuard;
      for (double& x : tr.normalized[i]) x /= denom;
    }
    Vector h = tr.normalized[i];
    const auto& chain = prep.effective[i];
    for (std::size_t l = 0; l < chain.size(); ++l) {
      tr.chain_in[i].push_back(h);
      Vector z = matvec(chain[l], h);
      tr.chain_pre[i].push_back(z);
      if (l + 1 < chain.size()) {
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      }
      h = std::move(z);
    }
    tr.projected[i] = std::move(h);
  }

  fusion::FusedOutput out;
  out.scores = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = tr.score_scale * dot(tr.projected[i], tr.projected[j]);
      out.scores(i, j) = a;
      out.scores(j, i) = a;
    }
  }
  out.coefficients.assign(n, 0.0);
  out.u.assign(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) s += out.scores(i, j);
    }
    out.coefficients[i] = s / double(n - 1);
    for (std::size_t k = 0; k < d; ++k) {
      out.u[i * d + k] = out.coefficients[i] * tr.normalized[i][k];
    }
  }
  return out;
}

inline void forward_sample(const MultimodalAutoencoder& m, const PreparedAttention& prep,
                           std::span<const Vector> inputs, SampleTrace& tr) {
  check_inputs(m, inputs);
  const std::size_t n = m.modalities();
  tr.encoders.assign(n, {});
  tr.decoders.assign(n, {});
  tr.result.latents.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    tr.result.latents[i] = m.encoders[i].forward(inputs[i], tr.encoders[i]);
  }
  switch (m.spec.fusion) {
    case FusionType::Sum:
      tr.result.fused = fusion::fuse(fusion::Sum{}, tr.result.latents);
      break;
    case FusionType::Concat:
      tr.result.fused = fusion::fuse(fusion::Concat{}, tr.result.latents);
      break;
    case FusionType::Attention:
      tr.result.fused = attention_forward(m, prep, tr.result.latents, tr.attention);
      break;
  }
  tr.result.reconstructions.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    tr.result.reconstructions[i] = m.decoders[i].forward(tr.result.fused.u, tr.decoders[i]);
  }
}

/// Backpropagates ∂L/∂u through the attention block. Gradients w.r.t. the
/// effective weights go to `d_effective`; returns ∂L/∂(raw latents).
inline std::vector<Vector> attention_backward(const MultimodalAutoencoder& m,
                                              const PreparedAttention& prep,
                                              const SampleTrace& tr,
                                              std::span<const double> d_u,
                                              std::vector<std::vector<Matrix>>& d_effective) {
  const auto& at = tr.attention;
  const auto& alpha = tr.result.fused.coefficients;
  const std::size_t n = m.modalities();
  const std::size_t d = m.spec.latent_dim;

  std::vector<double> d_alpha(n, 0.0);
  std::vector<Vector> d_norm(n, Vector(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = d_u.subspan(i * d, d);
    d_alpha[i] = dot(g, at.normalized[i]);
    for (std::size_t k = 0; k < d; ++k) d_norm[i][k] = alpha[i] * g[k];
  }

  const double c = at.score_scale / double(n - 1);
  std::vector<Vector> d_latent(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector d_proj(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      axpy(c * (d_alpha[i] + d_alpha[j]), at.projected[j], d_proj);
    }
    const auto& chain = prep.effective[i];
    Vector delta = std::move(d_proj);
    for (std::size_t l = chain.size(); l-- > 0;) {
      if (l + 1 < chain.size()) {
        for (std::size_t r = 0; r < d; ++r) {
          if (!(at.chain_pre[i][l][r] > 0.0)) delta[r] = 0.0;
        }
      }
      add_outer(d_effective[i][l], 1.0, delta, at.chain_in[i][l]);
      delta = matvec_transposed(chain[l], delta);
    }
    axpy(1.0, delta, d_norm[i]);

    if (m.spec.attention.unit_norm_inputs) {
      const double r = at.raw_norm[i];
      const double denom = r + kUnitNormGuard;
      Vector dv = scaled(d_norm[i], 1.0 / denom);
      if (r > 0.0) {
        // v′ = v / (‖v‖ + ε); the raw latent is normalized · denom.
        const double proj = dot(at.normalized[i], d_norm[i]) * denom;  // vᵀ g
        axpy(-proj / (r * denom * denom), scaled(at.normalized[i], denom), dv);
      }
      d_latent[i] = std::move(dv);
    } else {
      d_latent[i] = std::move(d_norm[i]);
    }
  }
  return d_latent;
}

}  // namespace detail

inline ForwardResult forward(const MultimodalAutoencoder& model, std::span<const Vector> inputs) {
  const auto prep = detail::prepare_attention(model);
  detail::SampleTrace tr;
  detail::forward_sample(model, prep, inputs, tr);
  return std::move(tr.result);
}

/// forward() over many samples, normalizing the attention weights once.
inline std::vector<ForwardResult> forward_many(const MultimodalAutoencoder& model,
                                               std::span<const std::vector<Vector>> samples) {
  const auto prep = detail::prepare_attention(model);
  std::vector<ForwardResult> out;
  out.reserve(samples.size());
  detail::SampleTrace tr;
  for (const auto& s : samples) {
    detail::forward_sample(model, prep, s, tr);
    out.push_back(std::move(tr.result));
  }
  return out;
}

/// Per-modality squared reconstruction errors ‖x⁽ⁱ⁾ − D⁽ⁱ⁾(u)‖².
inline Vector reconstruction_errors(const ForwardResult& fr, std::span<const Vector> inputs) {
  Vector out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double e = distance(inputs[i], fr.reconstructions[i]);
    out[i] = e * e;
  }
  return out;
}

/// Σᵢ ‖x⁽ⁱ⁾ − D⁽ⁱ⁾(u)‖² plus the attention regularizer.
inline double loss(const MultimodalAutoencoder& model, std::span<const Vector> inputs) {
  const auto fr = forward(model, inputs);
  double s = 0.0;
  for (double e : reconstruction_errors(fr, inputs)) s += e;
  return s + model.regularization();
}

struct GradientResult {
  double loss = 0.0;
  /// Same shapes as the model.
  MultimodalAutoencoder grad;
};

/// Exact reverse-mode gradient of the mean per-sample loss over `batch`
/// (each element is one sample's list of modality inputs).
inline GradientResult batch_gradient(const MultimodalAutoencoder& model,
                                     std::span<const std::vector<Vector>> batch) {
  if (batch.empty()) throw InvalidInputError("empty batch");
  const auto prep = detail::prepare_attention(model);
  const std::size_t n = model.modalities();
  GradientResult out{0.0, model.zeros_like()};
  std::vector<std::vector<Matrix>> d_effective = out.grad.attention;

  const double w = 1.0 / double(batch.size());
  detail::SampleTrace tr;
  for (const auto& inputs : batch) {
    detail::forward_sample(model, prep, inputs, tr);
    Vector d_u(tr.result.fused.u.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Vector resid = subtract(tr.result.reconstructions[i], inputs[i]);
      out.loss += w * dot(resid, resid);
      for (double& r : resid) r *= 2.0 * w;
      const Vector du_i = model.decoders[i].backward(tr.decoders[i], resid, out.grad.decoders[i]);
      axpy(1.0, du_i, d_u);
    }
    std::vector<Vector> d_latent(n);
    switch (model.spec.fusion) {
      case FusionType::Sum:
        for (std::size_t i = 0; i < n; ++i) d_latent[i] = d_u;
        break;
      case FusionType::Concat: {
        std::size_t off = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t di = tr.result.latents[i].size();
          d_latent[i].assign(d_u.begin() + off, d_u.begin() + off + di);
          off += di;
        }
        break;
      }
      case FusionType::Attention:
        d_latent = detail::attention_backward(model, prep, tr, d_u, d_effective);
        break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      model.encoders[i].backward(tr.encoders[i], d_latent[i], out.grad.encoders[i]);
    }
  }

  if (model.spec.fusion == FusionType::Attention) {
    const double lambda = model.spec.attention.lambda_reg;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < model.attention[i].size(); ++l) {
        const Matrix& raw = model.attention[i][l];
        Matrix& g = out.grad.attention[i][l];
        const Matrix& ge = d_effective[i][l];
        if (model.spec.attention.spectral_normalize && prep.sn[i][l].value > 0.0) {
          // W′ = W/σ(W), ∂σ/∂W = u vᵀ
          const auto& sn = prep.sn[i][l];
          double inner = 0.0;
          for (std::size_t q = 0; q < raw.size(); ++q) inner += ge.data()[q] * raw.data()[q];
          g = ge * (1.0 / sn.value);
          add_outer(g, -inner / (sn.value * sn.value), sn.left, sn.right);
        } else {
          g = ge;
        }
        axpy(2.0 * lambda, raw.data(), g.data());
      }
    }
    out.loss += model.regularization();
  }
  return out;
}

/// Gradient of loss(model, inputs) for a single sample.
inline GradientResult backward(const MultimodalAutoencoder& model, std::span<const Vector> inputs) {
  std::vector<std::vector<Vector>> batch{std::vector<Vector>(inputs.begin(), inputs.end())};
  return batch_gradient(model, batch);
}

}  // namespace mmlip::ae
