#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "mmlip/autoencoder.hpp"
#include "mmlip/errors.hpp"
#include "mmlip/synthdata.hpp"
#include "mmlip/train.hpp"

namespace mmlip::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSnapshotFormatVersion = 1;

// ---------------------------------------------------------------------------
// Files

/// Writes via a sibling temporary file and rename, so readers never observe
/// a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Round-trippable text for a double; "nan"/"inf"/"-inf" for non-finite.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw IoError("not a number: '" + s + "'");
  return v;
}

/// Comma-separated table assembled in memory.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  template <class... Ts>
  void add(const Ts&... cells) {
    std::vector<std::string> r;
    (r.push_back(cell(cells)), ...);
    row(r);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw IoError("csv row width does not match header");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) text_ += ',';
      text_ += cells[c];
    }
    text_ += '\n';
  }

  const std::string& str() const noexcept { return text_; }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(std::size_t x) { return std::to_string(x); }
  static std::string cell(int x) { return std::to_string(x); }
  static std::string cell(bool x) { return x ? "1" : "0"; }

  std::size_t columns_;
  std::string text_;
};

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    cells.push_back(cur);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Datasets: one CSV per modality plus manifest.yaml

template <class T>
inline YAML::Node yaml_seq(const std::vector<T>& xs) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& x : xs) n.push_back(x);
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

inline std::string emit_yaml(const YAML::Node& node) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << node;
  return std::string(e.c_str()) + "\n";
}

inline YAML::Node spec_to_yaml(const data::SyntheticSpec& s) {
  YAML::Node n;
  n["n_samples"] = s.n_samples;
  n["shared_latent_dim"] = s.shared_latent_dim;
  n["modality_dims"] = yaml_seq(s.modality_dims);
  n["noise_std"] = s.noise_std;
  n["window_length"] = s.window_length;
  n["window_step"] = s.window_step;
  n["smoothness"] = s.smoothness;
  n["seed"] = s.seed;
  return n;
}

inline void save_dataset(const fs::path& dir, const data::MultimodalDataset& ds,
                         const data::SyntheticSpec& spec) {
  ds.validate();
  for (std::size_t i = 0; i < ds.modality_count(); ++i) {
    const auto& m = ds.modalities[i];
    std::vector<std::string> header;
    for (std::size_t f = 0; f < m.cols(); ++f) header.push_back("f" + std::to_string(f));
    Csv csv(header);
    for (std::size_t k = 0; k < m.rows(); ++k) {
      std::vector<std::string> cells;
      for (double x : m.row(k)) cells.push_back(format_double(x));
      csv.row(cells);
    }
    write_file_atomic(dir / ("modality_" + std::to_string(i) + ".csv"), csv.str());
  }
  YAML::Node man;
  man["format_version"] = 1;
  man["spec"] = spec_to_yaml(spec);
  man["samples"] = ds.samples();
  YAML::Node mods(YAML::NodeType::Sequence);
  for (std::size_t i = 0; i < ds.modality_count(); ++i) {
    YAML::Node mn;
    mn["file"] = "modality_" + std::to_string(i) + ".csv";
    mn["features"] = ds.modalities[i].cols();
    mn["mean"] = yaml_seq(ds.means[i]);
    mn["std"] = yaml_seq(ds.stds[i]);
    mods.push_back(mn);
  }
  man["modalities"] = mods;
  std::vector<int> faulty(ds.faulty.begin(), ds.faulty.end());
  std::vector<int> test(ds.test.begin(), ds.test.end());
  man["faulty"] = yaml_seq(faulty);
  man["test"] = yaml_seq(test);
  write_file_atomic(dir / "manifest.yaml", emit_yaml(man));
}

inline data::MultimodalDataset load_dataset(const fs::path& dir) {
  YAML::Node man;
  try {
    man = YAML::LoadFile((dir / "manifest.yaml").string());
  } catch (const YAML::Exception& e) {
    throw IoError("cannot read dataset manifest in " + dir.string() + ": " + e.what());
  }
  data::MultimodalDataset ds;
  try {
    for (const auto& mn : man["modalities"]) {
      const auto rows = parse_csv(read_file(dir / mn["file"].as<std::string>()));
      const std::size_t cols = mn["features"].as<std::size_t>();
      if (rows.empty() || rows.front().size() != cols) throw IoError("bad header in " + mn["file"].as<std::string>());
      Matrix m(rows.size() - 1, cols);
      for (std::size_t k = 1; k < rows.size(); ++k) {
        if (rows[k].size() != cols) throw IoError("ragged row in " + mn["file"].as<std::string>());
        for (std::size_t f = 0; f < cols; ++f) m(k - 1, f) = parse_double(rows[k][f]);
      }
      ds.modalities.push_back(std::move(m));
      ds.means.push_back(mn["mean"].as<std::vector<double>>());
      ds.stds.push_back(mn["std"].as<std::vector<double>>());
    }
    for (int v : man["faulty"].as<std::vector<int>>()) ds.faulty.push_back(std::uint8_t(v));
    for (int v : man["test"].as<std::vector<int>>()) ds.test.push_back(std::uint8_t(v));
  } catch (const YAML::Exception& e) {
    throw IoError("malformed dataset manifest: " + std::string(e.what()));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Model snapshots (JSON, row-major matrices)

inline json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline json mlp_to_json(const nn::Mlp& m) {
  json layers = json::array();
  for (std::size_t l = 0; l < m.layers(); ++l) {
    layers.push_back({{"weight", matrix_to_json(m.weights[l])}, {"bias", m.biases[l]}});
  }
  json acts = json::array();
  for (auto a : m.activations) acts.push_back(nn::activation_name(a));
  return {{"layers", layers}, {"hidden_activations", acts}};
}

inline nn::Mlp mlp_from_json(const json& j) {
  nn::Mlp m;
  for (const auto& l : j.at("layers")) {
    m.weights.push_back(matrix_from_json(l.at("weight")));
    m.biases.push_back(l.at("bias").get<Vector>());
  }
  for (const auto& a : j.at("hidden_activations")) m.activations.push_back(nn::parse_activation(a.get<std::string>()));
  return m;
}

inline json model_spec_to_json(const ae::ModelSpec& s) {
  return {{"modality_dims", s.modality_dims},
          {"hidden_widths", s.hidden_widths},
          {"latent_dim", s.latent_dim},
          {"activation", nn::activation_name(s.activation)},
          {"fusion", ae::fusion_name(s.fusion)},
          {"attention",
           {{"depth", s.attention.depth},
            {"unit_norm_inputs", s.attention.unit_norm_inputs},
            {"spectral_normalize", s.attention.spectral_normalize},
            {"scale_by_sqrt_d", s.attention.scale_by_sqrt_d},
            {"lambda_reg", s.attention.lambda_reg}}}};
}

inline ae::ModelSpec model_spec_from_json(const json& j) {
  ae::ModelSpec s;
  s.modality_dims = j.at("modality_dims").get<std::vector<std::size_t>>();
  s.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.activation = nn::parse_activation(j.at("activation").get<std::string>());
  s.fusion = ae::parse_fusion(j.at("fusion").get<std::string>());
  const auto& a = j.at("attention");
  s.attention.depth = a.at("depth").get<std::size_t>();
  s.attention.unit_norm_inputs = a.at("unit_norm_inputs").get<bool>();
  s.attention.spectral_normalize = a.at("spectral_normalize").get<bool>();
  s.attention.scale_by_sqrt_d = a.at("scale_by_sqrt_d").get<bool>();
  s.attention.lambda_reg = a.at("lambda_reg").get<double>();
  return s;
}

/// Data-dependent magnitudes measured on the training split when a model is
/// saved; they feed the bound report.
struct Measurements {
  Vector input_norm_max;            ///< per modality, max ‖x⁽ⁱ⁾‖
  double latent_norm_max = 0.0;     ///< max encoder output norm
  double attention_input_norm_max = 0.0;  ///< after optional unit-norm
  Vector decoder_jacobian_norm_max; ///< per decoder, max ‖∂D/∂u‖_F
  std::size_t samples = 0;
};

inline Measurements measure(const ae::MultimodalAutoencoder& model,
                            std::span<const std::vector<Vector>> samples) {
  const std::size_t n = model.modalities();
  Measurements m;
  m.input_norm_max.assign(n, 0.0);
  m.decoder_jacobian_norm_max.assign(n, 0.0);
  m.samples = samples.size();
  const auto results = ae::forward_many(model, samples);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      m.input_norm_max[i] = std::max(m.input_norm_max[i], norm2(samples[k][i]));
      const double ln = norm2(results[k].latents[i]);
      m.latent_norm_max = std::max(m.latent_norm_max, ln);
      const double an = model.spec.attention.unit_norm_inputs ? ln / (ln + ae::kUnitNormGuard) : ln;
      m.attention_input_norm_max = std::max(m.attention_input_norm_max, an);
      const Matrix j = model.decoders[i].input_jacobian(results[k].fused.u);
      m.decoder_jacobian_norm_max[i] = std::max(m.decoder_jacobian_norm_max[i], frobenius_norm(j));
    }
  }
  return m;
}

inline json measurements_to_json(const Measurements& m) {
  return {{"input_norm_max", m.input_norm_max},
          {"latent_norm_max", m.latent_norm_max},
          {"attention_input_norm_max", m.attention_input_norm_max},
          {"decoder_jacobian_norm_max", m.decoder_jacobian_norm_max},
          {"samples", m.samples}};
}

inline Measurements measurements_from_json(const json& j) {
  Measurements m;
  m.input_norm_max = j.at("input_norm_max").get<Vector>();
  m.latent_norm_max = j.at("latent_norm_max").get<double>();
  m.attention_input_norm_max = j.at("attention_input_norm_max").get<double>();
  m.decoder_jacobian_norm_max = j.at("decoder_jacobian_norm_max").get<Vector>();
  m.samples = j.at("samples").get<std::size_t>();
  return m;
}

struct Snapshot {
  ae::MultimodalAutoencoder model;
  Measurements measurements;
};

inline std::string snapshot_to_string(const Snapshot& s) {
  const auto& m = s.model;
  json enc = json::array();
  json dec = json::array();
  for (const auto& e : m.encoders) enc.push_back(mlp_to_json(e));
  for (const auto& d : m.decoders) dec.push_back(mlp_to_json(d));
  json att = json::array();
  for (const auto& chain : m.attention) {
    json c = json::array();
    for (const auto& w : chain) c.push_back(matrix_to_json(w));
    att.push_back(c);
  }
  json j = {{"format_version", kSnapshotFormatVersion},
            {"layout", "row-major"},
            {"spec", model_spec_to_json(m.spec)},
            {"encoders", enc},
            {"attention", att},
            {"decoders", dec},
            {"measurements", measurements_to_json(s.measurements)}};
  return j.dump(1) + "\n";
}

inline Snapshot snapshot_from_string(const std::string& text) {
  Snapshot s;
  try {
    const json j = json::parse(text);
    const int version = j.at("format_version").get<int>();
    if (version != kSnapshotFormatVersion) {
      throw IoError("unsupported snapshot format_version " + std::to_string(version));
    }
    auto spec = model_spec_from_json(j.at("spec"));
    s.model = ae::MultimodalAutoencoder(spec);
    for (std::size_t i = 0; i < spec.modalities(); ++i) {
      s.model.encoders[i] = mlp_from_json(j.at("encoders").at(i));
      s.model.decoders[i] = mlp_from_json(j.at("decoders").at(i));
      if (s.model.encoders[i].spec().widths != spec.encoder_spec(i).widths ||
          s.model.decoders[i].spec().widths != spec.decoder_spec(i).widths) {
        throw IoError("snapshot layer shapes do not match its spec");
      }
    }
    for (std::size_t i = 0; i < s.model.attention.size(); ++i) {
      for (std::size_t l = 0; l < s.model.attention[i].size(); ++l) {
        Matrix w = matrix_from_json(j.at("attention").at(i).at(l));
        if (w.rows() != spec.latent_dim || w.cols() != spec.latent_dim) {
          throw IoError("snapshot attention matrix has the wrong shape");
        }
        s.model.attention[i][l] = std::move(w);
      }
    }
    s.measurements = measurements_from_json(j.at("measurements"));
  } catch (const json::exception& e) {
    throw IoError("malformed snapshot: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw IoError("malformed snapshot: " + std::string(e.what()));
  }
  return s;
}

inline void save_snapshot(const fs::path& path, const Snapshot& s) {
  write_file_atomic(path, snapshot_to_string(s));
}

inline Snapshot load_snapshot(const fs::path& path) { return snapshot_from_string(read_file(path)); }

// ---------------------------------------------------------------------------
// Training logs (JSONL, one epoch per line)

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::string train_log_to_jsonl(const train::TrainLog& log) {
  std::string out;
  for (const auto& e : log.epochs) {
    json lip = json::object();
    for (const auto& s : e.lipschitz) {
      lip[s.name] = {{"value", s.estimate.value},
                     {"pairs_evaluated", s.estimate.pairs_evaluated},
                     {"pairs_skipped", s.estimate.pairs_skipped},
                     {"seed", s.estimate.seed}};
    }
    json j = {{"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"test_loss", e.test_loss},
              {"combined_train", e.combined_train},
              {"combined_test", e.combined_test},
              {"lipschitz", lip},
              {"model_lipschitz", number_or_null(e.model_lipschitz)}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace mmlip::io
