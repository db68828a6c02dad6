// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [work_dir]

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mmlip/mmlip.hpp"

using namespace mmlip;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++g_failures;
  std::printf("[%s] %2d %s: %s (%.1f s of %.0f s budget%s)\n", pass ? "PASS" : "FAIL", id, title.c_str(),
              o.detail.c_str(), secs, budget_s, in_time ? "" : ", over budget");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale) {
  Matrix m(r, c);
  rng.fill_normal(m.data(), scale);
  return m;
}

Vector random_vector(Rng& rng, std::size_t d, double scale = 1.0) {
  Vector v(d);
  rng.fill_normal(v, scale);
  return v;
}

fusion::AttentionParams random_attention(Rng& rng, std::size_t n, std::size_t d) {
  fusion::AttentionParams p;
  for (std::size_t i = 0; i < n; ++i) p.weights.push_back(random_matrix(rng, d, d, 1.0 / std::sqrt(double(d))));
  return p;
}

double largest_singular_value(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) e(Eigen::Index(r), Eigen::Index(c)) = m(r, c);
  }
  return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

// ---------------------------------------------------------------------------

Outcome attention_jacobian_fd() {
  Rng rng(101);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.index(3);
    const std::size_t d = 2 + rng.index(7);
    const auto params = random_attention(rng, n, d);
    std::vector<Vector> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(random_vector(rng, d));
    const fusion::FusionKind kind = fusion::Attention{params};
    for (std::size_t k = 0; k < n; ++k) {
      const Matrix analytic = fusion::attention_jacobian(params, v, k);
      Matrix fd(n * d, d);
      const double h = 1e-5;
      for (std::size_t c = 0; c < d; ++c) {
        auto vp = v, vm = v;
        vp[k][c] += h;
        vm[k][c] -= h;
        const auto up = fusion::fuse(kind, vp).u;
        const auto um = fusion::fuse(kind, vm).u;
        for (std::size_t r = 0; r < n * d; ++r) fd(r, c) = (up[r] - um[r]) / (2 * h);
      }
      Matrix diff = analytic;
      diff -= fd;
      worst = std::max(worst, frobenius_norm(diff) / std::max(frobenius_norm(fd), 1e-300));
    }
  }
  return {worst < 1e-6, fmt("max relative Frobenius error %.2e over 100 instances", worst)};
}

Outcome model_gradient_fd() {
  Rng rng(202);
  double worst = 0.0;
  std::string per_kind;
  for (auto fusion : {ae::FusionType::Sum, ae::FusionType::Concat, ae::FusionType::Attention}) {
    double kind_worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
      ae::ModelSpec spec;
      spec.modality_dims = {2 + rng.index(4), 2 + rng.index(4)};
      spec.hidden_widths = {3 + rng.index(3)};
      spec.latent_dim = 2 + rng.index(3);
      spec.fusion = fusion;
      spec.attention.lambda_reg = 0.05;
      auto model = ae::MultimodalAutoencoder::initialize(spec, 1000 + std::uint64_t(inst));
      std::vector<Vector> x;
      for (std::size_t d : spec.modality_dims) x.push_back(random_vector(rng, d));
      const auto g = ae::backward(model, x);
      const auto grads = std::as_const(g.grad).parameters();
      auto params = model.parameters();
      double num = 0.0, den = 0.0;
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t k = 0; k < params[t].size(); ++k) {
          const double old = params[t][k];
          const double h = 1e-6;
          params[t][k] = old + h;
          const double lp = ae::loss(model, x);
          params[t][k] = old - h;
          const double lm = ae::loss(model, x);
          params[t][k] = old;
          const double fd = (lp - lm) / (2 * h);
          num += (fd - grads[t][k]) * (fd - grads[t][k]);
          den += fd * fd;
        }
      }
      kind_worst = std::max(kind_worst, std::sqrt(num / std::max(den, 1e-300)));
    }
    worst = std::max(worst, kind_worst);
    per_kind += " " + ae::fusion_name(fusion) + fmt("=%.1e", kind_worst);
  }
  return {worst < 1e-5, "max relative gradient error per kind:" + per_kind};
}

Outcome attention_function_bound() {
  Rng rng(303);
  double worst_ratio = 0.0;
  bool ok = true;
  for (int cfg = 0; cfg < 20; ++cfg) {
    const std::size_t n = 2 + rng.index(3);
    const std::size_t d = 2 + rng.index(5);
    auto params = random_attention(rng, n, d);
    const double scale = rng.uniform(0.3, 2.0);
    for (auto& w : params.weights) w *= scale;
    const double r = rng.uniform(0.1, 1.0);
    double m_max = 0.0;
    for (const auto& w : params.weights) m_max = std::max(m_max, largest_singular_value(w));
    const double bound = bounds::attention_func_bound(m_max, r);
    const auto est = estimator::estimate_function_lipschitz(estimator::attention_map(params),
                                                            estimator::attention_domain(n, d, r), 10000,
                                                            estimator::kDefaultEpsilon, 7000 + std::uint64_t(cfg));
    ok = ok && est.value <= bound;
    worst_ratio = std::max(worst_ratio, est.value / bound);
  }
  return {ok, fmt("largest estimate / 4M^2R^2 = %.3f over 20 configurations", worst_ratio)};
}

Outcome attention_gradient_bound() {
  // Calibrate C_n per modality count on one set of weights, then check the
  // bound on fresh weights.
  Rng rng(404);
  std::vector<double> c_n(5, 0.0);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      const auto params = random_attention(rng, n, 3);
      const auto cal = estimator::calibrate_attention_grad_constant(params, 1.0, 4, 500 + std::uint64_t(rep));
      c_n[n] = std::max(c_n[n], cal.c_n);
    }
  }
  double ratio_lo = 1e300, ratio_hi = 0.0, worst = 0.0;
  bool ok = true;
  for (int cfg = 0; cfg < 12; ++cfg) {
    const std::size_t n = 2 + std::size_t(cfg % 3);
    const auto params = random_attention(rng, n, 3);
    double m_max = 0.0;
    for (const auto& w : params.weights) m_max = std::max(m_max, largest_singular_value(w));
    const double r = rng.uniform(0.2, 1.0);
    const auto grad = estimator::attention_gradient_map(params);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto e1 = estimator::estimate_gradient_lipschitz(grad, estimator::attention_domain(n, 3, r), 2000,
                                                             estimator::kDefaultEpsilon, seed);
      const auto e2 = estimator::estimate_gradient_lipschitz(grad, estimator::attention_domain(n, 3, 2 * r), 2000,
                                                             estimator::kDefaultEpsilon, seed);
      const double ratio = e2.value / e1.value;
      ratio_lo = std::min(ratio_lo, ratio);
      ratio_hi = std::max(ratio_hi, ratio);
      const double bound = bounds::attention_grad_bound(c_n[n], m_max, r);
      worst = std::max(worst, e1.value / bound);
      ok = ok && ratio >= 1.8 && ratio <= 2.2 && e1.value <= bound && e2.value <= bounds::attention_grad_bound(c_n[n], m_max, 2 * r);
    }
  }
  std::ostringstream s;
  s << "R-doubling ratio in [" << ratio_lo << ", " << ratio_hi << "]; largest estimate / (C_n M^3 R) = " << worst
    << " with C_2..4 = " << c_n[2] << ", " << c_n[3] << ", " << c_n[4];
  return {ok, s.str()};
}

Outcome aggregation_inequality() {
  Rng rng(505);
  std::size_t equal_cases = 0;
  bool ok = true;
  for (int t = 0; t < 100000; ++t) {
    const std::size_t len = 1 + rng.index(8);
    const double p_zero = rng.uniform(0.0, 1.0);
    Vector l(len, 0.0);
    std::size_t nonzero = 0;
    for (double& x : l) {
      if (rng.uniform(0.0, 1.0) >= p_zero) {
        x = rng.uniform(1e-3, 10.0);
        ++nonzero;
      }
    }
    const auto b = bounds::aggregation_bounds(l);
    const double tol = 1e-12 * std::max(1.0, b.l_sum);
    const bool equal = std::abs(b.l_sum - b.l_concat) <= tol;
    ok = ok && b.l_concat <= b.l_sum + tol && equal == (nonzero <= 1);
    equal_cases += equal ? 1 : 0;
  }
  return {ok, "1e5 vectors, " + std::to_string(equal_cases) + " equality cases, all with at most one nonzero"};
}

Outcome quadratic_oracle() {
  double worst = 0.0;
  for (std::size_t n_pairs : {1, 2, 10, 1000, 100000}) {
    for (std::size_t dim : {1, 3, 8}) {
      const auto est = estimator::estimate_gradient_lipschitz(
          [](std::span<const double> x) { return Vector(x.begin(), x.end()); }, {dim, -1.0, 1.0}, n_pairs,
          estimator::kDefaultEpsilon, 17);
      worst = std::max(worst, std::abs(est.value - 1.0));
    }
  }
  return {worst <= 1e-12, fmt("max |estimate - 1| = %.1e", worst)};
}

Outcome spectral_normalization() {
  Rng rng(606);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t r = 1 + rng.index(12);
    const std::size_t c = 1 + rng.index(12);
    const Matrix w = random_matrix(rng, r, c, rng.uniform(0.01, 10.0));
    worst = std::max(worst, std::abs(largest_singular_value(fusion::spectrally_normalized(w)) - 1.0));
  }
  return {worst <= 1e-4, fmt("max |sigma_max - 1| = %.1e (SVD oracle)", worst)};
}

double mean_final(const std::vector<cmd::TrialOutcome>& outs, ae::FusionType f) {
  double s = 0.0;
  int n = 0;
  for (const auto& o : outs) {
    if (o.fusion == f) {
      s += cmd::final_model_lipschitz(o.result.log);
      ++n;
    }
  }
  return s / n;
}

Outcome stability_replication(const fs::path& work) {
  config::ExperimentConfig cfg;  // defaults: 3 fusions, 5 trials, 200 epochs
  std::vector<cmd::TrialOutcome> outs;
  std::ostringstream sink;
  if (cmd::cmd_train(cfg, work / "stability", false, sink, &outs) != cmd::kExitOk) return {false, "train failed"};
  const double sum = mean_final(outs, ae::FusionType::Sum);
  const double concat = mean_final(outs, ae::FusionType::Concat);
  const double att = mean_final(outs, ae::FusionType::Attention);
  std::ostringstream s;
  s << "mean final model Lipschitz: attention " << att << ", sum " << sum << ", concat " << concat
    << "; attention/sum " << att / sum << " (need <= 0.2), attention/concat " << att / concat << " (need <= 0.5)";
  return {att <= 0.2 * sum && att <= 0.5 * concat, s.str()};
}

Outcome ablation_trend(const fs::path& work) {
  config::ExperimentConfig cfg;
  std::vector<cmd::AblationPoint> pts;
  std::ostringstream sink;
  if (cmd::cmd_ablate(cfg, work / "ablation", false, sink, &pts) != cmd::kExitOk) return {false, "ablate failed"};
  std::vector<double> lambdas, lips;
  bool nonincreasing = true;
  std::ostringstream s;
  s << "parameter norm by lambda:";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    lambdas.push_back(pts[i].lambda);
    lips.push_back(pts[i].final_lipschitz.mean);
    s << " " << pts[i].parameter_norm.mean;
    if (i > 0 && pts[i].parameter_norm.mean > pts[i - 1].parameter_norm.mean) nonincreasing = false;
  }
  const double rho = stats::spearman(lambdas, lips);
  s << "; final Lipschitz:";
  for (double l : lips) s << " " << l;
  s << "; Spearman " << rho;
  return {nonincreasing && rho <= 0.0, s.str()};
}

config::ExperimentConfig detection_config() {
  config::ExperimentConfig cfg;
  cfg.dataset.n_samples = 2500;
  cfg.model.fusions = {ae::FusionType::Attention};
  cfg.training.trials = 1;
  cfg.training.lipschitz_every = 1000;
  return cfg;
}

Outcome detection_calibration(const fs::path& work) {
  const auto cfg = detection_config();
  std::ostringstream sink;
  if (cmd::cmd_train(cfg, work / "detect_train", false, sink) != cmd::kExitOk) return {false, "train failed"};
  cmd::DetectionOutcome o;
  cmd::cmd_detect(work / "detect_train" / "attention" / "trial_0.snapshot.json", cfg, work / "detect", sink, &o);
  const double fp = o.clean_false_positive_rate;
  std::ostringstream s;
  s << "held-out clean FP rate " << fp << " over " << (o.report.counts.fp + o.report.counts.tn)
    << " samples (need [0.02, 0.08]); Bias-fault ROC-AUC " << o.roc_auc << " (need > 0.8)";
  return {fp >= 0.02 && fp <= 0.08 && o.roc_auc > 0.8, s.str()};
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel)) {
      why = rel.string() + " missing in rerun";
      return false;
    }
    if (io::read_file(e.path()) != io::read_file(b / rel)) {
      why = rel.string() + " differs";
      return false;
    }
    ++files;
  }
  why = std::to_string(files) + " files";
  return true;
}

Outcome determinism(const fs::path& work) {
  config::ExperimentConfig cfg;
  cfg.dataset.n_samples = 300;
  cfg.training.epochs = 4;
  cfg.training.trials = 2;
  cfg.training.lipschitz_every = 2;
  cfg.estimation.n_pairs = 500;
  cfg.ablation.lambdas = {1e-6, 1e-2};
  cfg.detection.fit_samples = 100;
  std::ostringstream sink;
  std::string report;
  bool ok = true;
  for (const char* run : {"run_a", "run_b"}) {
    const auto base = work / "determinism" / run;
    fs::remove_all(base);
    ok = ok && cmd::cmd_gen_data(cfg, base / "data", sink) == 0;
    ok = ok && cmd::cmd_train(cfg, base / "train", false, sink) == 0;
    const auto snap = base / "train" / "attention" / "trial_0.snapshot.json";
    ok = ok && cmd::cmd_bounds(snap, cfg, base / "bounds", sink) == 0;
    ok = ok && cmd::cmd_estimate(snap, cfg, base / "estimate", sink) == 0;
    ok = ok && cmd::cmd_ablate(cfg, base / "ablate", false, sink) == 0;
    ok = ok && cmd::cmd_detect(snap, cfg, base / "detect", sink) == 0;
  }
  if (!ok) return {false, "a command failed"};
  std::string why;
  ok = same_tree(work / "determinism" / "run_a", work / "determinism" / "run_b", why);
  return {ok, "all six commands rerun: " + why + (ok ? " byte-identical" : "")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mmlip_acceptance";
  fs::create_directories(work);

  run(1, "attention Jacobian vs finite differences", 10, attention_jacobian_fd);
  run(2, "model gradients vs finite differences", 60, model_gradient_fd);
  run(3, "attention function bound 4M^2R^2", 60, attention_function_bound);
  run(4, "attention gradient bound scaling", 120, attention_gradient_bound);
  run(5, "aggregation inequality", 5, aggregation_inequality);
  run(6, "quadratic oracle exactness", 1, quadratic_oracle);
  run(7, "spectral normalization", 5, spectral_normalization);
  run(8, "stability replication (5 trials x 200 epochs)", 900, [&] { return stability_replication(work); });
  run(9, "regularization ablation trend", 1200, [&] { return ablation_trend(work); });
  run(10, "detection calibration", 120, [&] { return detection_calibration(work); });
  run(11, "determinism of command outputs", 600, [&] { return determinism(work); });

  std::printf("%d of 11 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
