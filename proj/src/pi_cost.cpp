#include "entlab/pi_cost.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

namespace entlab {

std::string to_string(NonlinearKind k) {
  switch (k) {
    case NonlinearKind::softmax: return "softmax";
    case NonlinearKind::layernorm: return "layernorm";
    case NonlinearKind::gelu: return "gelu";
    case NonlinearKind::relu: return "relu";
  }
  return "?";
}

std::string to_string(CostTerm t) {
  switch (t) {
    case CostTerm::softmax: return "softmax";
    case CostTerm::layernorm: return "layernorm";
    case CostTerm::gelu: return "gelu";
    case CostTerm::relu: return "relu";
    case CostTerm::linear_flop: return "linear_flop";
    case CostTerm::fixed: return "fixed";
  }
  return "?";
}

std::uint64_t OpInventory::elements(NonlinearKind kind) const {
  std::uint64_t n = 0;
  for (const auto& e : entries)
    if (e.kind == kind) n += e.elements();
  return n;
}

std::uint64_t OpInventory::count(NonlinearKind kind) const {
  std::uint64_t n = 0;
  for (const auto& e : entries)
    if (e.kind == kind) n += e.count;
  return n;
}

std::string OpInventory::describe() const {
  static const char* abbrev[] = {"SM", "LN", "G", "R"};
  std::ostringstream os;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (i) os << ' ';
    os << abbrev[static_cast<int>(e.kind)] << ':' << e.count << "x[" << e.rows << 'x' << e.cols << ']';
  }
  return os.str();
}

OpInventory count_nonlinear_ops(const ArchConfig& a) {
  const std::uint64_t L = a.layers, H = a.heads, d = a.d_model, T = a.context;
  OpInventory inv;
  inv.entries.push_back({NonlinearKind::softmax, L * H, T, T});
  if (a.use_layernorm) inv.entries.push_back({NonlinearKind::layernorm, 2 * L, T, d});
  if (a.ffn_kind == FfnKind::gelu) inv.entries.push_back({NonlinearKind::gelu, L, T, 4 * d});
  if (a.ffn_kind == FfnKind::relu) inv.entries.push_back({NonlinearKind::relu, L, T, 4 * d});
  return inv;
}

FlopCount flops(const ArchConfig& a) {
  const std::uint64_t L = a.layers, d = a.d_model, T = a.context;
  FlopCount f;
  f.ffn = a.ffn_kind == FfnKind::scaled_fused ? (2 * T * d * d + 2 * T * d) * L : 16 * T * d * d * L;
  f.attn = (8 * T * d * d + 3 * T * T * d) * L;
  return f;
}

std::array<double, kCostTerms> cost_features(const ArchConfig& arch) {
  const OpInventory inv = count_nonlinear_ops(arch);
  return {static_cast<double>(inv.elements(NonlinearKind::softmax)),
          static_cast<double>(inv.elements(NonlinearKind::layernorm)),
          static_cast<double>(inv.elements(NonlinearKind::gelu)),
          static_cast<double>(inv.elements(NonlinearKind::relu)),
          static_cast<double>(flops(arch).total()),
          1.0};
}

// ---- cost model I/O ----

nlohmann::json CostModel::to_json() const {
  nlohmann::json j;
  for (std::size_t k = 0; k < kCostTerms; ++k) {
    const auto term = static_cast<CostTerm>(k);
    if (term == CostTerm::fixed)
      j["fixed"] = {{"bytes", bytes[k]}, {"seconds", seconds[k]}};
    else
      j[to_string(term)] = {{"bytes_per_element", bytes[k]}, {"seconds_per_element", seconds[k]}};
  }
  return j;
}

CostModel CostModel::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("cost model must be a JSON object");
  CostModel m;
  std::vector<std::string> missing;
  for (std::size_t k = 0; k < kCostTerms; ++k) {
    const auto term = static_cast<CostTerm>(k);
    const std::string name = to_string(term);
    const bool fixed = term == CostTerm::fixed;
    const char* bkey = fixed ? "bytes" : "bytes_per_element";
    const char* skey = fixed ? "seconds" : "seconds_per_element";
    if (!j.contains(name) || !j[name].is_object()) {
      missing.push_back(name);
      continue;
    }
    const auto& e = j[name];
    for (const char* key : {bkey, skey})
      if (!e.contains(key) || !e[key].is_number()) missing.push_back(name + "." + key);
    if (e.contains(bkey) && e[bkey].is_number()) m.bytes[k] = e[bkey].get<double>();
    if (e.contains(skey) && e[skey].is_number()) m.seconds[k] = e[skey].get<double>();
    if (m.bytes[k] < 0.0 || m.seconds[k] < 0.0) throw ConfigError("negative unit cost for '" + name + "'");
  }
  if (!missing.empty()) {
    std::string msg = "cost model is missing entries:";
    for (auto& s : missing) msg += " " + s;
    throw ConfigError(msg);
  }
  return m;
}

CostModel CostModel::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cost model '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

CostModel CostModel::calibrated_default() {
  static const CostModel model = calibrate(CalibrationSeed::standard(), published_observations()).model;
  return model;
}

// ---- estimation ----

namespace {

std::pair<double, double> predict(const ArchConfig& arch, const CostModel& m) {
  const auto f = cost_features(arch);
  double b = 0.0, s = 0.0;
  for (std::size_t k = 0; k < kCostTerms; ++k) {
    b += f[k] * m.bytes[k];
    s += f[k] * m.seconds[k];
  }
  return {b / 1e9, s / 60.0};
}

std::optional<double> ratio(double base, double x) {
  if (!(base > 0.0) || !(x > 0.0)) return std::nullopt;
  return base / x;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("n/a"); }

}  // namespace

CostReport estimate(const ArchConfig& arch, const CostModel& model) {
  CostReport r;
  r.arch = arch;
  r.inventory = count_nonlinear_ops(arch);
  r.flop_count = flops(arch);
  std::tie(r.est_comm_gb, r.est_latency_min) = predict(arch, model);
  ArchConfig base = ArchConfig::preset(r.baseline);
  base.layers = arch.layers;
  base.heads = arch.heads;
  base.d_model = arch.d_model;
  base.context = arch.context;
  base.vocab_size = arch.vocab_size;
  const auto [bc, bl] = predict(base, model);
  r.comm_savings = ratio(bc, r.est_comm_gb);
  r.latency_savings = ratio(bl, r.est_latency_min);
  return r;
}

nlohmann::json CostReport::to_json() const {
  nlohmann::json inv = nlohmann::json::array();
  for (const auto& e : inventory.entries)
    inv.push_back({{"op", to_string(e.kind)}, {"count", e.count}, {"shape", {e.rows, e.cols}}});
  return {
      {"arch", arch.name()},
      {"dims", {{"L", arch.layers}, {"H", arch.heads}, {"d", arch.d_model}, {"T", arch.context}}},
      {"inventory", inv},
      {"flops", {{"ffn", flop_count.ffn}, {"attn", flop_count.attn}}},
      {"est_comm_gb", est_comm_gb},
      {"est_latency_min", est_latency_min},
      {"savings", {{"baseline", baseline}, {"comm", opt_json(comm_savings)}, {"latency", opt_json(latency_savings)}}},
  };
}

// ---- published observations ----

namespace {
Observation gpt2_row(const char* table, const char* arch, std::size_t L, std::size_t T, double comm, double lat) {
  Observation o;
  o.arch = ArchConfig::preset(arch);
  o.arch.layers = L;
  o.arch.heads = 12;
  o.arch.d_model = 768;
  o.arch.context = T;
  o.arch.vocab_size = 50257;
  o.label = std::string(table) + ":" + arch;
  o.comm_gb = comm;
  o.latency_min = lat;
  return o;
}
}  // namespace

std::vector<Observation> published_observations_ctx128_512() {
  return {
      gpt2_row("L12_T128", "sm_ln_g", 12, 128, 25.32, 8.21),  gpt2_row("L12_T128", "sm_ln_r", 12, 128, 9.44, 6.06),
      gpt2_row("L12_T128", "sm_scfuffn", 12, 128, 6.43, 4.76), gpt2_row("L12_T512", "sm_ln_g", 12, 512, 145.24, 30.74),
      gpt2_row("L12_T512", "sm_ln_r", 12, 512, 81.71, 23.54), gpt2_row("L12_T512", "sm_scfuffn", 12, 512, 69.68, 19.44),
  };
}

std::vector<Observation> published_observations() {
  auto rows = published_observations_ctx128_512();
  rows.push_back(gpt2_row("L12_T256", "sm_ln_g", 12, 256, 58.51, 16.57));
  rows.push_back(gpt2_row("L12_T256", "sm_ln_r", 12, 256, 26.73, 12.59));
  rows.push_back(gpt2_row("L12_T256", "sm_scfuffn", 12, 256, 20.72, 10.45));
  rows.push_back(gpt2_row("L18_T128", "sm_ln_g", 18, 128, 37.17, 10.77));
  rows.push_back(gpt2_row("L18_T128", "sm_ln_r", 18, 128, 13.34, 8.04));
  rows.push_back(gpt2_row("L18_T128", "sm_scfuffn", 18, 128, 8.83, 6.07));
  return rows;
}

// ---- calibration ----

CalibrationSeed CalibrationSeed::standard() {
  CalibrationSeed s;
  s.free.fill(true);
  s.free[static_cast<std::size_t>(CostTerm::layernorm)] = false;
  return s;
}

double Calibration::max_abs_comm_residual() const {
  double m = 0.0;
  for (double r : comm_residuals) m = std::max(m, std::fabs(r));
  return m;
}

double Calibration::max_abs_latency_residual() const {
  double m = 0.0;
  for (double r : latency_residuals) m = std::max(m, std::fabs(r));
  return m;
}

namespace {

// Lawson-Hanson active-set NNLS: min ||A x - b|| subject to x >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index n = A.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, A.norm() * b.norm());
  auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[j]) idx.push_back(j);
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    Eigen::VectorXd sp = Ap.colPivHouseholderQr().solve(b);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) s[idx[k]] = sp[static_cast<Eigen::Index>(k)];
    return s;
  };
  for (int outer = 0; outer < 10 * n + 10; ++outer) {
    Eigen::VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    double wmax = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[j] && w[j] > wmax) {
        wmax = w[j];
        best = j;
      }
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < 10 * n + 10; ++inner) {
      Eigen::VectorXd s = solve_passive();
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && s[j] <= 0.0) feasible = false;
      if (feasible) {
        x = s;
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && s[j] <= 0.0) alpha = std::min(alpha, x[j] / (x[j] - s[j]));
      x += alpha * (s - x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && x[j] <= 1e-15) {
          passive[j] = false;
          x[j] = 0.0;
        }
    }
  }
  return x;
}

}  // namespace

Calibration calibrate(const CalibrationSeed& seed, std::span<const Observation> obs) {
  if (obs.empty()) throw ConfigError("calibration needs at least one observation");
  std::vector<std::size_t> free_terms;
  for (std::size_t k = 0; k < kCostTerms; ++k)
    if (seed.free[k]) free_terms.push_back(k);
  const Eigen::Index m = static_cast<Eigen::Index>(obs.size());
  const Eigen::Index n = static_cast<Eigen::Index>(free_terms.size());

  // Relative-residual weighting: each row is divided by its observed value.
  Eigen::MatrixXd F(m, static_cast<Eigen::Index>(kCostTerms));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto f = cost_features(obs[i].arch);
    for (std::size_t k = 0; k < kCostTerms; ++k) F(i, static_cast<Eigen::Index>(k)) = f[k];
  }
  Eigen::MatrixXd A(m, n);
  for (Eigen::Index c = 0; c < n; ++c) A.col(c) = F.col(static_cast<Eigen::Index>(free_terms[c]));
  Eigen::VectorXd colscale(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    colscale[c] = A.col(c).cwiseAbs().maxCoeff();
    if (colscale[c] > 0.0) A.col(c) /= colscale[c];
  }

  if (n > 0) {
    std::vector<std::string> undetermined;
    if (m == 0) {
      for (auto k : free_terms) undetermined.push_back(to_string(static_cast<CostTerm>(k)));
    } else {
      Eigen::MatrixXd W = A;
      for (Eigen::Index i = 0; i < m; ++i) W.row(i) /= std::max(obs[i].comm_gb, 1e-300);
      // Terms with a component in the null space cannot be identified.
      Eigen::FullPivLU<Eigen::MatrixXd> lu(W);
      lu.setThreshold(1e-10);
      if (lu.rank() < n) {
        const Eigen::MatrixXd ker = lu.kernel();
        for (Eigen::Index c = 0; c < n; ++c)
          if (ker.row(c).cwiseAbs().maxCoeff() > 1e-8)
            undetermined.push_back(to_string(static_cast<CostTerm>(free_terms[c])));
      }
    }
    if (!undetermined.empty()) {
      std::string msg = "calibration is under-determined by " + std::to_string(m) + " observation(s); free parameters:";
      for (auto& s : undetermined) msg += " " + s;
      throw ConfigError(msg);
    }
  }

  Calibration cal;
  cal.model = seed.initial;
  auto fit = [&](auto target, std::array<double, kCostTerms>& unit) {
    Eigen::VectorXd y(m), fixed_part = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      y[i] = target(obs[i]);
      for (std::size_t k = 0; k < kCostTerms; ++k)
        if (!seed.free[k]) fixed_part[i] += F(i, static_cast<Eigen::Index>(k)) * unit[k];
    }
    Eigen::MatrixXd Aw = A;
    Eigen::VectorXd bw(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Aw.row(i) /= y[i];
      bw[i] = (y[i] - fixed_part[i]) / y[i];
    }
    const Eigen::VectorXd x = n > 0 ? nnls(Aw, bw) : Eigen::VectorXd();
    for (Eigen::Index c = 0; c < n; ++c) unit[free_terms[c]] = colscale[c] > 0.0 ? x[c] / colscale[c] : 0.0;
  };
  fit([](const Observation& o) { return o.comm_gb * 1e9; }, cal.model.bytes);
  fit([](const Observation& o) { return o.latency_min * 60.0; }, cal.model.seconds);

  for (const auto& o : obs) {
    const auto [c, l] = predict(o.arch, cal.model);
    cal.comm_residuals.push_back((c - o.comm_gb) / o.comm_gb);
    cal.latency_residuals.push_back((l - o.latency_min) / o.latency_min);
  }
  return cal;
}

}  // namespace entlab
