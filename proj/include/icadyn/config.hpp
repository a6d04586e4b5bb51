#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <Eigen/Core>

#include "icadyn/coefficients.hpp"
#include "icadyn/nonlinearity.hpp"
#include "icadyn/particles.hpp"
#include "icadyn/phases.hpp"
#include "icadyn/sources.hpp"
#include "icadyn/trainer.hpp"

namespace icadyn {

using nlohmann::json;

// Validation failure tied to a config field; the CLI maps these to exit 2.
struct ConfigError : std::runtime_error {
  std::string path;
  ConfigError(std::string p, const std::string& msg)
      : std::runtime_error("config error at " + p + ": " + msg), path(std::move(p)) {}
};

namespace cfg_detail {

inline const json& require_key(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "." + key, "missing required field");
  return *it;
}

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, "wrong type (found " + std::string(j.type_name()) + ")");
  }
}

template <typename T>
T require(const json& j, const std::string& path, const std::string& key) {
  return get_as<T>(require_key(j, path, key), path + "." + key);
}

template <typename T>
T optional_of(const json& j, const std::string& path, const std::string& key, T fallback) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return get_as<T>(*it, path + "." + key);
}

}  // namespace cfg_detail

inline json source_to_json(const SourceSpec& s) {
  json j;
  j["kind"] = to_string(s.kind);
  if (s.kind == SourceKind::BetaMixture) j["beta"] = s.beta;
  if (s.kind == SourceKind::Custom) {
    j["sampler"] = s.sampler;
    if (s.declared_moments) {
      j["moments"] = {{"m3", s.declared_moments->m3},
                      {"m4", s.declared_moments->m4},
                      {"m6", s.declared_moments->m6}};
    }
  }
  return j;
}

inline SourceSpec source_from_json(const json& j, const std::string& path) {
  const std::string kind = cfg_detail::require<std::string>(j, path, "kind");
  if (kind == "beta") {
    const double beta = cfg_detail::require<double>(j, path, "beta");
    if (!(beta >= 0.0 && beta <= 1.0))
      throw ConfigError(path + ".beta", "beta must lie in [0, 1], got " + std::to_string(beta));
    return SourceSpec::beta_mixture(beta);
  }
  if (kind == "rademacher") return SourceSpec::rademacher();
  if (kind == "uniform") return SourceSpec::uniform_sym();
  if (kind == "custom") {
    const std::string name = cfg_detail::require<std::string>(j, path, "sampler");
    std::optional<MomentSet> moments;
    if (j.contains("moments")) {
      const json& m = j.at("moments");
      moments = MomentSet{cfg_detail::require<double>(m, path + ".moments", "m3"),
                          cfg_detail::require<double>(m, path + ".moments", "m4"),
                          cfg_detail::require<double>(m, path + ".moments", "m6")};
    }
    return SourceSpec::custom(name, moments);
  }
  throw ConfigError(path + ".kind", "unknown source kind '" + kind + "'");
}

inline std::vector<SourceSpec> sources_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array");
  std::vector<SourceSpec> out;
  for (size_t i = 0; i < j.size(); ++i)
    out.push_back(source_from_json(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

struct GridSpec {
  double min = 0.0, max = 1.0;
  int count = 2;
  bool log = false;

  std::vector<double> values() const {
    std::vector<double> v;
    if (count == 1) {
      v.push_back(min);
      return v;
    }
    for (int k = 0; k < count; ++k) {
      const double f = static_cast<double>(k) / (count - 1);
      v.push_back(log ? min * std::pow(max / min, f) : min + f * (max - min));
    }
    return v;
  }

  json to_json() const { return {{"min", min}, {"max", max}, {"count", count}, {"log", log}}; }

  static GridSpec parse(const json& j, const std::string& path) {
    GridSpec g;
    g.min = cfg_detail::require<double>(j, path, "min");
    g.max = cfg_detail::require<double>(j, path, "max");
    g.count = cfg_detail::require<int>(j, path, "count");
    g.log = cfg_detail::optional_of<bool>(j, path, "log", false);
    if (g.count < 1) throw ConfigError(path + ".count", "must be at least 1");
    if (g.log && !(g.min > 0.0)) throw ConfigError(path + ".min", "log grid needs min > 0");
    return g;
  }
};

struct Q0Spec {
  enum class Kind { Diag, Full };
  Kind kind = Kind::Diag;
  double value = 0.3;
  std::vector<std::vector<double>> rows;

  Eigen::MatrixXd matrix(int p) const {
    if (kind == Kind::Diag) return Eigen::MatrixXd::Identity(p, p) * value;
    Eigen::MatrixXd Q(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < rows[i].size(); ++j)
        Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return Q;
  }

  json to_json() const {
    if (kind == Kind::Diag) return {{"kind", "diag"}, {"value", value}};
    return {{"kind", "full"}, {"rows", rows}};
  }

  static Q0Spec parse(const json& j, const std::string& path, int p) {
    Q0Spec q;
    const std::string kind = cfg_detail::require<std::string>(j, path, "kind");
    if (kind == "diag") {
      q.kind = Kind::Diag;
      q.value = cfg_detail::require<double>(j, path, "value");
    } else if (kind == "full") {
      q.kind = Kind::Full;
      q.rows = cfg_detail::require<std::vector<std::vector<double>>>(j, path, "rows");
      if (static_cast<int>(q.rows.size()) != p)
        throw ConfigError(path + ".rows", "expected " + std::to_string(p) + " rows");
      for (size_t i = 0; i < q.rows.size(); ++i)
        if (static_cast<int>(q.rows[i].size()) != p)
          throw ConfigError(path + ".rows[" + std::to_string(i) + "]",
                            "expected " + std::to_string(p) + " entries");
    } else {
      throw ConfigError(path + ".kind", "unknown overlap kind '" + kind + "'");
    }
    return q;
  }
};

inline json coeffs_to_json(const CoeffMethod& m) {
  switch (m.kind) {
    case CoeffMethod::Kind::ClosedFormCubic: return {{"kind", "closed_form"}};
    case CoeffMethod::Kind::Quadrature: return {{"kind", "quadrature"}, {"nodes", m.nodes}};
    case CoeffMethod::Kind::MonteCarlo:
      return {{"kind", "monte_carlo"}, {"samples", m.samples}, {"seed", m.seed}};
  }
  return {};
}

inline CoeffMethod coeffs_from_json(const json& j, const std::string& path) {
  const std::string kind = cfg_detail::require<std::string>(j, path, "kind");
  if (kind == "closed_form") return CoeffMethod::closed_form();
  if (kind == "quadrature") {
    const int nodes = cfg_detail::optional_of<int>(j, path, "nodes", 16);
    if (nodes < 1) throw ConfigError(path + ".nodes", "must be positive");
    return CoeffMethod::quadrature(nodes);
  }
  if (kind == "monte_carlo") {
    const long samples = cfg_detail::optional_of<long>(j, path, "samples", 1000000);
    const std::uint64_t seed = cfg_detail::optional_of<std::uint64_t>(j, path, "seed", 0);
    if (samples < 2) throw ConfigError(path + ".samples", "must be at least 2");
    return CoeffMethod::monte_carlo(samples, seed);
  }
  throw ConfigError(path + ".kind", "unknown coefficient method '" + kind + "'");
}

inline json reg_to_json(const Regularizer& r) {
  if (r.kind == Regularizer::Kind::L1) return {{"kind", "l1"}, {"lambda", r.lambda}};
  return {{"kind", "none"}};
}

inline Regularizer reg_from_json(const json& j, const std::string& path) {
  const std::string kind = cfg_detail::require<std::string>(j, path, "kind");
  if (kind == "none") return Regularizer::none();
  if (kind == "l1") {
    const double lambda = cfg_detail::require<double>(j, path, "lambda");
    if (lambda < 0.0) throw ConfigError(path + ".lambda", "must be nonnegative");
    return Regularizer::l1(lambda);
  }
  throw ConfigError(path + ".kind",
                    "unknown regularizer '" + kind + "' (custom penalties are code-only)");
}

inline Nonlinearity nonlinearity_from_json(const json& j, const std::string& path) {
  const std::string s = cfg_detail::get_as<std::string>(j, path);
  try {
    return nonlinearity_from_string(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

struct BasisCfg {
  enum class Kind { Haar, Sparse, File };
  Kind kind = Kind::Haar;
  std::vector<double> rho;
  std::string path;

  json to_json() const {
    switch (kind) {
      case Kind::Haar: return {{"kind", "haar"}};
      case Kind::Sparse: return {{"kind", "sparse"}, {"rho", rho}};
      case Kind::File: return {{"kind", "file"}, {"path", path}};
    }
    return {};
  }

  static BasisCfg parse(const json& j, const std::string& jpath) {
    BasisCfg b;
    const std::string kind = cfg_detail::require<std::string>(j, jpath, "kind");
    if (kind == "haar") {
      b.kind = Kind::Haar;
    } else if (kind == "sparse") {
      b.kind = Kind::Sparse;
      b.rho = cfg_detail::require<std::vector<double>>(j, jpath, "rho");
      for (size_t i = 0; i < b.rho.size(); ++i)
        if (!(b.rho[i] > 0.0 && b.rho[i] <= 1.0))
          throw ConfigError(jpath + ".rho[" + std::to_string(i) + "]",
                            "occupancy must lie in (0, 1]");
    } else if (kind == "file") {
      b.kind = Kind::File;
      b.path = cfg_detail::require<std::string>(j, jpath, "path");
    } else {
      throw ConfigError(jpath + ".kind", "unknown basis kind '" + kind + "'");
    }
    return b;
  }
};

struct SimulateCfg {
  long n = 2000;
  int p = 2;
  double tau = 0.01;
  std::vector<SourceSpec> specs;
  Q0Spec q0;
  Nonlinearity f = Nonlinearity::CubicMinus;
  Regularizer reg;
  OrthoScheme scheme = OrthoScheme::GramSchmidt;
  BasisCfg basis;
  double horizon = 200.0;
  long record_every = 0;
  int replicas = 1;
};

struct PredictCfg {
  int p = 2;
  double tau = 0.01;
  std::vector<SourceSpec> specs;
  Q0Spec q0;
  Nonlinearity f = Nonlinearity::CubicMinus;
  std::string rhs = "generic";  // generic | cubic_p2
  CoeffMethod coeffs;
  OdeOpts opts;
};

struct ParticlesCfg {
  long N = 100000;
  double tau = 0.01;
  std::vector<SourceSpec> specs;
  Q0Spec q0;
  std::vector<double> rho;
  Nonlinearity f = Nonlinearity::CubicMinus;
  Regularizer reg;
  CloudOpts opts;
  int bins = 61;
  std::array<double, 2> range = {-3.0, 3.0};
  std::vector<double> snapshots;
};

struct FieldCfg {
  double tau = 0.001;
  std::array<double, 2> betas = {0.2, 1.0};
  int sign = -1;
  GridSpec grid;
};

struct PhaseCfg {
  std::vector<double> taus;
  std::optional<GridSpec> m4_grid;
  std::optional<GridSpec> m6_grid;
  bool feasible_only = true;
  std::optional<FieldCfg> field;
};

struct StaircaseCfg {
  std::vector<double> taus;
  std::vector<double> betas;
  StaircaseOpts opts;
};

struct TauMaxEntry {
  double ratio = 1.0;
  std::vector<double> betas;
};

struct TauMaxCfg {
  std::vector<TauMaxEntry> entries;
  TauMaxOpts opts;
};

struct SyntheticCfg {
  long N = 2400;
  int B = 200;
  long n1 = 300;
  long n2 = 260;
};

struct RealdataCfg {
  std::optional<std::string> data;
  std::optional<std::string> labels;
  std::optional<SyntheticCfg> synthetic;
  std::vector<int> classes;
  std::vector<SourceSpec> specs;
  double tau = 0.01;
  Q0Spec q0;
  int replicas = 20;
  double horizon = 200.0;
  std::array<int, 2> grid = {0, 0};
};

struct CompareCfg {
  std::string sim;
  std::string ode;
  double band = 2.0;
};

struct ExperimentConfig {
  std::string command;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int threads = 1;

  std::optional<SimulateCfg> simulate;
  std::optional<PredictCfg> predict;
  std::optional<ParticlesCfg> particles;
  std::optional<PhaseCfg> phase;
  std::optional<StaircaseCfg> staircase;
  std::optional<TauMaxCfg> taumax;
  std::optional<RealdataCfg> realdata;
  std::optional<CompareCfg> compare;

  static ExperimentConfig parse(const json& j);
  json to_json() const;
};

namespace cfg_detail {

inline OdeOpts ode_opts_from_json(const json& j, const std::string& path) {
  OdeOpts o;
  o.t_end = optional_of<double>(j, path, "t_end", o.t_end);
  o.record_dt = optional_of<double>(j, path, "record_dt", o.record_dt);
  o.atol = optional_of<double>(j, path, "atol", o.atol);
  o.rtol = optional_of<double>(j, path, "rtol", o.rtol);
  o.steady_tol = optional_of<double>(j, path, "steady_tol", o.steady_tol);
  o.rk4_dt = optional_of<double>(j, path, "rk4_dt", o.rk4_dt);
  const std::string stepper = optional_of<std::string>(j, path, "stepper", "rk45");
  if (stepper == "rk45") o.stepper = OdeStepper::RK45;
  else if (stepper == "rk4") o.stepper = OdeStepper::RK4;
  else throw ConfigError(path + ".stepper", "unknown stepper '" + stepper + "'");
  if (o.t_end < 0.0) throw ConfigError(path + ".t_end", "must be nonnegative");
  if (o.record_dt <= 0.0) throw ConfigError(path + ".record_dt", "must be positive");
  return o;
}

inline json ode_opts_to_json(const OdeOpts& o) {
  return {{"t_end", o.t_end},
          {"record_dt", o.record_dt},
          {"atol", o.atol},
          {"rtol", o.rtol},
          {"steady_tol", o.steady_tol},
          {"rk4_dt", o.rk4_dt},
          {"stepper", o.stepper == OdeStepper::RK45 ? "rk45" : "rk4"}};
}

}  // namespace cfg_detail

inline ExperimentConfig ExperimentConfig::parse(const json& j) {
  using namespace cfg_detail;
  ExperimentConfig cfg;
  cfg.command = require<std::string>(j, "", "command");
  cfg.seed = optional_of<std::uint64_t>(j, "", "seed", 1);
  cfg.output_dir = optional_of<std::string>(j, "", "output_dir", "out");
  cfg.threads = optional_of<int>(j, "", "threads", 1);
  if (cfg.threads < 1) throw ConfigError("threads", "must be at least 1");

  if (cfg.command == "simulate") {
    SimulateCfg c;
    c.n = require<long>(j, "", "n");
    c.p = require<int>(j, "", "p");
    if (c.n < 1) throw ConfigError("n", "must be positive");
    if (c.p < 1) throw ConfigError("p", "must be positive");
    if (c.p > c.n) throw ConfigError("p", "must not exceed n");
    c.tau = require<double>(j, "", "tau");
    if (!(c.tau > 0.0)) throw ConfigError("tau", "must be positive");
    c.specs = sources_from_json(require_key(j, "", "specs"), "specs");
    if (static_cast<int>(c.specs.size()) != c.p)
      throw ConfigError("specs", "expected " + std::to_string(c.p) + " entries");
    c.q0 = Q0Spec::parse(require_key(j, "", "q0"), "q0", c.p);
    if (j.contains("nonlinearity")) c.f = nonlinearity_from_json(j.at("nonlinearity"), "nonlinearity");
    if (j.contains("regularizer")) c.reg = reg_from_json(j.at("regularizer"), "regularizer");
    if (j.contains("scheme")) {
      try {
        c.scheme = ortho_from_string(j.at("scheme").get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("scheme", e.what());
      }
    }
    if (j.contains("basis")) c.basis = BasisCfg::parse(j.at("basis"), "basis");
    if (c.basis.kind == BasisCfg::Kind::Sparse &&
        static_cast<int>(c.basis.rho.size()) != c.p)
      throw ConfigError("basis.rho", "expected " + std::to_string(c.p) + " entries");
    c.horizon = optional_of<double>(j, "", "horizon", 200.0);
    if (!(c.horizon > 0.0)) throw ConfigError("horizon", "must be positive");
    c.record_every = optional_of<long>(j, "", "record_every", 0);
    c.replicas = optional_of<int>(j, "", "replicas", 1);
    if (c.replicas < 1) throw ConfigError("replicas", "must be at least 1");
    cfg.simulate = std::move(c);
  } else if (cfg.command == "predict") {
    PredictCfg c;
    c.p = require<int>(j, "", "p");
    if (c.p < 1) throw ConfigError("p", "must be positive");
    c.tau = require<double>(j, "", "tau");
    if (!(c.tau > 0.0)) throw ConfigError("tau", "must be positive");
    c.specs = sources_from_json(require_key(j, "", "specs"), "specs");
    if (static_cast<int>(c.specs.size()) != c.p)
      throw ConfigError("specs", "expected " + std::to_string(c.p) + " entries");
    c.q0 = Q0Spec::parse(require_key(j, "", "q0"), "q0", c.p);
    if (j.contains("nonlinearity")) c.f = nonlinearity_from_json(j.at("nonlinearity"), "nonlinearity");
    c.rhs = optional_of<std::string>(j, "", "rhs", "generic");
    if (c.rhs != "generic" && c.rhs != "cubic_p2")
      throw ConfigError("rhs", "unknown drift route '" + c.rhs + "'");
    if (c.rhs == "cubic_p2" && c.p != 2)
      throw ConfigError("rhs", "cubic_p2 needs p = 2");
    c.coeffs = j.contains("coeffs") ? coeffs_from_json(j.at("coeffs"), "coeffs")
                                    : CoeffMethod::closed_form();
    c.opts = ode_opts_from_json(j, "");
    cfg.predict = std::move(c);
  } else if (cfg.command == "particles") {
    ParticlesCfg c;
    c.N = require<long>(j, "", "N");
    if (c.N < 1) throw ConfigError("N", "must be positive");
    c.tau = require<double>(j, "", "tau");
    if (!(c.tau > 0.0)) throw ConfigError("tau", "must be positive");
    c.specs = sources_from_json(require_key(j, "", "specs"), "specs");
    const int p = static_cast<int>(c.specs.size());
    c.q0 = Q0Spec::parse(require_key(j, "", "q0"), "q0", p);
    c.rho = require<std::vector<double>>(j, "", "rho");
    if (static_cast<int>(c.rho.size()) != p)
      throw ConfigError("rho", "expected " + std::to_string(p) + " entries");
    if (j.contains("nonlinearity")) c.f = nonlinearity_from_json(j.at("nonlinearity"), "nonlinearity");
    if (j.contains("regularizer")) c.reg = reg_from_json(j.at("regularizer"), "regularizer");
    c.opts.dt = optional_of<double>(j, "", "dt", 0.05);
    if (!(c.opts.dt > 0.0 && c.opts.dt <= 0.1))
      throw ConfigError("dt", "must lie in (0, 0.1]");
    c.opts.t_end = optional_of<double>(j, "", "t_end", 200.0);
    c.opts.record_every = optional_of<long>(j, "", "record_every", 20);
    if (j.contains("coeffs")) c.opts.method = coeffs_from_json(j.at("coeffs"), "coeffs");
    c.bins = optional_of<int>(j, "", "bins", 61);
    if (c.bins < 1) throw ConfigError("bins", "must be positive");
    if (j.contains("range")) {
      c.range = get_as<std::array<double, 2>>(j.at("range"), "range");
      if (!(c.range[1] > c.range[0])) throw ConfigError("range", "must be increasing");
    }
    c.snapshots = optional_of<std::vector<double>>(j, "", "snapshots", {});
    cfg.particles = std::move(c);
  } else if (cfg.command == "phase") {
    PhaseCfg c;
    c.taus = require<std::vector<double>>(j, "", "taus");
    if (c.taus.empty()) throw ConfigError("taus", "must not be empty");
    if (j.contains("m4")) c.m4_grid = GridSpec::parse(j.at("m4"), "m4");
    if (j.contains("m6")) c.m6_grid = GridSpec::parse(j.at("m6"), "m6");
    if (c.m4_grid.has_value() != c.m6_grid.has_value())
      throw ConfigError("m4", "m4 and m6 grids must be given together");
    c.feasible_only = optional_of<bool>(j, "", "feasible_only", true);
    if (j.contains("field")) {
      const json& f = j.at("field");
      FieldCfg fc;
      fc.tau = require<double>(f, "field", "tau");
      fc.betas = get_as<std::array<double, 2>>(require_key(f, "field", "betas"), "field.betas");
      fc.sign = optional_of<int>(f, "field", "sign", -1);
      if (fc.sign != 1 && fc.sign != -1) throw ConfigError("field.sign", "must be +1 or -1");
      fc.grid = GridSpec::parse(require_key(f, "field", "grid"), "field.grid");
      c.field = fc;
    }
    if (!c.m4_grid && !c.field)
      throw ConfigError("command", "phase needs an (m4, m6) grid or a field block");
    cfg.phase = std::move(c);
  } else if (cfg.command == "staircase") {
    StaircaseCfg c;
    if (j.contains("taus")) {
      c.taus = get_as<std::vector<double>>(j.at("taus"), "taus");
    } else {
      c.taus = GridSpec::parse(require_key(j, "", "tau_grid"), "tau_grid").values();
    }
    if (c.taus.empty()) throw ConfigError("taus", "must not be empty");
    c.betas = require<std::vector<double>>(j, "", "betas");
    if (c.betas.empty()) throw ConfigError("betas", "must not be empty");
    for (size_t i = 0; i < c.betas.size(); ++i)
      if (!(c.betas[i] >= 0.0 && c.betas[i] <= 1.0))
        throw ConfigError("betas[" + std::to_string(i) + "]", "beta must lie in [0, 1]");
    c.opts.q0_competition = optional_of<double>(j, "", "q0_competition", c.opts.q0_competition);
    c.opts.t_end = optional_of<double>(j, "", "t_end", c.opts.t_end);
    c.opts.recovery_threshold =
        optional_of<double>(j, "", "recovery_threshold", c.opts.recovery_threshold);
    cfg.staircase = std::move(c);
  } else if (cfg.command == "taumax") {
    TauMaxCfg c;
    const json& entries = require_key(j, "", "entries");
    if (!entries.is_array() || entries.empty())
      throw ConfigError("entries", "expected a non-empty array");
    for (size_t i = 0; i < entries.size(); ++i) {
      const std::string path = "entries[" + std::to_string(i) + "]";
      TauMaxEntry e;
      e.ratio = require<double>(entries[i], path, "ratio");
      e.betas = require<std::vector<double>>(entries[i], path, "betas");
      for (size_t b = 0; b < e.betas.size(); ++b)
        if (!(e.betas[b] >= 0.0 && e.betas[b] <= 1.0))
          throw ConfigError(path + ".betas[" + std::to_string(b) + "]",
                            "beta must lie in [0, 1]");
      c.entries.push_back(std::move(e));
    }
    c.opts.tau_lo = optional_of<double>(j, "", "tau_lo", c.opts.tau_lo);
    c.opts.tau_hi = optional_of<double>(j, "", "tau_hi", c.opts.tau_hi);
    c.opts.recovery_threshold =
        optional_of<double>(j, "", "recovery_threshold", c.opts.recovery_threshold);
    c.opts.q0_value = optional_of<double>(j, "", "q0_value", c.opts.q0_value);
    c.opts.t_end = optional_of<double>(j, "", "t_end", c.opts.t_end);
    cfg.taumax = std::move(c);
  } else if (cfg.command == "realdata") {
    RealdataCfg c;
    if (j.contains("data")) c.data = get_as<std::string>(j.at("data"), "data");
    if (j.contains("labels")) c.labels = get_as<std::string>(j.at("labels"), "labels");
    if (j.contains("synthetic")) {
      const json& s = j.at("synthetic");
      SyntheticCfg sc;
      sc.N = optional_of<long>(s, "synthetic", "N", sc.N);
      sc.B = optional_of<int>(s, "synthetic", "B", sc.B);
      sc.n1 = optional_of<long>(s, "synthetic", "n1", sc.n1);
      sc.n2 = optional_of<long>(s, "synthetic", "n2", sc.n2);
      c.synthetic = sc;
    }
    if (!c.synthetic && (!c.data || !c.labels))
      throw ConfigError("data", "need data+labels paths or a synthetic block");
    c.classes = require<std::vector<int>>(j, "", "classes");
    if (c.classes.empty()) throw ConfigError("classes", "must not be empty");
    c.specs = sources_from_json(require_key(j, "", "specs"), "specs");
    if (c.specs.size() != c.classes.size())
      throw ConfigError("specs", "expected one source per class");
    c.tau = require<double>(j, "", "tau");
    if (!(c.tau > 0.0)) throw ConfigError("tau", "must be positive");
    c.q0 = Q0Spec::parse(require_key(j, "", "q0"), "q0", static_cast<int>(c.classes.size()));
    c.replicas = optional_of<int>(j, "", "replicas", 20);
    if (c.replicas < 1) throw ConfigError("replicas", "must be at least 1");
    c.horizon = optional_of<double>(j, "", "horizon", 200.0);
    if (j.contains("grid")) c.grid = get_as<std::array<int, 2>>(j.at("grid"), "grid");
    cfg.realdata = std::move(c);
  } else if (cfg.command == "compare") {
    CompareCfg c;
    c.sim = require<std::string>(j, "", "sim");
    c.ode = require<std::string>(j, "", "ode");
    c.band = optional_of<double>(j, "", "band", 2.0);
    if (!(c.band > 0.0)) throw ConfigError("band", "must be positive");
    cfg.compare = std::move(c);
  } else {
    throw ConfigError("command", "unknown command '" + cfg.command + "'");
  }
  return cfg;
}

inline json ExperimentConfig::to_json() const {
  using namespace cfg_detail;
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["threads"] = threads;
  if (simulate) {
    const auto& c = *simulate;
    j["n"] = c.n;
    j["p"] = c.p;
    j["tau"] = c.tau;
    json specs = json::array();
    for (const auto& s : c.specs) specs.push_back(source_to_json(s));
    j["specs"] = specs;
    j["q0"] = c.q0.to_json();
    j["nonlinearity"] = to_string(c.f);
    j["regularizer"] = reg_to_json(c.reg);
    j["scheme"] = to_string(c.scheme);
    j["basis"] = c.basis.to_json();
    j["horizon"] = c.horizon;
    j["record_every"] = c.record_every;
    j["replicas"] = c.replicas;
  }
  if (predict) {
    const auto& c = *predict;
    j["p"] = c.p;
    j["tau"] = c.tau;
    json specs = json::array();
    for (const auto& s : c.specs) specs.push_back(source_to_json(s));
    j["specs"] = specs;
    j["q0"] = c.q0.to_json();
    j["nonlinearity"] = to_string(c.f);
    j["rhs"] = c.rhs;
    j["coeffs"] = coeffs_to_json(c.coeffs);
    j.update(ode_opts_to_json(c.opts));
  }
  if (particles) {
    const auto& c = *particles;
    j["N"] = c.N;
    j["tau"] = c.tau;
    json specs = json::array();
    for (const auto& s : c.specs) specs.push_back(source_to_json(s));
    j["specs"] = specs;
    j["q0"] = c.q0.to_json();
    j["rho"] = c.rho;
    j["nonlinearity"] = to_string(c.f);
    j["regularizer"] = reg_to_json(c.reg);
    j["dt"] = c.opts.dt;
    j["t_end"] = c.opts.t_end;
    j["record_every"] = c.opts.record_every;
    j["coeffs"] = coeffs_to_json(c.opts.method);
    j["bins"] = c.bins;
    j["range"] = c.range;
    j["snapshots"] = c.snapshots;
  }
  if (phase) {
    const auto& c = *phase;
    j["taus"] = c.taus;
    if (c.m4_grid) j["m4"] = c.m4_grid->to_json();
    if (c.m6_grid) j["m6"] = c.m6_grid->to_json();
    j["feasible_only"] = c.feasible_only;
    if (c.field) {
      j["field"] = {{"tau", c.field->tau},
                    {"betas", c.field->betas},
                    {"sign", c.field->sign},
                    {"grid", c.field->grid.to_json()}};
    }
  }
  if (staircase) {
    const auto& c = *staircase;
    j["taus"] = c.taus;
    j["betas"] = c.betas;
    j["q0_competition"] = c.opts.q0_competition;
    j["t_end"] = c.opts.t_end;
    j["recovery_threshold"] = c.opts.recovery_threshold;
  }
  if (taumax) {
    const auto& c = *taumax;
    json entries = json::array();
    for (const auto& e : c.entries) entries.push_back({{"ratio", e.ratio}, {"betas", e.betas}});
    j["entries"] = entries;
    j["tau_lo"] = c.opts.tau_lo;
    j["tau_hi"] = c.opts.tau_hi;
    j["recovery_threshold"] = c.opts.recovery_threshold;
    j["q0_value"] = c.opts.q0_value;
    j["t_end"] = c.opts.t_end;
  }
  if (realdata) {
    const auto& c = *realdata;
    if (c.data) j["data"] = *c.data;
    if (c.labels) j["labels"] = *c.labels;
    if (c.synthetic)
      j["synthetic"] = {{"N", c.synthetic->N},
                        {"B", c.synthetic->B},
                        {"n1", c.synthetic->n1},
                        {"n2", c.synthetic->n2}};
    j["classes"] = c.classes;
    json specs = json::array();
    for (const auto& s : c.specs) specs.push_back(source_to_json(s));
    j["specs"] = specs;
    j["tau"] = c.tau;
    j["q0"] = c.q0.to_json();
    j["replicas"] = c.replicas;
    j["horizon"] = c.horizon;
    j["grid"] = c.grid;
  }
  if (compare) {
    const auto& c = *compare;
    j["sim"] = c.sim;
    j["ode"] = c.ode;
    j["band"] = c.band;
  }
  return j;
}

}  // namespace icadyn
