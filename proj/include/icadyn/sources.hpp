#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "icadyn/rng.hpp"

namespace icadyn {

// Scalar moments of a unit-variance source. kappa4 is derived on demand so it
// can never go stale relative to m4.
struct MomentSet {
  double m3 = 0.0;
  double m4 = 3.0;
  double m6 = 15.0;
  double kappa4() const { return m4 - 3.0; }
  // Sixth cumulant of a zero-mean unit-variance variable.
  double kappa6() const { return m6 - 15.0 * m4 - 10.0 * m3 * m3 + 30.0; }
};

enum class SourceKind { BetaMixture, Rademacher, UniformSym, Custom };

using CustomSampler = std::function<double(Rng&)>;

namespace detail {
inline std::map<std::string, CustomSampler>& sampler_registry() {
  static std::map<std::string, CustomSampler> reg;
  return reg;
}
inline std::mutex& sampler_registry_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void register_custom_sampler(const std::string& name, CustomSampler fn) {
  std::lock_guard<std::mutex> lock(detail::sampler_registry_mutex());
  detail::sampler_registry()[name] = std::move(fn);
}

// One independent source coordinate. BetaMixture interpolates between a
// Rademacher sign (beta = 1) and a symmetric uniform (beta = 0), keeping unit
// variance for every beta.
struct SourceSpec {
  SourceKind kind = SourceKind::BetaMixture;
  double beta = 1.0;
  std::string sampler;                        // Custom: registry key
  std::optional<MomentSet> declared_moments;  // Custom: may be absent

  static SourceSpec beta_mixture(double beta) {
    if (!(beta >= 0.0 && beta <= 1.0))
      throw std::invalid_argument("beta must lie in [0, 1], got " + std::to_string(beta));
    SourceSpec s;
    s.kind = SourceKind::BetaMixture;
    s.beta = beta;
    return s;
  }
  static SourceSpec rademacher() {
    SourceSpec s;
    s.kind = SourceKind::Rademacher;
    return s;
  }
  static SourceSpec uniform_sym() {
    SourceSpec s;
    s.kind = SourceKind::UniformSym;
    return s;
  }
  static SourceSpec custom(std::string name, std::optional<MomentSet> moments = std::nullopt) {
    SourceSpec s;
    s.kind = SourceKind::Custom;
    s.sampler = std::move(name);
    s.declared_moments = moments;
    return s;
  }

  MomentSet moments() const {
    switch (kind) {
      case SourceKind::BetaMixture: {
        const double b2 = beta * beta;
        const double g2 = 1.0 - b2;  // weight of the uniform part
        MomentSet m;
        m.m3 = 0.0;
        m.m4 = b2 * b2 + 6.0 * b2 * g2 + (9.0 / 5.0) * g2 * g2;
        m.m6 = b2 * b2 * b2 + 15.0 * b2 * b2 * g2 + 27.0 * b2 * g2 * g2 +
               (27.0 / 7.0) * g2 * g2 * g2;
        return m;
      }
      case SourceKind::Rademacher:
        return MomentSet{0.0, 1.0, 1.0};
      case SourceKind::UniformSym:
        return MomentSet{0.0, 9.0 / 5.0, 27.0 / 7.0};
      case SourceKind::Custom:
        if (declared_moments) return *declared_moments;
        throw std::runtime_error("moments unavailable for custom source '" + sampler + "'");
    }
    throw std::logic_error("unreachable source kind");
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case SourceKind::BetaMixture: {
        const double eps1 = draw_uniform01(rng) < 0.5 ? -1.0 : 1.0;
        const double eps2 = (2.0 * draw_uniform01(rng) - 1.0) * std::sqrt(3.0);
        return beta * eps1 + std::sqrt(1.0 - beta * beta) * eps2;
      }
      case SourceKind::Rademacher:
        return draw_uniform01(rng) < 0.5 ? -1.0 : 1.0;
      case SourceKind::UniformSym:
        return (2.0 * draw_uniform01(rng) - 1.0) * std::sqrt(3.0);
      case SourceKind::Custom: {
        std::lock_guard<std::mutex> lock(detail::sampler_registry_mutex());
        auto& reg = detail::sampler_registry();
        auto it = reg.find(sampler);
        if (it == reg.end())
          throw std::runtime_error("custom sampler '" + sampler + "' is not registered");
        return it->second(rng);
      }
    }
    throw std::logic_error("unreachable source kind");
  }
};

inline std::string to_string(SourceKind k) {
  switch (k) {
    case SourceKind::BetaMixture: return "beta";
    case SourceKind::Rademacher: return "rademacher";
    case SourceKind::UniformSym: return "uniform";
    case SourceKind::Custom: return "custom";
  }
  return "?";
}

}  // namespace icadyn
