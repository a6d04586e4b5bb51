#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace icadyn {

enum class Nonlinearity { CubicPlus, CubicMinus, Tanh, SquarePlus, SquareMinus };

inline double f_eval(Nonlinearity f, double x) {
  switch (f) {
    case Nonlinearity::CubicPlus: return x * x * x;
    case Nonlinearity::CubicMinus: return -x * x * x;
    case Nonlinearity::Tanh: return std::tanh(x);
    case Nonlinearity::SquarePlus: return x * x;
    case Nonlinearity::SquareMinus: return -x * x;
  }
  throw std::logic_error("unreachable nonlinearity");
}

inline double f_prime(Nonlinearity f, double x) {
  switch (f) {
    case Nonlinearity::CubicPlus: return 3.0 * x * x;
    case Nonlinearity::CubicMinus: return -3.0 * x * x;
    case Nonlinearity::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Nonlinearity::SquarePlus: return 2.0 * x;
    case Nonlinearity::SquareMinus: return -2.0 * x;
  }
  throw std::logic_error("unreachable nonlinearity");
}

inline bool is_odd(Nonlinearity f) {
  return f == Nonlinearity::CubicPlus || f == Nonlinearity::CubicMinus ||
         f == Nonlinearity::Tanh;
}

// +1 for x^3, -1 for -x^3; other shapes have no cubic sign.
inline int cubic_sign(Nonlinearity f) {
  if (f == Nonlinearity::CubicPlus) return 1;
  if (f == Nonlinearity::CubicMinus) return -1;
  throw std::invalid_argument("nonlinearity is not cubic");
}

inline void f_apply(Nonlinearity f, const Eigen::ArrayXd& x, Eigen::ArrayXd& out) {
  switch (f) {
    case Nonlinearity::CubicPlus: out = x * x * x; return;
    case Nonlinearity::CubicMinus: out = -(x * x * x); return;
    case Nonlinearity::Tanh: out = x.tanh(); return;
    case Nonlinearity::SquarePlus: out = x * x; return;
    case Nonlinearity::SquareMinus: out = -(x * x); return;
  }
}

inline void f_prime_apply(Nonlinearity f, const Eigen::ArrayXd& x, Eigen::ArrayXd& out) {
  switch (f) {
    case Nonlinearity::CubicPlus: out = 3.0 * x * x; return;
    case Nonlinearity::CubicMinus: out = -3.0 * x * x; return;
    case Nonlinearity::Tanh: out = 1.0 - x.tanh().square(); return;
    case Nonlinearity::SquarePlus: out = 2.0 * x; return;
    case Nonlinearity::SquareMinus: out = -2.0 * x; return;
  }
}

inline std::string to_string(Nonlinearity f) {
  switch (f) {
    case Nonlinearity::CubicPlus: return "cubic_plus";
    case Nonlinearity::CubicMinus: return "cubic_minus";
    case Nonlinearity::Tanh: return "tanh";
    case Nonlinearity::SquarePlus: return "square_plus";
    case Nonlinearity::SquareMinus: return "square_minus";
  }
  return "?";
}

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "cubic_plus") return Nonlinearity::CubicPlus;
  if (s == "cubic_minus") return Nonlinearity::CubicMinus;
  if (s == "tanh") return Nonlinearity::Tanh;
  if (s == "square_plus") return Nonlinearity::SquarePlus;
  if (s == "square_minus") return Nonlinearity::SquareMinus;
  throw std::invalid_argument("unknown nonlinearity '" + s + "'");
}

// Row-wise penalty applied inside the update. L1 uses the zero subgradient at
// the origin so exact zeros stay put.
struct Regularizer {
  enum class Kind { None, L1, Custom };
  Kind kind = Kind::None;
  double lambda = 0.0;
  std::function<double(double)> fn;

  static Regularizer none() { return {}; }
  static Regularizer l1(double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("l1 strength must be nonnegative");
    Regularizer r;
    r.kind = Kind::L1;
    r.lambda = lambda;
    return r;
  }
  static Regularizer custom(std::function<double(double)> fn) {
    Regularizer r;
    r.kind = Kind::Custom;
    r.fn = std::move(fn);
    return r;
  }

  bool active() const { return kind != Kind::None; }

  double eval(double x) const {
    switch (kind) {
      case Kind::None: return 0.0;
      case Kind::L1: return x > 0.0 ? lambda : (x < 0.0 ? -lambda : 0.0);
      case Kind::Custom: return fn(x);
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::L1: return "l1";
      case Kind::Custom: return "custom";
    }
    return "?";
  }
};

}  // namespace icadyn
