#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace frl {

struct RealInterval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x >= lo && x <= hi; }
  double clamp(double x) const { return std::min(std::max(x, lo), hi); }
};

enum class ConvexKind { QuadraticShifted, XLogX, Custom };

/// A convex divergence generator f with f(1) = 0, together with its
/// derivative and the closed form of its Fenchel conjugate
///   f*(w) = max_x { x*w - f(x) }
/// and the conjugate's derivative. The closed forms are cross-checked
/// against conjugate_numeric() in the test suite.
class ConvexFunction {
 public:
  using Fn = std::function<double(double)>;

  ConvexKind kind() const { return kind_; }
  const RealInterval& domain() const { return domain_; }

  double eval(double x) const { return eval_(x); }
  double deriv(double x) const { return deriv_(x); }
  double conj_eval(double w) const { return conj_eval_(w); }
  double conj_deriv(double w) const { return conj_deriv_(w); }

  /// f(x) = (x - 1)^2 / 2, the chi-square generator. Conjugate
  /// f*(w) = w^2/2 + w with maximizer x = w + 1.
  static ConvexFunction quadratic_shifted() {
    ConvexFunction f;
    f.kind_ = ConvexKind::QuadraticShifted;
    f.domain_ = {-std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity()};
    f.eval_ = [](double x) { return 0.5 * (x - 1.0) * (x - 1.0); };
    f.deriv_ = [](double x) { return x - 1.0; };
    f.conj_eval_ = [](double w) { return 0.5 * w * w + w; };
    f.conj_deriv_ = [](double w) { return w + 1.0; };
    return f;
  }

  /// f(x) = x log x on [0, inf), with f(0) = 0 by continuity. Conjugate
  /// f*(w) = exp(w - 1), maximizer x = exp(w - 1).
  static ConvexFunction x_log_x() {
    ConvexFunction f;
    f.kind_ = ConvexKind::XLogX;
    f.domain_ = {0.0, std::numeric_limits<double>::infinity()};
    f.eval_ = [](double x) {
      if (x < 0.0) throw std::domain_error("x_log_x: negative argument");
      return x == 0.0 ? 0.0 : x * std::log(x);
    };
    f.deriv_ = [](double x) {
      if (x <= 0.0) throw std::domain_error("x_log_x: derivative needs x > 0");
      return std::log(x) + 1.0;
    };
    f.conj_eval_ = [](double w) { return std::exp(w - 1.0); };
    f.conj_deriv_ = [](double w) { return std::exp(w - 1.0); };
    return f;
  }

  static ConvexFunction custom(Fn eval, Fn deriv, Fn conj_eval, Fn conj_deriv,
                               RealInterval domain) {
    ConvexFunction f;
    f.kind_ = ConvexKind::Custom;
    f.domain_ = domain;
    f.eval_ = std::move(eval);
    f.deriv_ = std::move(deriv);
    f.conj_eval_ = std::move(conj_eval);
    f.conj_deriv_ = std::move(conj_deriv);
    return f;
  }

 private:
  ConvexKind kind_ = ConvexKind::Custom;
  RealInterval domain_;
  Fn eval_, deriv_, conj_eval_, conj_deriv_;
};

/// f*(z) evaluated by golden-section search of x -> x*z - f(x) on
/// search_interval. The objective is concave, so the search is exact up to
/// interval shrinkage; 200 iterations drive the bracket far below any
/// tolerance we rely on.
inline double conjugate_numeric(const ConvexFunction& f, double z,
                                RealInterval search_interval) {
  if (!std::isfinite(z)) throw std::domain_error("conjugate_numeric: z must be finite");
  double a = search_interval.lo;
  double b = search_interval.hi;
  if (!(a < b)) throw std::invalid_argument("conjugate_numeric: empty search interval");

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto g = [&](double x) { return x * z - f.eval(x); };

  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double g1 = g(x1);
  double g2 = g(x2);
  for (int it = 0; it < 200; ++it) {
    if (g1 < g2) {
      a = x1;
      x1 = x2;
      g1 = g2;
      x2 = a + inv_phi * (b - a);
      g2 = g(x2);
    } else {
      b = x2;
      x2 = x1;
      g2 = g1;
      x1 = b - inv_phi * (b - a);
      g1 = g(x1);
    }
  }
  return std::max(g1, g2);
}

/// Max over the grid of |f**(x) - f(x)| with both conjugations done
/// numerically. Search brackets default to the grid span (widened by one)
/// for x and to the derivative range at the grid ends (widened by one) for
/// the dual variable; the biconjugate is exact as long as the x bracket
/// covers the grid.
inline double double_conjugate_check(const ConvexFunction& f,
                                     const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("double_conjugate_check: empty grid");
  double xmin = *std::min_element(grid.begin(), grid.end());
  double xmax = *std::max_element(grid.begin(), grid.end());
  RealInterval x_bracket{f.domain().clamp(xmin - 1.0), f.domain().clamp(xmax + 1.0)};
  if (!(x_bracket.lo < x_bracket.hi)) x_bracket = {xmin, xmax};
  RealInterval w_bracket{f.deriv(xmin) - 1.0, f.deriv(xmax) + 1.0};

  double worst = 0.0;
  for (double x : grid) {
    if (!f.domain().contains(x))
      throw std::invalid_argument("double_conjugate_check: grid point outside domain");
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    auto g = [&](double w) { return x * w - conjugate_numeric(f, w, x_bracket); };
    double a = w_bracket.lo, b = w_bracket.hi;
    double w1 = b - inv_phi * (b - a), w2 = a + inv_phi * (b - a);
    double g1 = g(w1), g2 = g(w2);
    for (int it = 0; it < 200; ++it) {
      if (g1 < g2) {
        a = w1; w1 = w2; g1 = g2;
        w2 = a + inv_phi * (b - a); g2 = g(w2);
      } else {
        b = w2; w2 = w1; g2 = g1;
        w1 = b - inv_phi * (b - a); g1 = g(w1);
      }
    }
    worst = std::max(worst, std::abs(std::max(g1, g2) - f.eval(x)));
  }
  return worst;
}

/// Two distributions on a shared finite support. q must be strictly
/// positive everywhere so the ratios p/q stay finite.
struct DiscreteDistributionPair {
  std::vector<double> p;
  std::vector<double> q;

  int support_size() const { return static_cast<int>(p.size()); }

  void validate() const {
    if (p.size() != q.size() || p.empty())
      throw std::invalid_argument("distribution pair: mismatched or empty support");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < 0.0) throw std::invalid_argument("distribution pair: negative p entry");
      if (q[i] <= 0.0) throw std::domain_error("distribution pair: q must be strictly positive");
      sp += p[i];
      sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-12 || std::abs(sq - 1.0) > 1e-12)
      throw std::invalid_argument("distribution pair: entries must sum to 1");
  }
};

/// Dual variable of the variational divergence form, one value per support
/// point.
struct WitnessTable {
  std::vector<double> values;
};

inline constexpr double kDefaultRatioClip = 1e6;

/// D_f(p||q) = sum_h q(h) f(p(h)/q(h)). Ratios are clipped at ratio_clip
/// before applying f; the tests stay far below the clip.
inline double fdiv_direct(const ConvexFunction& f, const DiscreteDistributionPair& pair,
                          double ratio_clip = kDefaultRatioClip) {
  pair.validate();
  double acc = 0.0;
  for (int h = 0; h < pair.support_size(); ++h) {
    if (pair.q[h] <= 0.0) {
      if (pair.p[h] > 0.0) throw std::domain_error("fdiv_direct: p > 0 where q = 0");
      continue;
    }
    double ratio = std::min(pair.p[h] / pair.q[h], ratio_clip);
    acc += pair.q[h] * f.eval(ratio);
  }
  return acc;
}

/// The maximizing witness w*(h) = f'(p(h)/q(h)); plugging it into
/// fdiv_variational recovers fdiv_direct.
inline WitnessTable optimal_witness(const ConvexFunction& f,
                                    const DiscreteDistributionPair& pair,
                                    double ratio_clip = kDefaultRatioClip) {
  pair.validate();
  WitnessTable w;
  w.values.resize(pair.p.size());
  for (int h = 0; h < pair.support_size(); ++h) {
    double ratio = std::min(pair.p[h] / pair.q[h], ratio_clip);
    w.values[h] = f.deriv(ratio);
  }
  return w;
}

/// Variational lower bound sum_h p(h) w(h) - sum_h q(h) f*(w(h)).
/// For any witness the value is at most fdiv_direct (weak duality), with
/// equality at optimal_witness.
inline double fdiv_variational(const ConvexFunction& f,
                               const DiscreteDistributionPair& pair,
                               const WitnessTable& witness) {
  pair.validate();
  if (witness.values.size() != pair.p.size())
    throw std::invalid_argument("fdiv_variational: witness does not cover the support");
  double acc = 0.0;
  for (int h = 0; h < pair.support_size(); ++h) {
    double w = witness.values[h];
    if (!std::isfinite(w)) throw std::invalid_argument("fdiv_variational: non-finite witness");
    acc += pair.p[h] * w - pair.q[h] * f.conj_eval(w);
  }
  return acc;
}

}  // namespace frl
