#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "frl/convex.hpp"
#include "frl/rng.hpp"

using namespace frl;

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
  return v;
}

DiscreteDistributionPair random_pair(Rng& rng, int support) {
  // entries bounded away from zero: 0.9 * normalized + 0.1 * uniform
  auto draw = [&](std::vector<double>& v) {
    v.resize(support);
    double s = 0.0;
    for (auto& x : v) {
      x = rng.uniform(0.01, 1.0);
      s += x;
    }
    for (auto& x : v) x = 0.9 * (x / s) + 0.1 / support;
  };
  DiscreteDistributionPair pair;
  draw(pair.p);
  draw(pair.q);
  return pair;
}

}  // namespace

TEST_CASE("generator invariants: f(1) = 0 and sampled convexity") {
  for (const auto& f : {ConvexFunction::quadratic_shifted(), ConvexFunction::x_log_x()}) {
    REQUIRE(f.eval(1.0) == Catch::Approx(0.0).margin(1e-15));
    auto xs = linspace(0.1, 3.0, 21);
    for (double x : xs)
      for (double y : xs)
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
          double lhs = f.eval(t * x + (1 - t) * y);
          double rhs = t * f.eval(x) + (1 - t) * f.eval(y);
          REQUIRE(lhs <= rhs + 1e-12);
        }
  }
}

TEST_CASE("quadratic generator has exact closed-form conjugate") {
  auto f = ConvexFunction::quadratic_shifted();
  for (double w : linspace(-3.0, 3.0, 13)) {
    REQUIRE(f.conj_eval(w) == 0.5 * w * w + w);
    REQUIRE(f.conj_deriv(w) == w + 1.0);
  }
}

TEST_CASE("conjugate_numeric on the quadratic generator") {
  auto f = ConvexFunction::quadratic_shifted();
  RealInterval box{-5.0, 5.0};
  CHECK(conjugate_numeric(f, 0.0, box) == Catch::Approx(0.0).margin(1e-8));
  CHECK(conjugate_numeric(f, 1.0, box) == Catch::Approx(1.5).margin(1e-8));
  CHECK(conjugate_numeric(f, -1.0, box) == Catch::Approx(-0.5).margin(1e-8));
}

TEST_CASE("conjugate_numeric rejects bad arguments") {
  auto f = ConvexFunction::quadratic_shifted();
  CHECK_THROWS_AS(conjugate_numeric(f, std::nan(""), {-1.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(conjugate_numeric(f, 0.0, {2.0, 2.0}), std::invalid_argument);
}

TEST_CASE("closed-form conjugates match the numeric search") {
  auto quad = ConvexFunction::quadratic_shifted();
  auto xlx = ConvexFunction::x_log_x();
  for (double w : linspace(-3.0, 3.0, 61)) {
    CHECK(std::abs(quad.conj_eval(w) - conjugate_numeric(quad, w, {-6.0, 6.0})) < 1e-7);
    CHECK(std::abs(xlx.conj_eval(w) - conjugate_numeric(xlx, w, {0.0, 10.0})) < 1e-7);
  }
}

TEST_CASE("biconjugation recovers the generator") {
  auto quad = ConvexFunction::quadratic_shifted();
  CHECK(double_conjugate_check(quad, {1.0}) < 1e-8);
  CHECK(double_conjugate_check(quad, linspace(-3.0, 3.0, 601)) < 1e-6);
  CHECK(double_conjugate_check(ConvexFunction::x_log_x(), linspace(0.1, 3.0, 100)) < 1e-6);
  CHECK_THROWS_AS(double_conjugate_check(quad, {}), std::invalid_argument);
}

TEST_CASE("fdiv_direct basics") {
  auto quad = ConvexFunction::quadratic_shifted();
  auto xlx = ConvexFunction::x_log_x();

  DiscreteDistributionPair same{{0.5, 0.5}, {0.5, 0.5}};
  CHECK(fdiv_direct(quad, same) == Catch::Approx(0.0).margin(1e-15));
  CHECK(fdiv_direct(xlx, same) == Catch::Approx(0.0).margin(1e-15));

  DiscreteDistributionPair skew{{0.75, 0.25}, {0.5, 0.5}};
  CHECK(fdiv_direct(quad, skew) == Catch::Approx(0.125).margin(1e-12));

  DiscreteDistributionPair uniform7{std::vector<double>(7, 1.0 / 7),
                                    std::vector<double>(7, 1.0 / 7)};
  CHECK(fdiv_direct(xlx, uniform7) == Catch::Approx(0.0).margin(1e-15));

  DiscreteDistributionPair bad{{0.5, 0.5}, {1.0, 0.0}};
  CHECK_THROWS_AS(fdiv_direct(quad, bad), std::domain_error);
}

TEST_CASE("optimal witness is the derivative at the density ratio") {
  auto quad = ConvexFunction::quadratic_shifted();
  DiscreteDistributionPair same{{0.5, 0.5}, {0.5, 0.5}};
  auto w0 = optimal_witness(quad, same);
  CHECK(w0.values[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(w0.values[1] == Catch::Approx(0.0).margin(1e-15));

  DiscreteDistributionPair skew{{0.75, 0.25}, {0.5, 0.5}};
  auto w1 = optimal_witness(quad, skew);
  CHECK(w1.values[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(w1.values[1] == Catch::Approx(-0.5).margin(1e-12));

  DiscreteDistributionPair skew2{{0.9, 0.1}, {0.5, 0.5}};
  auto w2 = optimal_witness(ConvexFunction::x_log_x(), skew2);
  CHECK(w2.values[0] == Catch::Approx(1.0 + std::log(1.8)).margin(1e-12));
  CHECK(w2.values[1] == Catch::Approx(1.0 + std::log(0.2)).margin(1e-12));
}

TEST_CASE("variational form: zero witness, optimum, and perturbation") {
  auto quad = ConvexFunction::quadratic_shifted();
  DiscreteDistributionPair skew{{0.75, 0.25}, {0.5, 0.5}};

  WitnessTable zeros{{0.0, 0.0}};
  CHECK(fdiv_variational(quad, skew, zeros) == Catch::Approx(0.0).margin(1e-15));

  auto wopt = optimal_witness(quad, skew);
  CHECK(fdiv_variational(quad, skew, wopt) == Catch::Approx(0.125).margin(1e-12));

  WitnessTable bumped{{wopt.values[0] + 0.1, wopt.values[1] + 0.1}};
  CHECK(fdiv_variational(quad, skew, bumped) < 0.125);

  WitnessTable short_table{{0.0}};
  CHECK_THROWS_AS(fdiv_variational(quad, skew, short_table), std::invalid_argument);
}

TEST_CASE("weak duality and tight optimum over random pairs") {
  auto quad = ConvexFunction::quadratic_shifted();
  Rng rng(20240811);
  for (int trial = 0; trial < 1000; ++trial) {
    int support = 2 + rng.uniform_int(9);
    auto pair = random_pair(rng, support);
    double direct = fdiv_direct(quad, pair);
    REQUIRE(direct >= -1e-12);

    WitnessTable random_w;
    random_w.values.resize(support);
    for (auto& w : random_w.values) w = rng.uniform(-2.0, 2.0);
    double lower = fdiv_variational(quad, pair, random_w);
    REQUIRE(direct - lower >= -1e-10);

    auto wopt = optimal_witness(quad, pair);
    REQUIRE(std::abs(direct - fdiv_variational(quad, pair, wopt)) < 1e-10);
  }
}

TEST_CASE("divergence vanishes only at equal distributions") {
  auto quad = ConvexFunction::quadratic_shifted();
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    int support = 2 + rng.uniform_int(9);
    auto pair = random_pair(rng, support);
    double tv = 0.0;
    for (int h = 0; h < support; ++h) tv += std::abs(pair.p[h] - pair.q[h]);
    double direct = fdiv_direct(quad, pair);
    if (tv < 1e-9) {
      REQUIRE(direct <= 1e-12);
    } else {
      REQUIRE(direct > 0.0);
    }
    DiscreteDistributionPair equal{pair.q, pair.q};
    REQUIRE(fdiv_direct(quad, equal) <= 1e-12);
  }
}
