#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "elr/theory.hpp"

using namespace elr;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PerturbModel model(double lr, double grad_std, double alpha, std::size_t samples, std::uint64_t seed,
                   std::size_t dim = 512) {
  PerturbModel m;
  m.input_dim = dim;
  m.width = dim;
  m.lr = lr;
  m.grad_std = grad_std;
  m.alpha = alpha;
  m.samples = samples;
  m.seed = seed;
  return m;
}

}  // namespace

TEST_CASE("rotation cosine closed form") {
  CHECK(rotation_cosine_closed_form(0.0, 1.0, 1.0) == 1.0);
  CHECK_THAT(rotation_cosine_closed_form(1.0, 1.0, 1.0), WithinAbs(1.0 / std::numbers::sqrt2, 1e-15));
  // doubling lr and alpha together keeps the cosine
  CHECK_THAT(rotation_cosine_closed_form(2.0, 1.0, 2.0), WithinAbs(1.0 / std::numbers::sqrt2, 1e-15));
  CHECK_THAT(rotation_cosine_closed_form(0.3, 0.7, -1.3), WithinAbs(rotation_cosine_closed_form(0.3, 0.7, 1.3), 1e-15));
  double prev = 1.0;
  for (double lr = 0.01; lr < 5.0; lr += 0.01) {
    const double c = rotation_cosine_closed_form(lr, 1.0, 1.5);
    REQUIRE(c < prev);
    REQUIRE(c > 0.0);
    prev = c;
  }
  CHECK_THROWS_AS(rotation_cosine_closed_form(1.0, 1.0, 0.0), DomainError);
}

TEST_CASE("flip probability closed form") {
  CHECK_THAT(flip_prob_closed_form(1.0, 1.0, 1.0), WithinAbs(0.25, 1e-15));
  CHECK(flip_prob_closed_form(0.0, 1.0, 1.0) == 0.0);
  CHECK(flip_prob_closed_form(1e-9, 1.0, 1.0) < 1e-9);
  const double a = std::sqrt(std::sqrt(3.0));  // alpha^2 = sqrt(3) * lr * grad_std
  CHECK_THAT(flip_prob_closed_form(1.0, 1.0, a), WithinAbs(1.0 / 6.0, 1e-15));
  CHECK_THAT(flip_prob_closed_form(1.0, 1.0, 2.0), WithinAbs(0.5 - std::atan(4.0) / std::numbers::pi, 1e-15));
  double prev = 0.0;
  for (double r = 0.001; r <= 1.0; r += 0.001) {
    const double p = flip_prob_closed_form(r, 1.0, 1.0);
    REQUIRE(p > prev);
    REQUIRE(p <= 0.25 + 1e-15);
    prev = p;
  }
  CHECK_THROWS_AS(flip_prob_closed_form(1.5, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(flip_prob_closed_form(4.01, 1.0, 2.0), DomainError);
  CHECK_NOTHROW(flip_prob_closed_form(4.0, 1.0, 2.0));
}

TEST_CASE("perturbation ratio agrees with the effective learning rate") {
  for (double lr : {0.1, 0.5, 1.0})
    for (double gs : {0.25, 1.0})
      for (double alpha : {1.0, 2.0, -3.0}) {
        CHECK(perturbation_ratio(lr, gs, alpha) == effective_lr(lr, std::abs(alpha), OptimizerKind::sgd) * gs);
        CHECK_THAT(perturbation_ratio(lr, gs, alpha), WithinRel(lr * gs / (alpha * alpha), 1e-15));
      }
  // the flip probability is a function of this ratio alone
  CHECK_THAT(flip_prob_closed_form(0.4, 1.0, 2.0), WithinAbs(flip_prob_closed_form(0.1, 1.0, 1.0), 1e-15));
  CHECK_THAT(flip_prob_closed_form(0.1, 2.0, 1.0), WithinAbs(flip_prob_closed_form(0.2, 1.0, 1.0), 1e-15));
}

TEST_CASE("rotation cosine Monte-Carlo") {
  SECTION("no gradient noise gives cosine one") {
    const McEstimate e = rotation_cosine_mc(model(1.0, 0.0, 1.0, 200, 1, 64));
    CHECK_THAT(e.mean, WithinAbs(1.0, 1e-15));
    CHECK(e.count == 200);
  }
  SECTION("unit case at width 512") {
    const McEstimate e = rotation_cosine_mc(model(1.0, 1.0, 1.0, 20000, 2));
    CHECK_THAT(e.mean, WithinRel(1.0 / std::numbers::sqrt2, 0.01));
  }
  SECTION("doubling lr with alpha agrees within two standard errors on paired draws") {
    const McEstimate a = rotation_cosine_mc(model(0.5, 1.0, 1.0, 20000, 3));
    const McEstimate b = rotation_cosine_mc(model(1.0, 1.0, 2.0, 20000, 3));
    CHECK(std::abs(a.mean - b.mean) <= 2.0 * std::hypot(a.std_error, b.std_error));
  }
  SECTION("reduced sampler agrees with full matrices") {
    for (const auto& [lr, alpha] : std::vector<std::pair<double, double>>{{1.0, 1.0}, {0.5, 2.0}, {2.0, 1.0}}) {
      CAPTURE(lr, alpha);
      const McEstimate reduced = rotation_cosine_mc(model(lr, 1.0, alpha, 4000, 5, 16));
      const McEstimate full = rotation_cosine_mc_full(model(lr, 1.0, alpha, 4000, 6, 16));
      CHECK(std::abs(reduced.mean - full.mean) <= 4.0 * std::hypot(reduced.std_error, full.std_error));
    }
  }
  SECTION("seeded") {
    CHECK(rotation_cosine_mc(model(1.0, 1.0, 1.0, 100, 9, 32)).mean ==
          rotation_cosine_mc(model(1.0, 1.0, 1.0, 100, 9, 32)).mean);
  }
}

TEST_CASE("flip probability Monte-Carlo") {
  CHECK(flip_prob_mc(model(0.0, 1.0, 1.0, 10000, 1)).mean == 0.0);
  const McEstimate unit = flip_prob_mc(model(1.0, 1.0, 1.0, 1000000, 2));
  CHECK(std::abs(unit.mean - 0.25) <= 3.0 * unit.std_error);
  CHECK(unit.count > 450000);
  const McEstimate two = flip_prob_mc(model(1.0, 1.0, 2.0, 1000000, 3));
  CHECK(std::abs(two.mean - flip_prob_closed_form(1.0, 1.0, 2.0)) <= 3.0 * two.std_error);
  CHECK_THROWS_AS(flip_prob_mc(model(1.0, 1.0, 0.0, 10, 1)), DomainError);
}

TEST_CASE("validation grid") {
  TheoryGrid grid;
  grid.samples = 4000;
  grid.input_dim = 128;
  grid.width = 128;
  const auto rows = validate_theory_grid(grid);
  REQUIRE(rows.size() == 36);
  std::size_t passed = 0;
  for (const auto& r : rows) {
    passed += r.pass;
    CHECK(r.pass == within_tolerance(r.closed_form, {r.mc_mean, r.mc_se, 0}, grid.se_mult, grid.rel_tol));
  }
  CHECK(passed >= 34);
  CHECK(within_tolerance(0.5, {0.504, 0.001, 10}, 3.0, 0.01));
  CHECK_FALSE(within_tolerance(0.5, {0.51, 0.001, 10}, 3.0, 0.01));
  CHECK(within_tolerance(0.5, {0.51, 0.004, 10}, 3.0, 0.01));
}
