#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bregprior/projections.hpp"
#include "support/projection_cases.hpp"
#include "support/qp_oracle.hpp"
#include "support/test_util.hpp"

using namespace bregprior;
using testutil::gaussian_grid;

TEST(Box, InsideIsUnchanged) {
  const Grid x(1, 3, {0.1, 0.5, 0.9});
  EXPECT_EQ(project_box(x, 0.0, 1.0), x);
}

TEST(Box, Clamps) {
  EXPECT_EQ(project_box(Grid(1, 3, {-3.0, 0.2, 9.0}), 0.0, 1.0), Grid(1, 3, {0.0, 0.2, 1.0}));
}

TEST(Box, DegenerateBoxIsConstant) {
  EXPECT_EQ(project_box(gaussian_grid(3, 3, 1), 0.7, 0.7), Grid(3, 3, 0.7));
}

TEST(Box, RejectsInvertedBounds) { EXPECT_THROW((void)project_box(Grid(1, 1), 1.0, 0.0), std::invalid_argument); }

TEST(L2, InsideIsUnchanged) {
  const Grid x(1, 2, {0.3, 0.4});
  EXPECT_EQ(project_l2_ball(x, 1.0), x);
}

TEST(L2, RadialScaling) {
  const Grid p = project_l2_ball(Grid(1, 2, {3.0, 4.0}), 1.0);
  EXPECT_NEAR(p[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1], 0.8, 1e-15);
}

TEST(L2, MatchesOracleOnSevenVector) {
  const Grid x = gaussian_grid(1, 7, 2, 2.0);
  oracle::Problem p(x.values(), std::vector<double>(7, 0.0));
  p.add_l2(1.3);
  EXPECT_LT(testutil::max_abs_diff(p.solve(), project_l2_ball(x, 1.3).values()), 1e-8);
}

TEST(L1, InsideIsUnchanged) {
  const Grid x(1, 3, {0.2, -0.3, 0.1});
  EXPECT_EQ(project_l1_ball(x, 1.0), x);
}

TEST(L1, AxisPoint) { EXPECT_EQ(project_l1_ball(Grid(1, 2, {3.0, 0.0}), 1.0), Grid(1, 2, {1.0, 0.0})); }

TEST(L1, SymmetricSplit) { EXPECT_EQ(project_l1_ball(Grid(1, 2, {2.0, 2.0}), 2.0), Grid(1, 2, {1.0, 1.0})); }

TEST(L1, KeepsSigns) {
  const Grid p = project_l1_ball(Grid(1, 3, {-3.0, 1.0, 2.5}), 1.5);
  EXPECT_LE(p[0], 0.0);
  EXPECT_GE(p[2], 0.0);
  EXPECT_LE(vec::norm1(p.span()), 1.5 + 1e-12);
}

TEST(L1, MatchesOracleOnEightVector) {
  const Grid x = gaussian_grid(1, 8, 3, 2.0);
  oracle::Problem p(x.values(), std::vector<double>(8, 0.0));
  p.add_l1(2.0);
  EXPECT_LT(testutil::max_abs_diff(p.solve(), project_l1_ball(x, 2.0).values()), 1e-8);
}

TEST(TvNorm, CircularForwardDifferences) {
  // rows (0,1),(2,4): horizontal |1|+|1|+|2|+|2|, vertical |2|+|3|+|2|+|3|
  EXPECT_DOUBLE_EQ(tv_norm(Grid(2, 2, {0, 1, 2, 4})), 16.0);
}

TEST(Tv, ConstantGridIsFixed) {
  const Grid x(3, 4, 1.25);
  const auto p = project_tv_ball(x, 0.5);
  EXPECT_EQ(p.x, x);
  EXPECT_TRUE(p.converged);
}

TEST(Tv, FeasibleInputIsUnchanged) {
  const Grid x = gaussian_grid(3, 3, 4);
  EXPECT_EQ(project_tv_ball(x, tv_norm(x) + 1.0).x, x);
}

TEST(Tv, ZeroRadiusGivesMean) {
  const Grid x = gaussian_grid(2, 3, 5);
  const auto p = project_tv_ball(x, 0.0);
  double mean = 0.0;
  for (double v : x.values()) mean += v / 6.0;
  for (double v : p.x.values()) EXPECT_NEAR(v, mean, 1e-12);
}

TEST(Tv, TwoLevelThreeByThreeMatchesOracle) {
  const Grid x(3, 3, {0, 0, 1, 0, 0, 1, 0, 0, 1});
  const double r = 0.5 * tv_norm(x);
  oracle::Problem p(x.values(), std::vector<double>(9, 0.0));
  p.add_tv(3, 3, r);
  const auto lib = project_tv_ball(x, r);
  EXPECT_TRUE(lib.converged);
  EXPECT_LT(testutil::max_abs_diff(p.solve(), lib.x.values()), 1e-4);
  EXPECT_LE(tv_norm(lib.x), r * (1.0 + 1e-6));
}

TEST(Tv, NonConvergenceIsFlagged) {
  const Grid x = gaussian_grid(8, 8, 6);
  const auto p = project_tv_ball(x, 0.1 * tv_norm(x), 1e-14, 3);
  EXPECT_FALSE(p.converged);
  EXPECT_GT(p.duality_gap, 0.0);
  EXPECT_EQ(p.iterations, 3);
}

TEST(Tv, RejectsNegativeRadius) { EXPECT_THROW((void)project_tv_ball(Grid(2, 2), -1.0), std::invalid_argument); }

TEST(Intersection, FeasibleInputIsUnchanged) {
  ConstraintStack s = cases::stack_of({BoxSet{-1, 1}, L1Ball{10.0}});
  const Grid x(2, 2, {0.1, -0.2, 0.3, 0.0});
  EXPECT_EQ(project_intersection(x, s).x, x);
}

TEST(Intersection, SingleSetReducesExactly) {
  const Grid x = gaussian_grid(3, 3, 7, 2.0);
  ConstraintStack s = cases::stack_of({BoxSet{0, 1}});
  EXPECT_EQ(project_intersection(x, s).x, project_box(x, 0, 1));
  ConstraintStack l1 = cases::stack_of({L1Ball{1.0}});
  EXPECT_EQ(project_intersection(x, l1).x, project_l1_ball(x, 1.0));
}

TEST(Intersection, InactiveBallGivesBox) {
  const Grid x(1, 2, {1.7, -0.4});
  ConstraintStack s = cases::stack_of({BoxSet{0, 1}, L2Ball{10.0}});
  EXPECT_LT(testutil::max_abs_diff(project_intersection(x, s).x, project_box(x, 0, 1)), 1e-15);
}

TEST(Intersection, BoxL1MatchesOracleIn2D) {
  const Grid x(1, 2, {1.4, 0.9});
  ConstraintStack s = cases::stack_of({BoxSet{-1, 1}, L1Ball{1.5}});
  oracle::Problem p(x.values(), {0.0, 0.0});
  p.add_box(-1, 1);
  p.add_l1(1.5);
  const auto lib = project_intersection(x, s);
  EXPECT_TRUE(lib.converged);
  EXPECT_LT(testutil::max_abs_diff(p.solve(), lib.x.values()), 1e-6);
  // Closed form: the box caps the first coordinate, the ball the sum.
  EXPECT_NEAR(lib.x[0], 1.0, 1e-6);
  EXPECT_NEAR(lib.x[1], 0.5, 1e-6);
}

TEST(BoxL1, HandExamples) {
  // threshold 0.5: (1.4, 0.9, -0.2) → (0.9, 0.4, 0) caps to (0.9, 0.4, 0)
  const Grid a = project_box_l1_ball(Grid(1, 3, {1.4, 0.9, -0.2}), -1, 1, 1.3);
  EXPECT_NEAR(a[0], 0.9, 1e-15);
  EXPECT_NEAR(a[1], 0.4, 1e-15);
  EXPECT_EQ(a[2], 0.0);
  // the clipped coordinate stays at the cap while the others shrink
  const Grid b = project_box_l1_ball(Grid(1, 3, {5.0, 0.9, -0.7}), -1, 1, 1.8);
  EXPECT_DOUBLE_EQ(b[0], 1.0);
  EXPECT_NEAR(b[1], 0.5, 1e-15);
  EXPECT_NEAR(b[2], -0.3, 1e-15);
  // inside the ball after clipping: plain box projection
  EXPECT_EQ(project_box_l1_ball(Grid(1, 2, {3.0, -0.2}), -0.5, 2.0, 5.0), Grid(1, 2, {2.0, -0.2}));
  EXPECT_EQ(project_box_l1_ball(Grid(1, 2, {-3.0, 0.5}), 0.0, 2.0, 0.25), Grid(1, 2, {0.0, 0.25}));
}

TEST(BoxL1, Rejections) {
  EXPECT_THROW((void)project_box_l1_ball(Grid(1, 2), 0.1, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW((void)project_box_l1_ball(Grid(1, 2), -1.0, 1.0, 0.0), std::invalid_argument);
}

TEST(BoxL1, MatchesOracleOnRandomInstances) {
  std::mt19937_64 eng(41);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + static_cast<std::size_t>(k % 8);
    const Grid x = gaussian_grid(1, n, 500 + static_cast<std::uint64_t>(k), 2.0);
    const double lo = -u(eng), hi = u(eng), r = 0.05 + u(eng) * static_cast<double>(n) * 0.4;
    oracle::Problem p(x.values(), std::vector<double>(n, 0.0));
    p.add_box(lo, hi);
    p.add_l1(r);
    const Grid lib = project_box_l1_ball(x, lo, hi, r);
    worst = std::max(worst, testutil::max_abs_diff(p.solve(), lib.values()));
    EXPECT_LE(vec::norm1(lib.span()), r * (1 + 1e-15));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(BoxL1, AgreesWithConvergedDykstraAtGridScale) {
  // An inactive ℓ2 ball keeps the stack on the Dykstra path.
  const Grid x = gaussian_grid(16, 16, 77, 1.5);
  ConstraintStack dykstra = cases::stack_of({BoxSet{-1, 0.8}, L1Ball{40.0}, L2Ball{1e6}});
  dykstra.dykstra_max_iters = 100000;
  dykstra.dykstra_tol = 1e-12;
  const auto ref = project_intersection(x, dykstra);
  ASSERT_TRUE(ref.converged);
  const auto fast = project_intersection(x, cases::stack_of({L1Ball{40.0}, BoxSet{-1, 0.8}}));
  EXPECT_TRUE(fast.converged);
  EXPECT_EQ(fast.iterations, 1);
  EXPECT_LT(testutil::max_abs_diff(ref.x, fast.x), 1e-9);
}

TEST(Intersection, StallingIterateIsNotConverged) {
  // Three sets where the iterate stops moving long before the increments do.
  const Grid x = gaussian_grid(4, 4, 9, 3.0);
  ConstraintStack s = cases::stack_of({BoxSet{-1, 1}, L1Ball{4.0}, L2Ball{1.5}});
  oracle::Problem p(x.values(), std::vector<double>(16, 0.0));
  p.add_box(-1, 1);
  p.add_l1(4.0);
  p.add_l2(1.5);
  const auto exact = p.solve();
  const auto capped = project_intersection(x, s);
  if (capped.converged) {
    EXPECT_LT(testutil::max_abs_diff(exact, capped.x.values()), 1e-6);
  }
  s.dykstra_max_iters = 2000;
  const auto full = project_intersection(x, s);
  EXPECT_TRUE(full.converged);
  EXPECT_LT(testutil::max_abs_diff(exact, full.x.values()), 1e-6);
}

TEST(Intersection, NonConvergenceReportsViolations) {
  const Grid x = gaussian_grid(4, 4, 8, 3.0);
  ConstraintStack s = cases::stack_of({BoxSet{-1, 1}, L2Ball{0.5}, L1Ball{0.8}});
  const auto p = project_intersection(x, s);
  EXPECT_FALSE(p.converged);
  EXPECT_EQ(p.violations.size(), 3u);
}

TEST(Intersection, RejectsEmptyStack) {
  EXPECT_THROW((void)project_intersection(Grid(1, 1), ConstraintStack{}), std::invalid_argument);
}

TEST(Feasibility, ViolationMagnitudes) {
  ConstraintStack s = cases::stack_of({BoxSet{0, 1}});
  const auto f = is_feasible(Grid(1, 1, 2.0), s, 1e-8);
  EXPECT_FALSE(f.feasible);
  EXPECT_DOUBLE_EQ(f.violations[0], 1.0);
  EXPECT_DOUBLE_EQ(violation(Grid(1, 2, {3.0, 4.0}), L2Ball{1.0}), 4.0);
  EXPECT_DOUBLE_EQ(violation(Grid(1, 2, {3.0, -4.0}), L1Ball{1.0}), 6.0);
}

TEST(Feasibility, ProjectedPointsAreFeasible) {
  const Grid x = gaussian_grid(4, 4, 9, 3.0);
  for (const ConstraintSpec& c : std::vector<ConstraintSpec>{BoxSet{-1, 1}, L2Ball{1.0}, L1Ball{2.0}, TvBall{3.0}}) {
    ConstraintStack s = cases::stack_of({c});
    EXPECT_TRUE(is_feasible(project_onto(x, c), s, 1e-8).feasible) << describe(c);
  }
  ConstraintStack both = cases::stack_of({BoxSet{-1, 1}, L1Ball{4.0}, L2Ball{1.5}});
  both.dykstra_max_iters = 2000;
  const auto p = project_intersection(x, both);
  EXPECT_TRUE(p.converged);
  EXPECT_TRUE(is_feasible(p.x, both, both.dykstra_tol).feasible);
}

TEST(Validate, RejectsBadSpecs) {
  EXPECT_THROW(validate(BoxSet{1, 0}), std::invalid_argument);
  EXPECT_THROW(validate(L2Ball{0.0}), std::invalid_argument);
  EXPECT_THROW(validate(L1Ball{-1.0}), std::invalid_argument);
  EXPECT_NO_THROW(validate(TvBall{0.0}));
}

namespace {

std::vector<ConstraintSpec> single_sets() { return {BoxSet{-0.5, 0.8}, L2Ball{1.2}, L1Ball{1.5}, TvBall{2.0}}; }

}  // namespace

TEST(Properties, Idempotence) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Grid x = gaussian_grid(3, 4, 100 + seed, 2.0);
    for (const auto& c : single_sets()) {
      const Grid p = project_onto(x, c);
      EXPECT_LT(testutil::max_abs_diff(project_onto(p, c), p), 1e-10) << describe(c);
    }
  }
}

TEST(Properties, NonExpansive) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Grid x = gaussian_grid(3, 4, 200 + seed, 2.0);
    const Grid y = gaussian_grid(3, 4, 300 + seed, 2.0);
    const double d = std::sqrt(vec::dist_sq(x.span(), y.span()));
    for (const auto& c : single_sets()) {
      const Grid px = project_onto(x, c, {1e-10, 5000});
      const Grid py = project_onto(y, c, {1e-10, 5000});
      EXPECT_LE(std::sqrt(vec::dist_sq(px.span(), py.span())), d * (1.0 + 1e-6)) << describe(c);
    }
  }
}

TEST(Properties, VariationalInequality) {
  // <x − P(x), y − P(x)> ≤ 0 for every feasible y.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Grid x = gaussian_grid(3, 3, 400 + seed, 2.0);
    for (const auto& c : single_sets()) {
      const Grid p = project_onto(x, c, {1e-10, 5000});
      for (std::uint64_t k = 0; k < 5; ++k) {
        const Grid y = project_onto(gaussian_grid(3, 3, 500 + 10 * seed + k, 2.0), c, {1e-10, 5000});
        double ip = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) ip += (x[i] - p[i]) * (y[i] - p[i]);
        EXPECT_LE(ip, 1e-6) << describe(c);
      }
    }
  }
}

TEST(Oracle, RandomSmallInstances) {
  std::mt19937_64 eng(77);
  for (int i = 0; i < 20; ++i) {
    EXPECT_LT(cases::box_case(eng).error, 1e-6);
    EXPECT_LT(cases::l2_case(eng).error, 1e-6);
    EXPECT_LT(cases::l1_case(eng).error, 1e-6);
    const auto tv = cases::tv_case(eng);
    EXPECT_LT(tv.error, 1e-4);
    const auto in = cases::intersection_case(eng);
    EXPECT_LT(in.error, 1e-6);
  }
}

TEST(Deterministic, RepeatedCallsAreBitIdentical) {
  const Grid x = gaussian_grid(5, 5, 600, 2.0);
  ConstraintStack s = cases::stack_of({BoxSet{-1, 1}, L1Ball{3.0}, TvBall{4.0}});
  EXPECT_EQ(project_intersection(x, s).x, project_intersection(x, s).x);
}
