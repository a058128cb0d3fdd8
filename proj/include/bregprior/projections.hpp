#pragma once

#include <string>
#include <variant>
#include <vector>

#include "bregprior/grid.hpp"

namespace bregprior {

struct BoxSet {
  double lo;
  double hi;
};
struct L2Ball {
  double radius;
};
struct L1Ball {
  double radius;
};
/// Anisotropic total variation with circular forward differences.
struct TvBall {
  double radius;
};

using ConstraintSpec = std::variant<BoxSet, L2Ball, L1Ball, TvBall>;

std::string describe(const ConstraintSpec& spec);
void validate(const ConstraintSpec& spec);

struct TvOptions {
  double tol = 1e-6;
  int max_iters = 500;
};

/// The feasible set: intersection of the listed sets, projected with Dykstra.
struct ConstraintStack {
  std::vector<ConstraintSpec> sets;
  int dykstra_max_iters = 200;
  double dykstra_tol = 1e-8;
  TvOptions tv;

  void validate() const;
};

struct TvProjection {
  Grid x;
  bool converged = true;
  double duality_gap = 0.0;
  int iterations = 0;
};

struct IntersectionProjection {
  Grid x;
  bool converged = true;
  int iterations = 0;
  /// Violation of each set at the returned point.
  std::vector<double> violations;
};

struct Feasibility {
  bool feasible = true;
  std::vector<double> violations;
};

Grid project_box(const Grid& x, double lo, double hi);
Grid project_l2_ball(const Grid& x, double radius);
Grid project_l1_ball(const Grid& x, double radius);
/// Exact projection onto [lo, hi]ⁿ ∩ {‖x‖₁ ≤ radius} for lo ≤ 0 ≤ hi.
Grid project_box_l1_ball(const Grid& x, double lo, double hi, double radius);
TvProjection project_tv_ball(const Grid& x, double radius, double tol = 1e-6, int max_iters = 500);

/// Projection onto one set; TV non-convergence is not reported here.
Grid project_onto(const Grid& x, const ConstraintSpec& spec, const TvOptions& tv = {});

/// Dykstra over the listed sets. A box containing the origin paired with one
/// ℓ1 ball is projected exactly instead, since Dykstra needs thousands of
/// cycles there at grid scale.
IntersectionProjection project_intersection(const Grid& x, const ConstraintStack& stack);

double tv_norm(const Grid& x);

/// Box: max distance outside [lo, hi]; balls: norm excess over the radius.
double violation(const Grid& x, const ConstraintSpec& spec);
Feasibility is_feasible(const Grid& x, const ConstraintStack& stack, double tol);

}  // namespace bregprior
