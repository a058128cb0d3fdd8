#include "bregprior/projections.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>
#include <utility>

namespace bregprior {

namespace {

// Euclidean projection of v onto {‖v‖₁ ≤ radius}, sort-and-threshold.
void project_l1_inplace(std::span<double> v, double radius) {
  if (vec::norm1(v) <= radius) return;
  if (radius <= 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const double u = std::abs(v[order[j]]);
    cumsum += u;
    const double candidate = (cumsum - radius) / static_cast<double>(j + 1);
    if (u - candidate > 0.0) theta = candidate;
    else break;
  }
  auto shrink = [&](double th) {
    std::size_t active = 0;
    for (double& e : v) {
      const double m = std::abs(e) - th;
      e = m > 0.0 ? std::copysign(m, e) : 0.0;
      active += m > 0.0 ? 1 : 0;
    }
    return active;
  };
  std::vector<double> orig(v.begin(), v.end());
  std::size_t active = shrink(theta);
  // Rounding can leave ‖v‖₁ a few ulps above the radius; nudge θ up.
  for (int pass = 0; pass < 4 && active > 0; ++pass) {
    const double excess = vec::norm1(v) - radius;
    if (excess <= 0.0) break;
    theta += std::max(excess / static_cast<double>(active), theta * 1e-15);
    std::copy(orig.begin(), orig.end(), v.begin());
    active = shrink(theta);
  }
}

// Circular forward differences: first n entries horizontal, next n vertical.
void tv_forward(const Grid& x, std::span<double> out) {
  const std::size_t R = x.rows(), C = x.cols(), n = x.size();
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t rn = (r + 1) % R;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t cn = (c + 1) % C;
      out[r * C + c] = x(r, cn) - x(r, c);
      out[n + r * C + c] = x(rn, c) - x(r, c);
    }
  }
}

// out = a - D^T p
void tv_primal_from_dual(const Grid& a, std::span<const double> p, Grid& out) {
  const std::size_t R = a.rows(), C = a.cols(), n = a.size();
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t rp = (r + R - 1) % R;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t cp = (c + C - 1) % C;
      const double dt = (p[r * C + cp] - p[r * C + c]) + (p[n + rp * C + c] - p[n + r * C + c]);
      out(r, c) = a(r, c) - dt;
    }
  }
}

double mean_of(const Grid& x) {
  return std::accumulate(x.values().begin(), x.values().end(), 0.0) / static_cast<double>(x.size());
}

// Pull x toward its mean until TV(x) ≤ radius; TV is shift-invariant and
// positively homogeneous, so this lands on the ball exactly.
Grid tv_restore(const Grid& x, double radius) {
  const double tv = tv_norm(x);
  if (tv <= radius) return x;
  const double m = mean_of(x);
  const double s = radius / tv;
  Grid out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = m + (x[i] - m) * s;
  return out;
}

}  // namespace

std::string describe(const ConstraintSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>) os << "box[" << s.lo << "," << s.hi << "]";
        else if constexpr (std::is_same_v<T, L2Ball>) os << "l2(" << s.radius << ")";
        else if constexpr (std::is_same_v<T, L1Ball>) os << "l1(" << s.radius << ")";
        else os << "tv(" << s.radius << ")";
      },
      spec);
  return os.str();
}

void validate(const ConstraintSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>) {
          require(std::isfinite(s.lo) && std::isfinite(s.hi) && s.lo <= s.hi, "box: requires finite lo <= hi");
        } else if constexpr (std::is_same_v<T, TvBall>) {
          require(std::isfinite(s.radius) && s.radius >= 0.0, "tv ball: radius must be >= 0");
        } else {
          require(std::isfinite(s.radius) && s.radius > 0.0, "ball: radius must be > 0");
        }
      },
      spec);
}

void ConstraintStack::validate() const {
  require(!sets.empty(), "ConstraintStack: at least one set is required");
  require(dykstra_max_iters > 0 && dykstra_tol > 0.0, "ConstraintStack: Dykstra limits must be positive");
  require(tv.max_iters > 0 && tv.tol > 0.0, "ConstraintStack: TV limits must be positive");
  for (const auto& s : sets) bregprior::validate(s);
}

Grid project_box(const Grid& x, double lo, double hi) {
  require(lo <= hi, "project_box: lo must not exceed hi");
  Grid out = x;
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

Grid project_l2_ball(const Grid& x, double radius) {
  require(radius > 0.0, "project_l2_ball: radius must be positive");
  const double nrm = vec::norm(x.span());
  if (nrm <= radius) return x;
  Grid out = x;
  const double s = radius / nrm;
  for (double& v : out.values()) v *= s;
  return out;
}

Grid project_l1_ball(const Grid& x, double radius) {
  require(radius > 0.0, "project_l1_ball: radius must be positive");
  Grid out = x;
  project_l1_inplace(out.span(), radius);
  return out;
}

double tv_norm(const Grid& x) {
  std::vector<double> d(2 * x.size());
  tv_forward(x, d);
  return vec::norm1(d);
}

TvProjection project_tv_ball(const Grid& x, double radius, double tol, int max_iters) {
  require(radius >= 0.0, "project_tv_ball: radius must be non-negative");
  if (tv_norm(x) <= radius) return {x, true, 0.0, 0};
  if (radius == 0.0) return {Grid(x.shape(), mean_of(x)), true, 0.0, 0};

  // FISTA on the dual  min_p ½‖x − Dᵀp‖² + radius‖p‖_∞,  primal = x − Dᵀp.
  // ‖D‖² ≤ 8 for 2D circular forward differences.
  const std::size_t m = 2 * x.size();
  const double step = 1.0 / 8.0;
  std::vector<double> p(m, 0.0), q(m, 0.0), p_next(m), grad(m);
  Grid primal(x.shape());
  double t = 1.0;
  const double half_a2 = 0.5 * vec::norm_sq(x.span());

  auto gap_at = [&](std::span<const double> dual, Grid& restored) {
    tv_primal_from_dual(x, dual, primal);
    restored = tv_restore(primal, radius);
    const double pval = 0.5 * vec::dist_sq(restored.span(), x.span());
    const double dval = half_a2 - 0.5 * vec::norm_sq(primal.span()) - radius * vec::norm_inf(dual);
    return std::pair{pval - dval, pval};
  };

  TvProjection result;
  Grid restored = x;
  for (int it = 1; it <= max_iters; ++it) {
    tv_primal_from_dual(x, q, primal);
    tv_forward(primal, grad);
    for (std::size_t i = 0; i < m; ++i) p_next[i] = q[i] + step * grad[i];
    // prox of s·radius‖·‖_∞ via Moreau: v − P_{‖·‖₁ ≤ s·radius}(v)
    std::vector<double> proj(p_next);
    project_l1_inplace(proj, step * radius);
    double restart_test = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      p_next[i] -= proj[i];
      restart_test += (q[i] - p_next[i]) * (p_next[i] - p[i]);
    }
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (restart_test > 0.0) t_next = 1.0, t = 1.0;
    const double mom = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < m; ++i) {
      q[i] = p_next[i] + mom * (p_next[i] - p[i]);
      p[i] = p_next[i];
    }
    t = t_next;
    result.iterations = it;
    if (it % 10 == 0 || it == max_iters) {
      const auto [gap, pval] = gap_at(p, restored);
      result.duality_gap = gap;
      if (gap <= tol * std::max(1.0, pval)) {
        result.x = std::move(restored);
        result.converged = true;
        return result;
      }
    }
  }
  result.x = std::move(restored);
  result.converged = false;
  return result;
}

Grid project_onto(const Grid& x, const ConstraintSpec& spec, const TvOptions& tv) {
  return std::visit(
      [&](const auto& s) -> Grid {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>) return project_box(x, s.lo, s.hi);
        else if constexpr (std::is_same_v<T, L2Ball>) return project_l2_ball(x, s.radius);
        else if constexpr (std::is_same_v<T, L1Ball>) return project_l1_ball(x, s.radius);
        else return project_tv_ball(x, s.radius, tv.tol, tv.max_iters).x;
      },
      spec);
}

double violation(const Grid& x, const ConstraintSpec& spec) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>) {
          double v = 0.0;
          for (double e : x.values()) v = std::max({v, s.lo - e, e - s.hi});
          return v;
        } else if constexpr (std::is_same_v<T, L2Ball>) {
          return std::max(0.0, vec::norm(x.span()) - s.radius);
        } else if constexpr (std::is_same_v<T, L1Ball>) {
          return std::max(0.0, vec::norm1(x.span()) - s.radius);
        } else {
          return std::max(0.0, tv_norm(x) - s.radius);
        }
      },
      spec);
}

Feasibility is_feasible(const Grid& x, const ConstraintStack& stack, double tol) {
  Feasibility f;
  f.violations.reserve(stack.sets.size());
  for (const auto& s : stack.sets) {
    const double v = violation(x, s);
    f.violations.push_back(v);
    if (!(v <= tol)) f.feasible = false;
  }
  return f;
}

Grid project_box_l1_ball(const Grid& x, double lo, double hi, double radius) {
  require(lo <= 0.0 && 0.0 <= hi, "project_box_l1_ball: box must contain the origin");
  require(radius > 0.0, "project_box_l1_ball: radius must be positive");
  // Per coordinate the minimizer of ½(y − x)² + τ|y| over [lo, hi] is the
  // clipped soft threshold; τ ≥ 0 is the single multiplier of the ball.
  const std::size_t n = x.size();
  std::vector<double> mag(n), cap(n);
  double mass0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mag[i] = std::abs(x[i]);
    cap[i] = x[i] >= 0.0 ? hi : -lo;
    mass0 += std::min(mag[i], cap[i]);
  }
  Grid out(x.shape());
  const auto apply = [&](double tau) {
    double mass = 0.0;
    std::size_t active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = mag[i] - tau;
      const double v = m > 0.0 ? std::min(m, cap[i]) : 0.0;
      out[i] = std::copysign(v, x[i]);
      mass += v;
      active += m > 0.0 && m < cap[i] ? 1 : 0;
    }
    return std::pair{mass, active};
  };
  if (mass0 <= radius) {
    apply(0.0);
    return out;
  }
  // mass(τ) = Σ min(max(|x_i| − τ, 0), cap_i) is piecewise linear and
  // decreasing; sweep its breakpoints to the crossing with the radius.
  std::vector<std::pair<double, int>> events;
  events.reserve(2 * n);
  long slope = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cap[i] <= 0.0 || mag[i] <= 0.0) continue;
    if (mag[i] - cap[i] > 0.0) events.emplace_back(mag[i] - cap[i], -1);
    else --slope;
    events.emplace_back(mag[i], +1);
  }
  std::sort(events.begin(), events.end());
  double tau = 0.0, mass = mass0, prev = 0.0;
  for (const auto& [at, delta] : events) {
    const double next = mass + static_cast<double>(slope) * (at - prev);
    if (next <= radius && slope < 0) {
      tau = prev + (mass - radius) / static_cast<double>(-slope);
      break;
    }
    mass = next;
    prev = at;
    slope += delta;
    tau = at;
  }
  auto [m, active] = apply(tau);
  // Rounding can leave the ℓ1 norm a few ulps above the radius; nudge τ up.
  for (int pass = 0; pass < 4 && m > radius && active > 0; ++pass) {
    tau += std::max((m - radius) / static_cast<double>(active), tau * 1e-15);
    std::tie(m, active) = apply(tau);
  }
  return out;
}

namespace {

// Box ∩ ℓ1 ball with the origin in the box has an exact projection.
bool box_l1_pair(const ConstraintStack& stack, const BoxSet*& box, const L1Ball*& ball) {
  if (stack.sets.size() != 2) return false;
  for (std::size_t j = 0; j < 2; ++j) {
    box = std::get_if<BoxSet>(&stack.sets[j]);
    ball = std::get_if<L1Ball>(&stack.sets[1 - j]);
    if (box && ball) return box->lo <= 0.0 && 0.0 <= box->hi;
  }
  return false;
}

}  // namespace

IntersectionProjection project_intersection(const Grid& x, const ConstraintStack& stack) {
  require(!stack.sets.empty(), "project_intersection: empty constraint stack");
  IntersectionProjection result;
  if (stack.sets.size() == 1) {
    const auto& s = stack.sets.front();
    if (const auto* tv = std::get_if<TvBall>(&s)) {
      auto r = project_tv_ball(x, tv->radius, stack.tv.tol, stack.tv.max_iters);
      result.x = std::move(r.x);
      result.converged = r.converged;
    } else {
      result.x = project_onto(x, s, stack.tv);
    }
    result.iterations = 1;
    result.violations = {violation(result.x, s)};
    return result;
  }

  const BoxSet* box = nullptr;
  const L1Ball* ball = nullptr;
  if (box_l1_pair(stack, box, ball)) {
    result.x = project_box_l1_ball(x, box->lo, box->hi, ball->radius);
    result.iterations = 1;
    result.violations = is_feasible(result.x, stack, stack.dykstra_tol).violations;
    return result;
  }

  // Dykstra: one correction increment per set.
  const std::size_t nsets = stack.sets.size();
  std::vector<Grid> incr(nsets, Grid(x.shape()));
  Grid cur = x;
  Grid shifted(x.shape());
  for (int it = 1; it <= stack.dykstra_max_iters; ++it) {
    const Grid cycle_start = cur;
    // A cycle that moves neither the iterate nor any increment is a fixed point.
    double change = 0.0;
    for (std::size_t j = 0; j < nsets; ++j) {
      for (std::size_t i = 0; i < cur.size(); ++i) shifted[i] = cur[i] + incr[j][i];
      Grid next = project_onto(shifted, stack.sets[j], stack.tv);
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double updated = shifted[i] - next[i];
        change = std::max(change, std::abs(updated - incr[j][i]));
        incr[j][i] = updated;
      }
      cur = std::move(next);
    }
    result.iterations = it;
    for (std::size_t i = 0; i < cur.size(); ++i) change = std::max(change, std::abs(cur[i] - cycle_start[i]));
    if (change <= stack.dykstra_tol) {
      const auto feas = is_feasible(cur, stack, stack.dykstra_tol);
      if (feas.feasible) {
        result.x = std::move(cur);
        result.violations = feas.violations;
        result.converged = true;
        return result;
      }
    }
  }
  result.violations = is_feasible(cur, stack, stack.dykstra_tol).violations;
  result.x = std::move(cur);
  result.converged = false;
  return result;
}

}  // namespace bregprior
