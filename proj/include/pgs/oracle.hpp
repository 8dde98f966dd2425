#pragma once

// Slow reference projections for small instances, written without reusing
// any of the production projection code.

#include <cstdint>

#include "pgs/core.hpp"

namespace pgs::oracle {

// Exact projection onto {w in [0,1]^n, |w|_1 >= eps1} by enumerating every
// KKT active set (each free coordinate at 0, at 1 or interior; floor active
// or not). Exponential in the number of free coordinates.
Vector project_w(const Vector& w, double eps1, const Mask& frozen);

// Exact simplex projection by enumerating supports.
RowVector project_simplex(const RowVector& v);

// Projection onto the ball |Q_capped|_2 <= eps2 by a dense search over the
// sphere followed by local refinement. At most 3 capped coordinates.
Vector project_ball(const Vector& q, double eps2, const Mask& frozen, const Mask& capped = {});

// Exact joint projection onto {rows on the simplex, mean (1 - Q[i,y_i]) over
// capped rows <= eps2}: bisection on the multiplier of the cap, each row
// projected with its label coordinate shifted by that multiplier.
Matrix project_q_classification(const Matrix& q, const std::vector<int>& labels, double eps2,
                                const Mask& frozen, const Mask& capped = {});

struct ProjectCheckStats {
  int cases = 0;
  double max_gap_w = 0.0;     // |dist(production) - dist(oracle)|
  double max_gap_ball = 0.0;
  double max_infeasibility = 0.0;
  int classification_within = 0;  // cases with dist ratio <= 1 + tolerance
  double worst_ratio = 1.0;
  double mean_ratio = 1.0;
  double ratio_tolerance = 0.05;
};

// Random instances with n <= 3 and k <= 3 compared against the oracles.
ProjectCheckStats project_check(int cases, std::uint64_t seed, double ratio_tolerance = 0.05);

}  // namespace pgs::oracle
