#pragma once

// Euclidean projections of (w, Q) onto the feasible region. The region is a
// product set, so w and Q are projected independently.

#include "pgs/core.hpp"

namespace pgs {

// Projection onto {w in [0,1]^n, |w|_1 >= eps1} with frozen coordinates held
// at their input values (they still count toward the norm). The free block is
// clamp(w + tau, 0, 1) with the smallest tau >= 0 meeting the floor.
Vector project_w(const Vector& w, double eps1, const Mask& frozen);

// Euclidean projection of one row onto the probability simplex.
RowVector project_simplex(const RowVector& row);

// Each free row onto the simplex; if the mean of 1 - Q[i, y_i] over the
// capped rows then exceeds eps2, blend the capped rows toward their one-hot
// labels with the smallest t restoring the cap. Frozen rows pass through.
// `capped` defaults to every non-frozen row.
Matrix project_q_classification(const Matrix& q, const std::vector<int>& labels, double eps2,
                                const Mask& frozen, const Mask& capped = {});

// Scales the capped block onto the ball |Q_capped|_2 <= eps2 when outside it.
Vector project_q_regression(const Vector& q, double eps2, const Mask& frozen,
                            const Mask& capped = {});

LabelQualityParams project(const LabelQualityParams& p, const WeakDataset& d,
                           const FeasibleRegion& region);

}  // namespace pgs
