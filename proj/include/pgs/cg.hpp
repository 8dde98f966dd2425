#pragma once

#include <functional>

#include "pgs/core.hpp"

namespace pgs {

using LinearOperator = std::function<Vector(const Vector&)>;

struct CgResult {
  Vector x;
  int iterations = 0;
  double residual = 0.0;  // final |b - A x|_2
  bool converged = false;
};

// Conjugate gradient for a symmetric positive-definite operator given only
// through matrix-vector products. Stops when |r|_2 <= tol * |b|_2.
// Throws Error on a non-positive curvature direction (p^T A p <= 0). When the
// iteration budget runs out the result carries converged = false.
CgResult conjugate_gradient(const LinearOperator& apply, const Vector& b, double tol,
                            int max_iters, const Vector* x0 = nullptr);

}  // namespace pgs
