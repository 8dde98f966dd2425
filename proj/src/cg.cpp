#include "pgs/cg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pgs {

CgResult conjugate_gradient(const LinearOperator& apply, const Vector& b, double tol,
                            int max_iters, const Vector* x0) {
  CgResult out;
  out.x = x0 ? *x0 : Vector::Zero(b.size());
  Vector r = x0 ? Vector(b - apply(out.x)) : b;
  const double target = tol * b.norm();
  double rr = r.squaredNorm();
  if (std::sqrt(rr) <= target) {
    out.residual = std::sqrt(rr);
    out.converged = true;
    return out;
  }
  Vector p = r;
  for (int it = 1; it <= max_iters; ++it) {
    const Vector ap = apply(p);
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0)) {
      std::ostringstream os;
      os << "conjugate gradient breakdown: non-positive curvature " << curvature
         << " at iteration " << it << ", residual " << std::sqrt(rr);
      throw Error(os.str());
    }
    const double alpha = rr / curvature;
    out.x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    out.iterations = it;
    if (std::sqrt(rr_new) <= target) {
      out.residual = std::sqrt(rr_new);
      out.converged = true;
      return out;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  out.residual = std::sqrt(rr);
  return out;
}

}  // namespace pgs
