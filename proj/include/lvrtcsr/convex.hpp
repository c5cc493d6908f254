#pragma once

#include <functional>
#include <vector>

#include "lvrtcsr/common.hpp"

namespace lvrtcsr::convex {

/// Smooth scalar function with derivatives. `hess` may be empty for affine
/// functions.
struct Functional {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;

  static Functional affine(const Vec& a, double b);
};

/// minimize f0(x)  s.t.  a_eq x = b_eq,  g_i(x) <= 0 (convex).
struct Program {
  Functional objective;
  Mat a_eq;  // may have zero rows
  Vec b_eq;
  std::vector<Functional> ineqs;
};

struct SolveResult {
  bool converged = false;
  Vec x;
  double value = 0.0;
  double gap = 0.0;  // barrier duality-gap bound m/t
  bool stopped_early = false;
};

/// Log-barrier path following from a strictly feasible start (equalities
/// satisfied, every g_i(x) < 0). `stop_early`, when set, aborts the solve
/// as soon as an iterate satisfies it (used to obtain interior points
/// without polishing to the boundary).
SolveResult minimize(const Program& prog, const Vec& x_start, double tol,
                     const std::function<bool(const Vec&)>& stop_early = {});

/// Phase-I: finds x with a_eq x = b_eq and g_i(x) < -margin for all affine
/// g_i, or reports infeasibility. Only affine inequalities are supported.
struct PhaseIResult {
  bool feasible = false;
  Vec x;
  double slack = 0.0;  // max_i g_i(x) at the returned point
};
PhaseIResult phase_one(const Mat& a_eq, const Vec& b_eq, const Mat& g,
                       const Vec& h, double margin, double tol);

}  // namespace lvrtcsr::convex
