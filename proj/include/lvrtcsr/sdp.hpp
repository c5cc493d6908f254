#pragma once

#include <string>
#include <vector>

#include "lvrtcsr/common.hpp"

namespace lvrtcsr::sdp {

/// One PSD cone constraint F(theta) = f0 + sum_i theta_i * fi  >=  0.
struct Block {
  Mat f0;
  std::vector<Mat> fi;  // one symmetric matrix per decision variable
};

/// minimize c.theta  s.t.  blocks PSD,  a_eq theta = b_eq.
/// A zero `c` requests the analytic center of the feasible set.
struct Problem {
  int n_vars = 0;
  Vec c;
  std::vector<Block> blocks;
  Mat a_eq;
  Vec b_eq;
};

struct Result {
  bool feasible = false;
  bool optimal = false;
  Vec theta;
  double objective = 0.0;
  double gap = 0.0;  // barrier duality-gap bound
  std::string message;
};

/// Log-barrier path following. `start` must satisfy the equalities; if it is
/// not strictly inside the cones a phase-I pass (F + s I >= 0, minimize s)
/// is run first. `tol` bounds the duality gap relative to the barrier
/// parameter nu = total cone dimension.
Result solve(const Problem& prob, const Vec& start, double tol);

}  // namespace lvrtcsr::sdp
