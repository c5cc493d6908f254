#pragma once

#include <optional>
#include <string>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/dynamics.hpp"

namespace lvrtcsr::lff {

using dynamics::COAState;
using dynamics::StateMatrices;

/// One member of the Lyapunov function family
///   V(x) = 1/2 x'Qx - sum_E K_e (cos d_kj + d_kj sin d_kj*) + v_offset
/// with v_offset fixing V(0) = 0.
struct LyapunovCandidate {
  Mat q_mat;      // 2n x 2n symmetric
  Vec k_diag;     // per edge, > 0
  Vec h_diag;     // per edge, > 0 (S-procedure multiplier)
  double v_offset = 0.0;
  Vec delta_star;  // SEP the candidate was built against

  std::string to_json() const;
  static LyapunovCandidate from_json(const std::string& text);
};

struct LFSearchConfig {
  double lmi_margin = 1e-9;
  double trace_normalization = -1.0;  // <= 0: default 2n + |E|
  int max_refinements = 5;
  double eps_q = 1e-8;  // PD floor for Q on the manifold tangent
  double eps_k = 1e-8;  // floor for K and H entries
  double solver_tol = 1e-8;
  // Bound on Q/K/H growth relative to the start in anchored refinements;
  // keeps the feasible set bounded without distorting the optimum.
  double anchor_cap = 1e6;
};

/// The analytical energy function: Q = blkdiag(eps_q I, M), K_e = B_kj E_k E_j.
LyapunovCandidate energy_function_candidate(const StateMatrices& mats,
                                            double eps_q = 1e-8,
                                            double eps_k = 1e-8);

double evaluate_v(const LyapunovCandidate& c, const COAState& x,
                  const StateMatrices& mats);

Vec evaluate_v_gradient(const LyapunovCandidate& c, const COAState& x,
                        const StateMatrices& mats);

/// Hessian of V in the stacked state (PSD inside the Pi box).
Mat evaluate_v_hessian(const LyapunovCandidate& c, const COAState& x,
                       const StateMatrices& mats);

double evaluate_vdot(const LyapunovCandidate& c, const COAState& x,
                     const StateMatrices& mats);

/// Sector bound (sin d - sin d*)^2 <= (d - d*)(sin d - sin d*), valid for
/// |d + d*| <= pi.
bool sector_inequality_holds(double delta_kj, double delta_kj_star);

/// The certificate matrix whose negative semidefiniteness (on the manifold)
/// makes V a valid family member; size (2n + |E|).
Mat lmi_certificate_matrix(const LyapunovCandidate& c,
                           const StateMatrices& mats);

/// Projection basis for the certificate: manifold tangent in x, identity in F.
Mat lmi_manifold_basis(const StateMatrices& mats);

/// Solves the family LMI. With an objective state, minimizes V(x0) over the
/// feasible set; otherwise returns the analytic center under the trace
/// normalization. `anchors` (used only when minimizing) add the linear
/// normalization constraints V(b) >= 1, pinning the function's scale at the
/// given boundary states so the minimization cannot flatten V wholesale.
LyapunovCandidate assemble_and_solve_lmi(
    const StateMatrices& mats, const std::optional<COAState>& minimize_v_at,
    const LFSearchConfig& config = {},
    const std::vector<COAState>& anchors = {});

}  // namespace lvrtcsr::lff
