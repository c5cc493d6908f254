#pragma once

#include <string>
#include <vector>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/csr.hpp"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/feasreg.hpp"

namespace lvrtcsr::oracle {

using dynamics::COAState;
using dynamics::StateMatrices;

enum class CellClass { InCsr, ExitsFr, Diverges, Inconclusive };

const char* cell_class_name(CellClass c);

struct OracleOptions {
  double horizon = 20.0;
  double rtol = 1e-8;
  double atol = 1e-10;
  double terminal_tol = 1e-3;  // ||x||_inf at the horizon
  double early_tol = 5e-4;     // early convergence stop
};

/// Simulates one state to the horizon with event detection: LVRT violation
/// (the true voltage constraint) and loss of synchronism |d_kj| > pi are
/// terminal;
/// convergence is ||x||_inf below the tolerance.
CellClass classify_state(const COAState& x0, const StateMatrices& mats,
                         const std::vector<feasreg::LVRTConstraint>& constraints,
                         const OracleOptions& opts = {});

/// 2-D manifold slice for two-machine systems: x1 = y1 w, x2 = y2 w with
/// w = (m2, -m1)/(m1 + m2), so y1 is the pairwise angle deviation and y2
/// the pairwise speed deviation.
struct GridSpec {
  int n1 = 201, n2 = 201;
  double y1_min = 0.0, y1_max = 0.0;  // angle-deviation range
  double y2_min = 0.0, y2_max = 0.0;  // speed-deviation range
};

/// Default spec covering Pi's manifold slice in y1 and +-`speed_span` in y2.
GridSpec default_grid(const StateMatrices& mats, int n1 = 201, int n2 = 201,
                      double speed_span = 3.0);

struct OracleGrid {
  GridSpec spec;
  std::vector<CellClass> cells;  // row-major: index = i2 * n1 + i1

  double y1(int i1) const;
  double y2(int i2) const;
  COAState state(int i1, int i2, const StateMatrices& mats) const;
  void write_csv(const std::string& path) const;
};

/// Grid-based actual CSR. Guarded to two-machine systems (the only case
/// whose manifold slice is two-dimensional).
OracleGrid brute_force_csr(const StateMatrices& mats,
                           const std::vector<feasreg::LVRTConstraint>& constraints,
                           const GridSpec& spec, const OracleOptions& opts = {},
                           unsigned jobs = 1);

/// Ground-truth critical clearing time by bisection to 1 ms; the stable side
/// is classify_state(state_at_clearing(t)) == InCsr. Throws when unstable
/// even at zero clearing time.
double true_cct(const dynamics::FaultContext& ctx,
                const std::vector<feasreg::LVRTConstraint>& constraints,
                const OracleOptions& opts = {}, double bracket = 2.0);

struct AuditReport {
  int n_in_csr = 0;
  int n_contained = 0;
  int n_sound = 0;  // contained and in-CSR
  std::vector<std::pair<int, int>> violations;  // contained but not in-CSR
  double coverage = 0.0;  // |contained and in-CSR| / |in-CSR|

  std::string to_json() const;
};

AuditReport audit_estimate(const csr::CSREstimate& estimate,
                           const OracleGrid& grid, const StateMatrices& mats);

}  // namespace lvrtcsr::oracle
