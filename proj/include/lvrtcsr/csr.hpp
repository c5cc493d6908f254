#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/feasreg.hpp"
#include "lvrtcsr/lff.hpp"
#include "lvrtcsr/netmodel.hpp"

namespace lvrtcsr::csr {

using dynamics::COAState;
using dynamics::StateMatrices;
using lff::LyapunovCandidate;

struct FlowoutResult {
  enum class Status {
    FacetEmpty,    // facet carries no point of the polytope
    LevelSetMiss,  // facet does not meet {V <= v}
    Safe,          // intersection nonempty, max rate <= flow_tol
    FlowOut        // witness found
  };
  Status status = Status::FacetEmpty;
  double max_rate = 0.0;
  double min_v = 0.0;  // min of V on the facet; +inf when the facet is empty
  std::optional<COAState> min_point;  // facet point attaining (or below) min_v
  std::optional<COAState> witness;
};

/// Flow-out existence check on facet i: maximize the facet rate L^(i).x2 over
/// {facet equality, other facets <= 0, COA equalities, V <= v}. Returns a
/// witness iff the optimum exceeds flow_tol.
FlowoutResult flowout_exists(const LyapunovCandidate& cand, double v,
                             const feasreg::Polytope& poly, int i,
                             const StateMatrices& mats,
                             double flow_tol = 1e-9);

struct ExpandResult {
  double v_max = 0.0;
  int steps = 0;
  double dv = 0.0;
  int binding_facet = -1;  // facet whose flow-out capped the expansion
  double binding_rate = 0.0;
};

/// Linear search of v from 0 in dv steps with per-facet flow-out checks,
/// then bisection between the last safe and first unsafe level to dv/100.
/// dv <= 0 selects v_ref/200 with v_ref the smallest V on any Pi-box facet.
ExpandResult expand_level_set(const LyapunovCandidate& cand,
                              const feasreg::Polytope& poly,
                              const StateMatrices& mats, double dv = -1.0);

struct RefinementRecord {
  int iteration = 0;  // 0 = energy function, >= 1 = LMI refinement
  double v_max = 0.0;
  double v_x0 = 0.0;
  bool contains_x0 = false;
  int binding_facet = -1;
};

struct CSREstimate {
  LyapunovCandidate candidate;
  double v = 0.0;
  feasreg::Polytope polytope;
  std::vector<RefinementRecord> history;
};

/// Membership: V(x) <= v, every polytope inequality holds, COA equalities
/// within 1e-8.
bool contains(const CSREstimate& est, const COAState& x,
              const StateMatrices& mats);

/// Energy-function candidate first; while x0 is not contained, re-solve the
/// LMI minimizing V(x0) and re-expand, up to config.max_refinements.
CSREstimate estimate_csr(const COAState& x0, const StateMatrices& mats,
                         const feasreg::Polytope& poly,
                         const lff::LFSearchConfig& config = {},
                         double dv = -1.0);

struct AssessmentResult {
  enum class Verdict { Stable, NotCertified } verdict = Verdict::NotCertified;
  double v_max = 0.0;
  double v_at_clearing = 0.0;
  std::optional<double> estimated_cct;
  int refinements_used = 0;
  int binding_facet = -1;

  std::string to_json() const;
};

/// Everything assembled for one model + fault: context, LVRT constraints,
/// fits, and the ACFR polytope.
struct SystemSetup {
  dynamics::FaultContext ctx;
  std::vector<feasreg::LVRTConstraint> constraints;
  std::vector<std::vector<feasreg::PWLFit>> fits;
  feasreg::Polytope polytope;
};

SystemSetup prepare_system(const netmodel::NetworkModel& model,
                           const dynamics::FaultScenario& scenario,
                           int n_line = 4, int n_samples = 721,
                           unsigned jobs = 1);

/// Stable iff the fault-cleared state is inside the final estimate;
/// estimated CCT by bisection on the clearing time to 1 ms.
AssessmentResult assess_fault(const SystemSetup& sys,
                              const lff::LFSearchConfig& config = {},
                              double dv = -1.0, double cct_bracket = 2.0,
                              CSREstimate* out_estimate = nullptr);

}  // namespace lvrtcsr::csr
