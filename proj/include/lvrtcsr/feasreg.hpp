#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/netmodel.hpp"

namespace lvrtcsr::feasreg {

/// One cosine term of the |v_k|^2 expansion: amplitude * cos(d_i - d_j + phase).
struct CosTerm {
  int i = 0;  // generator indices, i < j
  int j = 0;
  double amplitude = 0.0;  // 2 C_i C_j >= 0
  double phase = 0.0;      // d_ic - d_jc
};

/// LVRT feasibility at one RG bus: voltage_sq(delta) >= lvrt_max^2.
struct LVRTConstraint {
  int rg_bus = 0;  // bus id
  double lvrt_max = 0.0;
  double const_sum = 0.0;  // sum_i C_i^2
  double threshold = 0.0;  // lvrt_max^2 - const_sum
  std::vector<CosTerm> terms;
};

/// Time-independent collapse of an LVRT curve: max_t V_LVRT(t).
double lvrt_max_from_curve(
    const std::vector<std::pair<double, double>>& curve);

/// One constraint per RG bus carrying LVRT data, built from the
/// voltage-recovery expansion rows.
std::vector<LVRTConstraint> build_constraints(
    const netmodel::NetworkModel& model,
    const netmodel::VoltageRecovery& recovery);

/// |v_k|^2 at COA generator angles delta.
double voltage_sq(const Vec& delta, const LVRTConstraint& c);

struct Line {
  double a = 0.0;  // slope
  double b = 0.0;  // intercept
};

/// Piecewise-linear lower bound of cos(d + phase) on [-pi/2, pi/2]:
/// min over `lines` <= cos everywhere, with the chord vertices on the curve.
struct PWLFit {
  double phase = 0.0;
  int n_line = 0;
  std::vector<Line> lines;
  std::vector<double> vertices;  // n_line + 1 sorted abscissae, ends +-pi/2
  double objective = 0.0;        // sum of squared gaps on the fit grid
};

/// Fits the lower bound by vertex placement (endpoints pinned to +-pi/2,
/// vertices on the curve). Exhaustive lattice search for n_line <= 3,
/// multi-start coordinate descent with hierarchical warm starts above.
/// Throws SolverError when no feasible placement exists.
PWLFit fit_pwl_lower(double phase, int n_line, int n_samples = 721);

/// min over the fit's lines at delta.
double pwl_value(const PWLFit& fit, double delta);

/// Largest value of (min of lines - cos(delta + phase)) over the window,
/// located exactly from line intersections and stationary points.
double pwl_max_violation(const std::vector<Line>& lines, double phase);

/// CSV export (delta, cos value, approx value) for plotting.
void write_fit_csv(const PWLFit& fit, const std::string& path,
                   int n_points = 1001);

struct FacetTag {
  enum class Kind { Lvrt, PiBox } kind = Kind::PiBox;
  int bus = -1;                  // Lvrt: RG bus id
  long combo = -1;               // Lvrt: combination index
  std::vector<int> line_choice;  // Lvrt: chosen line per cosine term
  int gen_k = -1, gen_j = -1;    // PiBox: generator pair
  int sign = 0;                  // PiBox: +1 upper, -1 lower

  std::string str() const;
};

/// ACFR polytope over x1 deviations: l_ineq x1 + l_ineq_const <= 0 rows with
/// provenance tags, plus the COA equality block over the stacked state.
struct Polytope {
  Mat l_ineq;
  Vec l_ineq_const;
  Mat l_eq;  // 2 x 2n: m.x1 = 0, m.x2 = 0
  Vec l_eq_const;
  std::vector<FacetTag> tags;

  int n() const { return static_cast<int>(l_ineq.cols()); }
  int n_facets() const { return static_cast<int>(l_ineq.rows()); }
  std::string to_json() const;
};

struct AcfrOptions {
  long facet_cap = 4096;  // per RG bus; exceeded -> stderr warning
  double amplitude_floor = 1e-14;
};

/// Cartesian-product linearization of every LVRT constraint plus the Pi box
/// facets and COA equalities. `fits` is parallel to constraints/terms.
/// Throws ModelError when some |d_kj*| >= pi/2 or the SEP violates a row.
Polytope assemble_acfr(const std::vector<LVRTConstraint>& constraints,
                       const std::vector<std::vector<PWLFit>>& fits,
                       const Vec& delta_star, const Vec& m,
                       const AcfrOptions& opts = {});

/// Fits every cosine term of every constraint (parallel across terms).
std::vector<std::vector<PWLFit>> fit_all_terms(
    const std::vector<LVRTConstraint>& constraints, int n_line,
    int n_samples = 721, unsigned jobs = 1);

enum class FacetClass { FlowIn, FlowOut, SemiSaddle };

struct FacetClassification {
  FacetClass cls = FacetClass::SemiSaddle;
  double rate = 0.0;  // L^(i) . x2
};

/// Classifies the boundary crossing at a point on facet i; throws
/// ModelError when x is not on the facet (1e-8) or outside another facet.
FacetClassification classify_facet_point(const Polytope& poly, int i,
                                         const dynamics::COAState& x,
                                         double tol = 1e-9);

}  // namespace lvrtcsr::feasreg
