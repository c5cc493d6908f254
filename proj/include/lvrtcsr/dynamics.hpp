#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/netmodel.hpp"

namespace lvrtcsr::dynamics {

/// Deviation state on the center-of-angle manifold: m.x1 = 0, m.x2 = 0.
struct COAState {
  Vec x1;  // angle deviations, rad
  Vec x2;  // speed deviations, rad/s

  Vec stacked() const;
  static COAState from_stacked(const Vec& z);
};

/// Matrices of the separated form xdot = A x - B F(C x), anchored at the
/// post-fault SEP. The center-of-angle electrical correction cancels
/// pairwise for a lossless network, so gamma1 is identically zero and
/// B reduces to gamma2.
struct StateMatrices {
  Mat a_mat;    // 2n x 2n
  Mat b_mat;    // 2n x |E|
  Mat c_mat;    // |E| x 2n, C x = deviations of edge angle differences
  Mat g_mat;    // equal to c_mat
  Mat gamma1;   // n x |E|, zero
  Mat gamma2;   // n x |E|
  Vec sin_star;     // sin(delta_kj*) per edge
  Vec delta_star;   // COA-normalized SEP angles
  Vec m, d;         // per-machine inertia and damping
  double lambda = 0.0;  // uniform d_k / m_k
  std::vector<std::pair<int, int>> edges;
  Vec weights;  // B_kj E_k E_j per edge

  int n() const { return static_cast<int>(m.size()); }
  int n_edges() const { return static_cast<int>(edges.size()); }
  /// Full angle difference delta_k - delta_j for edge e at deviation x1.
  double edge_angle(std::size_t e, const Vec& x1) const;
};

struct FaultScenario {
  int faulted_branch = 0;       // index into NetworkModel::branches
  double fault_location = 0.5;  // fraction along the branch
  double clearing_time = 0.0;   // s
  enum class ClearingAction { TripBranch, Restore } clearing_action =
      ClearingAction::TripBranch;
};

FaultScenario load_scenario(const std::string& path);

struct Trajectory {
  std::vector<double> times;
  std::vector<COAState> states;
  std::vector<bool> feasible_lvrt;
  std::vector<bool> inside_pi;
  bool completed = true;
  std::string note;  // set on step-size underflow

  void write_csv(const std::string& path) const;
};

StateMatrices build_state_matrices(const netmodel::ReducedModel& reduced,
                                   const Vec& delta_star);

/// F(Cx) = [sin(delta_kj) - sin(delta_kj*)] per edge.
Vec nonlinearity_f(const COAState& x, const StateMatrices& mats);

COAState vector_field(const COAState& x, const StateMatrices& mats);

/// True iff |delta_k - delta_j| <= pi/2 for every machine pair at x.
bool inside_pi_box(const COAState& x, const StateMatrices& mats);

/// Per-sample LVRT feasibility monitor; empty means "always feasible".
using LvrtMonitor = std::function<bool(const COAState&)>;

Trajectory simulate(const COAState& x0, const StateMatrices& mats,
                    double t_end, const LvrtMonitor& lvrt_ok = {});

/// Swing dynamics of an arbitrary reduced model expressed as deviations from
/// a fixed reference angle vector (used for fault-on integration, where the
/// reference is the post-fault SEP and is not an equilibrium).
Vec deviation_rhs(const Vec& z, const netmodel::ReducedModel& reduced,
                  const Vec& reference);

/// Everything needed to assess one fault: pre-fault flow, post-fault model
/// and SEP, fault-on model. Deviations always reference the post-fault SEP.
struct FaultContext {
  netmodel::NetworkModel model;
  FaultScenario scenario;
  netmodel::PowerFlowResult prefault;
  netmodel::ExtendedAdmittance post_ext;
  netmodel::ReducedModel post_reduced;
  netmodel::ReducedModel fault_reduced;
  Vec delta_star;  // post-fault COA SEP
  StateMatrices mats;
  netmodel::VoltageRecovery recovery;  // post-fault
  Vec prefault_coa;                    // pre-fault internal angles, COA frame

  /// Deviation state reached by sustaining the fault for `clearing_time`.
  COAState state_at_clearing(double clearing_time) const;
};

FaultContext prepare_fault(const netmodel::NetworkModel& model,
                           const FaultScenario& scenario);

COAState fault_state(const FaultScenario& scenario,
                     const netmodel::NetworkModel& model);

}  // namespace lvrtcsr::dynamics
