#pragma once

#include <complex>
#include <optional>
#include <utility>
#include <vector>

#include "lvrtcsr/common.hpp"

namespace lvrtcsr::netmodel {

struct Bus {
  int id = 0;
  double load_p = 0.0;  // per-unit active load
  double load_q = 0.0;  // per-unit reactive load
  bool is_rg = false;
  double rg_p = 0.0;  // RG injection, folded in as negative load
  double rg_q = 0.0;
  std::vector<std::pair<double, double>> lvrt_curve;  // (time s, voltage pu)
  std::optional<double> lvrt_max;                     // pu voltage floor
};

struct Branch {
  int from = 0;
  int to = 0;
  double reactance_x = 0.0;
  double shunt_b = 0.0;
  double resistance_r = 0.0;  // zeroed on load (lossless model class)
};

struct Generator {
  int bus = 0;
  double m = 0.0;         // inertia constant, s^2*pu
  double d = 0.0;         // damping, pu
  double xd_prime = 0.0;  // transient reactance, pu
  double e_mag = 0.0;     // internal EMF magnitude E_k, pu
  double p_m = 0.0;       // mechanical power, pu
};

struct NetworkModel {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;

  int bus_index(int bus_id) const;  // throws ModelError on unknown id
  int n_gen() const { return static_cast<int>(generators.size()); }
  int n_bus() const { return static_cast<int>(buses.size()); }
};

/// Per-branch in/out overlay plus an optional solid fault at a point along
/// one branch. The fault point becomes an extra network node grounded
/// through a small reactance.
struct Topology {
  std::vector<bool> in_service;  // per branch; empty = all in
  int removed = -1;              // single tripped branch, -1 = none
  std::optional<int> fault_branch;
  double fault_location = 0.5;  // fraction in [0,1] from the `from` end
  double fault_xg = 1e-6;       // grounding reactance, pu

  static Topology all_in() { return Topology{}; }
  static Topology without_branch(int idx);
  static Topology faulted(int idx, double location);
};

/// Admittance over [generator internal nodes | network buses]; loads and
/// transient reactances already folded into the matrix.
struct ExtendedAdmittance {
  CMat y_ext;
  int n_gen = 0;
  int n_bus = 0;  // includes the fault node, when present
};

/// Kron-reduced lossless model over generator internal nodes.
struct ReducedModel {
  Mat b_red;                             // susceptance matrix B_kj
  Vec e_mag;                             // E_k
  Vec m;                                 // inertia
  Vec d;                                 // damping
  Vec p_m;                               // mechanical power
  std::vector<std::pair<int, int>> edges;  // (k, j), k < j, B_kj != 0

  int n() const { return static_cast<int>(m.size()); }
  /// Edge coupling weight B_kj * E_k * E_j.
  double edge_weight(std::size_t e) const;
};

struct VoltageRecovery {
  CMat p_mat;  // n_bus x n_gen, v = P * E
  /// Constants of the |v_k|^2 cosine expansion, one row per bus:
  /// c_mag[k][i] = E_i * |p_{k,i}|, c_ang[k][i] = arg(p_{k,i}).
  std::vector<std::vector<double>> c_mag;
  std::vector<std::vector<double>> c_ang;
};

struct PowerFlowResult {
  CVec v_bus;      // bus voltage phasors
  Vec delta_gen;   // generator internal absolute angles, rad
  int iterations = 0;
};

NetworkModel load_model(const std::string& path);
NetworkModel parse_model(const std::string& json_text);

/// Conventional phasor power flow at nominal conditions: generator internal
/// nodes held at |E_k| with injection p_m (PV), loads constant power,
/// internal node of generator 0 is the angle reference. Requires exact
/// active-power balance (lossless network).
PowerFlowResult solve_power_flow(const NetworkModel& model,
                                 const Topology& topology = Topology::all_in());

ExtendedAdmittance build_extended_admittance(const NetworkModel& model,
                                             const Topology& topology,
                                             const CVec& v_bus_prefault);

ReducedModel kron_reduce(const ExtendedAdmittance& ext,
                         const NetworkModel& model);

VoltageRecovery voltage_recovery_matrix(const ExtendedAdmittance& ext,
                                        const Vec& e_mag);

/// COA-normalized SEP angles of the reduced model, solved by damped Newton
/// from `initial_guess` (absolute angles; zero if empty). Verifies the
/// residual and the stability signature of the manifold-projected Jacobian.
Vec compute_sep(const ReducedModel& reduced, const Vec& initial_guess = Vec());

/// Residual of the swing equilibrium equations at COA angles delta.
Vec equilibrium_residual(const ReducedModel& reduced, const Vec& delta);

}  // namespace lvrtcsr::netmodel
