#include "lvrtcsr/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lvrtcsr/ode.hpp"

namespace lvrtcsr::dynamics {

using json = nlohmann::json;

Vec COAState::stacked() const {
  Vec z(x1.size() + x2.size());
  z << x1, x2;
  return z;
}

COAState COAState::from_stacked(const Vec& z) {
  const Eigen::Index n = z.size() / 2;
  return COAState{z.head(n), z.tail(n)};
}

double StateMatrices::edge_angle(std::size_t e, const Vec& x1) const {
  auto [k, j] = edges[e];
  return delta_star(k) - delta_star(j) + x1(k) - x1(j);
}

FaultScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open scenario file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ModelError(std::string("scenario parse error: ") + e.what());
  }
  FaultScenario s;
  s.faulted_branch = j.at("faulted_branch").get<int>();
  s.fault_location = j.value("fault_location", 0.5);
  s.clearing_time = j.at("clearing_time").get<double>();
  std::string act = j.value("clearing_action", "trip-branch");
  if (act == "trip-branch")
    s.clearing_action = FaultScenario::ClearingAction::TripBranch;
  else if (act == "restore")
    s.clearing_action = FaultScenario::ClearingAction::Restore;
  else
    throw ModelError("unknown clearing_action: " + act);
  if (s.clearing_time < 0.0) throw ModelError("clearing_time must be >= 0");
  return s;
}

StateMatrices build_state_matrices(const netmodel::ReducedModel& reduced,
                                   const Vec& delta_star) {
  const int n = reduced.n();
  if (delta_star.size() != n)
    throw ModelError("build_state_matrices: dimension mismatch");
  StateMatrices s;
  s.m = reduced.m;
  s.d = reduced.d;
  s.lambda = reduced.d(0) / reduced.m(0);
  for (int k = 1; k < n; ++k)
    if (std::abs(reduced.d(k) / reduced.m(k) - s.lambda) > 1e-9)
      throw ModelError("non-uniform damping: d_k/m_k must be equal across "
                       "machines for this model class");
  s.delta_star = delta_star;
  s.edges = reduced.edges;
  const int ne = s.n_edges();
  s.weights = Vec(ne);
  s.sin_star = Vec(ne);
  Mat inc = Mat::Zero(ne, n);  // signed incidence
  for (int e = 0; e < ne; ++e) {
    auto [k, j] = s.edges[e];
    s.weights(e) = reduced.edge_weight(e);
    s.sin_star(e) = std::sin(delta_star(k) - delta_star(j));
    inc(e, k) = 1.0;
    inc(e, j) = -1.0;
  }

  s.a_mat = Mat::Zero(2 * n, 2 * n);
  s.a_mat.topRightCorner(n, n) = Mat::Identity(n, n);
  s.a_mat.bottomRightCorner(n, n) = -s.lambda * Mat::Identity(n, n);

  s.gamma1 = Mat::Zero(n, ne);
  s.gamma2 = Mat::Zero(n, ne);
  for (int e = 0; e < ne; ++e) {
    auto [k, j] = s.edges[e];
    s.gamma2(k, e) = s.weights(e) / s.m(k);
    s.gamma2(j, e) = -s.weights(e) / s.m(j);
  }
  s.b_mat = Mat::Zero(2 * n, ne);
  s.b_mat.bottomRows(n) = -s.gamma1 + s.gamma2;

  s.c_mat = Mat::Zero(ne, 2 * n);
  s.c_mat.leftCols(n) = inc;
  s.g_mat = s.c_mat;
  return s;
}

Vec nonlinearity_f(const COAState& x, const StateMatrices& mats) {
  const int ne = mats.n_edges();
  Vec f(ne);
  for (int e = 0; e < ne; ++e)
    f(e) = std::sin(mats.edge_angle(e, x.x1)) - mats.sin_star(e);
  return f;
}

COAState vector_field(const COAState& x, const StateMatrices& mats) {
  Vec z = mats.a_mat * x.stacked() - mats.b_mat * nonlinearity_f(x, mats);
  return COAState::from_stacked(z);
}

bool inside_pi_box(const COAState& x, const StateMatrices& mats) {
  const int n = mats.n();
  for (int k = 0; k < n; ++k)
    for (int j = k + 1; j < n; ++j) {
      double full = mats.delta_star(k) - mats.delta_star(j) + x.x1(k) - x.x1(j);
      if (std::abs(full) > M_PI / 2) return false;
    }
  return true;
}

namespace {
void project_coa(Vec& z, const Vec& m) {
  const Eigen::Index n = m.size();
  const double mm = m.squaredNorm();
  auto x1 = z.head(n);
  auto x2 = z.tail(n);
  x1 -= m * (m.dot(x1) / mm);
  x2 -= m * (m.dot(x2) / mm);
}
}  // namespace

Trajectory simulate(const COAState& x0, const StateMatrices& mats,
                    double t_end, const LvrtMonitor& lvrt_ok) {
  if (t_end <= 0.0) throw ModelError("simulate: t_end must be > 0");
  ode::Options opt;
  opt.record = true;
  const Vec& m = mats.m;
  auto rhs = [&](double, const Vec& z) -> Vec {
    return mats.a_mat * z -
           mats.b_mat * nonlinearity_f(COAState::from_stacked(z), mats);
  };
  auto res = ode::integrate(rhs, x0.stacked(), 0.0, t_end, opt, {},
                            [&](Vec& z) { project_coa(z, m); });
  Trajectory tr;
  tr.completed = !res.step_underflow;
  if (res.step_underflow)
    tr.note = "step-size underflow at t=" + fmt17(res.t_final) +
              "; trajectory truncated at last valid state";
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    COAState xs = COAState::from_stacked(res.states[i]);
    tr.times.push_back(res.times[i]);
    tr.feasible_lvrt.push_back(lvrt_ok ? lvrt_ok(xs) : true);
    tr.inside_pi.push_back(inside_pi_box(xs, mats));
    tr.states.push_back(std::move(xs));
  }
  return tr;
}

void Trajectory::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write trajectory csv: " + path);
  const int n = states.empty() ? 0 : static_cast<int>(states[0].x1.size());
  out << "time";
  for (int k = 1; k <= n; ++k) out << ",x1_" << k;
  for (int k = 1; k <= n; ++k) out << ",x2_" << k;
  out << ",feasible_lvrt,inside_pi\n";
  for (std::size_t i = 0; i < times.size(); ++i) {
    out << fmt17(times[i]);
    for (int k = 0; k < n; ++k) out << "," << fmt17(states[i].x1(k));
    for (int k = 0; k < n; ++k) out << "," << fmt17(states[i].x2(k));
    out << "," << (feasible_lvrt[i] ? 1 : 0) << "," << (inside_pi[i] ? 1 : 0)
        << "\n";
  }
}

Vec deviation_rhs(const Vec& z, const netmodel::ReducedModel& reduced,
                  const Vec& reference) {
  const int n = reduced.n();
  Vec out(2 * n);
  out.head(n) = z.tail(n);
  const double lambda = reduced.d(0) / reduced.m(0);
  for (int k = 0; k < n; ++k) {
    double pe = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == k || reduced.b_red(k, j) == 0.0) continue;
      pe += reduced.b_red(k, j) * reduced.e_mag(k) * reduced.e_mag(j) *
            std::sin(reference(k) - reference(j) + z(k) - z(j));
    }
    out(n + k) = (reduced.p_m(k) - pe) / reduced.m(k) - lambda * z(n + k);
  }
  return out;
}

FaultContext prepare_fault(const netmodel::NetworkModel& model,
                           const FaultScenario& scenario) {
  namespace nm = netmodel;
  if (scenario.faulted_branch < 0 ||
      scenario.faulted_branch >= static_cast<int>(model.branches.size()))
    throw ModelError("scenario references unknown branch");

  FaultContext ctx;
  ctx.model = model;
  ctx.scenario = scenario;
  ctx.prefault = nm::solve_power_flow(model);

  nm::Topology post =
      scenario.clearing_action == FaultScenario::ClearingAction::TripBranch
          ? nm::Topology::without_branch(scenario.faulted_branch)
          : nm::Topology::all_in();
  ctx.post_ext =
      nm::build_extended_admittance(model, post, ctx.prefault.v_bus);
  ctx.post_reduced = nm::kron_reduce(ctx.post_ext, model);
  ctx.delta_star = nm::compute_sep(ctx.post_reduced, ctx.prefault.delta_gen);
  ctx.mats = build_state_matrices(ctx.post_reduced, ctx.delta_star);

  Vec e_mag(model.n_gen());
  for (int k = 0; k < model.n_gen(); ++k) e_mag(k) = model.generators[k].e_mag;
  ctx.recovery = nm::voltage_recovery_matrix(ctx.post_ext, e_mag);

  nm::Topology fault_topo = nm::Topology::faulted(scenario.faulted_branch,
                                                  scenario.fault_location);
  auto fault_ext =
      nm::build_extended_admittance(model, fault_topo, ctx.prefault.v_bus);
  ctx.fault_reduced = nm::kron_reduce(fault_ext, model);

  // Pre-fault internal angles in COA normalization.
  Vec pre = ctx.prefault.delta_gen;
  pre.array() -= ctx.mats.m.dot(pre) / ctx.mats.m.sum();
  ctx.prefault_coa = pre;
  return ctx;
}

COAState FaultContext::state_at_clearing(double clearing_time) const {
  const int n = mats.n();
  Vec z0(2 * n);
  z0.head(n) = prefault_coa - delta_star;
  z0.tail(n).setZero();
  // Projection guards against rounding in the power-flow angles.
  project_coa(z0, mats.m);
  if (clearing_time > 0.0) {
    ode::Options opt;
    const Vec& m = mats.m;
    auto rhs = [&](double, const Vec& z) {
      return deviation_rhs(z, fault_reduced, delta_star);
    };
    auto res = ode::integrate(rhs, z0, 0.0, clearing_time, opt, {},
                              [&](Vec& z) { project_coa(z, m); });
    if (!res.completed || res.step_underflow)
      throw SolverError("fault-on integration failed");
    z0 = res.x_final;
  }
  return COAState::from_stacked(z0);
}

COAState fault_state(const FaultScenario& scenario,
                     const netmodel::NetworkModel& model) {
  return prepare_fault(model, scenario)
      .state_at_clearing(scenario.clearing_time);
}

}  // namespace lvrtcsr::dynamics
