#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lvrtcsr/common.hpp"
#include "lvrtcsr/csr.hpp"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/netmodel.hpp"

namespace testsup {

using namespace lvrtcsr;

inline std::string data_path(const std::string& name) {
  return std::string(LVRTCSR_DATA_DIR) + "/" + name;
}

inline const netmodel::NetworkModel& committed_model() {
  static auto model =
      netmodel::load_model(data_path("two_machine_three_bus.json"));
  return model;
}

inline const dynamics::FaultScenario& committed_scenario() {
  static auto sc = dynamics::load_scenario(data_path("fault_branch12.json"));
  return sc;
}

/// Fault context of the committed scenario, prepared once per test binary.
inline const dynamics::FaultContext& committed_context() {
  static auto ctx =
      dynamics::prepare_fault(committed_model(), committed_scenario());
  return ctx;
}

/// Full system setup (constraints, fits, polytope) for the committed
/// scenario, prepared once per test binary.
inline const csr::SystemSetup& committed_setup() {
  static auto sys = csr::prepare_system(committed_model(), committed_scenario());
  return sys;
}

/// Random state on the COA manifold with per-machine angle and speed spans.
inline dynamics::COAState random_manifold_state(Rng& rng,
                                                const dynamics::StateMatrices& mats,
                                                double x1_span,
                                                double x2_span) {
  const int n = mats.n();
  Vec x1(n), x2(n);
  for (int k = 0; k < n; ++k) {
    x1(k) = rng.uniform(-x1_span, x1_span);
    x2(k) = rng.uniform(-x2_span, x2_span);
  }
  const double mt = mats.m.sum();
  x1 -= Vec::Constant(n, mats.m.dot(x1) / mt);
  x2 -= Vec::Constant(n, mats.m.dot(x2) / mt);
  return {x1, x2};
}

/// Random state on the manifold that also stays strictly inside the Pi box.
inline dynamics::COAState random_in_pi_state(Rng& rng,
                                             const dynamics::StateMatrices& mats,
                                             double x2_span,
                                             double margin = 0.95) {
  for (;;) {
    auto x = random_manifold_state(rng, mats, M_PI / 2, x2_span);
    bool ok = true;
    for (std::size_t e = 0; e < mats.edges.size(); ++e)
      if (std::abs(mats.edge_angle(e, x.x1)) > margin * M_PI / 2) ok = false;
    if (ok) return x;
  }
}

/// Random connected lossless reduced model with n machines, uniform damping,
/// and a known COA-normalized SEP (mechanical powers are chosen to balance
/// the electrical flow at the target angles, so the SEP is exact by
/// construction and stable because all |delta_kj*| < pi/2).
struct RandomSystem {
  netmodel::ReducedModel reduced;
  Vec delta_star;
};

inline RandomSystem random_lossless_system(Rng& rng, int n) {
  netmodel::ReducedModel r;
  r.m = Vec(n);
  r.d = Vec(n);
  r.e_mag = Vec(n);
  const double lambda = rng.uniform(0.5, 3.0);
  for (int k = 0; k < n; ++k) {
    r.m(k) = rng.uniform(0.05, 0.2);
    r.d(k) = lambda * r.m(k);
    r.e_mag(k) = rng.uniform(0.95, 1.1);
  }
  r.b_red = Mat::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) {  // spanning chain keeps it connected
    double b = rng.uniform(1.0, 5.0);
    r.b_red(k, k + 1) = r.b_red(k + 1, k) = b;
  }
  for (int k = 0; k < n; ++k)
    for (int j = k + 2; j < n; ++j)
      if (rng.uniform() < 0.5) {
        double b = rng.uniform(1.0, 5.0);
        r.b_red(k, j) = r.b_red(j, k) = b;
      }
  for (int k = 0; k < n; ++k)
    for (int j = k + 1; j < n; ++j)
      if (r.b_red(k, j) != 0.0) r.edges.emplace_back(k, j);

  Vec delta(n);
  for (int k = 0; k < n; ++k) delta(k) = rng.uniform(-0.4, 0.4);
  delta -= Vec::Constant(n, r.m.dot(delta) / r.m.sum());
  // With p_m = 0 the residual is -pe(delta); balancing requires p_m = pe.
  r.p_m = Vec::Zero(n);
  r.p_m = -netmodel::equilibrium_residual(r, delta);
  return {r, delta};
}

}  // namespace testsup
