#include "lvrtcsr/oracle.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "lvrtcsr/ode.hpp"

namespace lvrtcsr::oracle {

const char* cell_class_name(CellClass c) {
  switch (c) {
    case CellClass::InCsr: return "in-csr";
    case CellClass::ExitsFr: return "exits-fr";
    case CellClass::Diverges: return "diverges";
    default: return "inconclusive";
  }
}

namespace {

double lvrt_margin(const Vec& x1, const StateMatrices& mats,
                   const std::vector<feasreg::LVRTConstraint>& constraints) {
  double worst = std::numeric_limits<double>::infinity();
  Vec delta = mats.delta_star + x1;
  for (const auto& c : constraints)
    worst = std::min(worst,
                     feasreg::voltage_sq(delta, c) - c.lvrt_max * c.lvrt_max);
  return worst;
}

double sync_margin(const Vec& x1, const StateMatrices& mats) {
  double worst = std::numbers::pi;
  const int n = mats.n();
  for (int k = 0; k < n; ++k)
    for (int j = k + 1; j < n; ++j) {
      double d = std::abs(mats.delta_star(k) + x1(k) - mats.delta_star(j) -
                          x1(j));
      worst = std::min(worst, std::numbers::pi - d);
    }
  return worst;
}

}  // namespace

CellClass classify_state(
    const COAState& x0, const StateMatrices& mats,
    const std::vector<feasreg::LVRTConstraint>& constraints,
    const OracleOptions& opts) {
  const int n = mats.n();
  Vec z0 = x0.stacked();
  if (!(lvrt_margin(x0.x1, mats, constraints) > 0.0)) return CellClass::ExitsFr;
  if (!(sync_margin(x0.x1, mats) > 0.0)) return CellClass::Diverges;
  if (z0.lpNorm<Eigen::Infinity>() < opts.early_tol) return CellClass::InCsr;

  auto rhs = [&](double, const Vec& z) {
    return dynamics::vector_field(COAState::from_stacked(z), mats).stacked();
  };
  std::vector<ode::Event> events(3);
  events[0].g = [&](double, const Vec& z) {
    return lvrt_margin(z.head(n), mats, constraints);
  };
  events[1].g = [&](double, const Vec& z) {
    return sync_margin(z.head(n), mats);
  };
  events[2].g = [&](double, const Vec& z) {
    return z.lpNorm<Eigen::Infinity>() - opts.early_tol;
  };
  const double msum = mats.m.sum();
  auto project = [&](Vec& z) {
    double c1 = mats.m.dot(z.head(n)) / msum;
    double c2 = mats.m.dot(z.tail(n)) / msum;
    z.head(n).array() -= c1;
    z.tail(n).array() -= c2;
  };
  ode::Options oo;
  oo.rtol = opts.rtol;
  oo.atol = opts.atol;
  auto res = ode::integrate(rhs, z0, 0.0, opts.horizon, oo, events, project);
  if (!res.hits.empty()) {
    // The integration stopped at the earliest terminal event; several events
    // may have been recorded within that final step.
    const ode::EventHit* first = &res.hits.front();
    for (const auto& h : res.hits)
      if (h.t < first->t) first = &h;
    switch (first->index) {
      case 0: return CellClass::ExitsFr;
      case 1: return CellClass::Diverges;
      case 2: return CellClass::InCsr;
      default: break;
    }
  }
  if (!res.completed || res.step_underflow) return CellClass::Inconclusive;
  return res.x_final.lpNorm<Eigen::Infinity>() < opts.terminal_tol
             ? CellClass::InCsr
             : CellClass::Inconclusive;
}

GridSpec default_grid(const StateMatrices& mats, int n1, int n2,
                      double speed_span) {
  if (mats.n() != 2)
    throw ModelError("oracle grid requires a two-machine system");
  GridSpec spec;
  spec.n1 = n1;
  spec.n2 = n2;
  double ds = mats.delta_star(0) - mats.delta_star(1);
  spec.y1_min = -std::numbers::pi / 2.0 - ds;
  spec.y1_max = std::numbers::pi / 2.0 - ds;
  spec.y2_min = -speed_span;
  spec.y2_max = speed_span;
  return spec;
}

double OracleGrid::y1(int i1) const {
  return spec.n1 > 1
             ? spec.y1_min + (spec.y1_max - spec.y1_min) * i1 / (spec.n1 - 1)
             : spec.y1_min;
}

double OracleGrid::y2(int i2) const {
  return spec.n2 > 1
             ? spec.y2_min + (spec.y2_max - spec.y2_min) * i2 / (spec.n2 - 1)
             : spec.y2_min;
}

COAState OracleGrid::state(int i1, int i2, const StateMatrices& mats) const {
  Vec w(2);
  w << mats.m(1), -mats.m(0);
  w /= mats.m.sum();
  COAState x;
  x.x1 = y1(i1) * w;
  x.x2 = y2(i2) * w;
  return x;
}

void OracleGrid::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path);
  out << "coord1,coord2,class\n";
  for (int i2 = 0; i2 < spec.n2; ++i2)
    for (int i1 = 0; i1 < spec.n1; ++i1)
      out << fmt17(y1(i1)) << "," << fmt17(y2(i2)) << ","
          << cell_class_name(cells[static_cast<std::size_t>(i2) * spec.n1 + i1])
          << "\n";
}

OracleGrid brute_force_csr(
    const StateMatrices& mats,
    const std::vector<feasreg::LVRTConstraint>& constraints,
    const GridSpec& spec, const OracleOptions& opts, unsigned jobs) {
  if (mats.n() != 2)
    throw ModelError("brute_force_csr: grid oracle is guarded to two-machine "
                     "systems (manifold dimension 2)");
  OracleGrid grid;
  grid.spec = spec;
  grid.cells.assign(static_cast<std::size_t>(spec.n1) * spec.n2,
                    CellClass::Inconclusive);
  parallel_for(grid.cells.size(), jobs, [&](std::size_t idx) {
    int i1 = static_cast<int>(idx % spec.n1);
    int i2 = static_cast<int>(idx / spec.n1);
    grid.cells[idx] =
        classify_state(grid.state(i1, i2, mats), mats, constraints, opts);
  });
  return grid;
}

double true_cct(const dynamics::FaultContext& ctx,
                const std::vector<feasreg::LVRTConstraint>& constraints,
                const OracleOptions& opts, double bracket) {
  auto stable = [&](double t) {
    return classify_state(ctx.state_at_clearing(t), ctx.mats, constraints,
                          opts) == CellClass::InCsr;
  };
  if (!stable(0.0))
    throw SolverError("true_cct: scenario unstable at zero clearing time");
  if (stable(bracket)) return bracket;
  double lo = 0.0, hi = bracket;
  while (hi - lo > 1e-3) {
    double mid = 0.5 * (lo + hi);
    (stable(mid) ? lo : hi) = mid;
  }
  return lo;
}

AuditReport audit_estimate(const csr::CSREstimate& estimate,
                           const OracleGrid& grid, const StateMatrices& mats) {
  AuditReport rep;
  for (int i2 = 0; i2 < grid.spec.n2; ++i2)
    for (int i1 = 0; i1 < grid.spec.n1; ++i1) {
      CellClass cls =
          grid.cells[static_cast<std::size_t>(i2) * grid.spec.n1 + i1];
      bool cont = csr::contains(estimate, grid.state(i1, i2, mats), mats);
      if (cls == CellClass::InCsr) ++rep.n_in_csr;
      if (cont) {
        ++rep.n_contained;
        if (cls == CellClass::InCsr)
          ++rep.n_sound;
        else
          rep.violations.emplace_back(i1, i2);
      }
    }
  rep.coverage =
      rep.n_in_csr > 0 ? static_cast<double>(rep.n_sound) / rep.n_in_csr : 0.0;
  return rep;
}

std::string AuditReport::to_json() const {
  nlohmann::json j;
  j["n_in_csr"] = n_in_csr;
  j["n_contained"] = n_contained;
  j["n_sound"] = n_sound;
  j["n_violations"] = violations.size();
  j["violations"] = nlohmann::json::array();
  for (const auto& [i1, i2] : violations)
    j["violations"].push_back({i1, i2});
  j["coverage"] = coverage;
  return j.dump(2);
}

}  // namespace lvrtcsr::oracle
