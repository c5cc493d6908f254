#include <cmath>

#include "doctest.h"
#include "lvrtcsr/csr.hpp"
#include "lvrtcsr/lff.hpp"
#include "test_support.hpp"

using namespace lvrtcsr;
using namespace testsup;
using dynamics::COAState;

TEST_CASE("no facet flows out of the degenerate level set") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  for (int i = 0; i < sys.polytope.n_facets(); ++i) {
    auto res = csr::flowout_exists(energy, 1e-12, sys.polytope, i, ctx.mats);
    CHECK(!res.witness.has_value());
  }
}

TEST_CASE("flow-out witnesses classify as flow-out points") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  auto ex = csr::expand_level_set(energy, sys.polytope, ctx.mats);
  REQUIRE(ex.binding_facet >= 0);
  // Just past v_max the binding facet must expose a witness.
  auto res = csr::flowout_exists(energy, ex.v_max * 1.2, sys.polytope,
                                 ex.binding_facet, ctx.mats);
  REQUIRE(res.status == csr::FlowoutResult::Status::FlowOut);
  REQUIRE(res.witness.has_value());
  auto cls = feasreg::classify_facet_point(sys.polytope, ex.binding_facet,
                                           *res.witness);
  CHECK(cls.cls == feasreg::FacetClass::FlowOut);
  CHECK(cls.rate > 1e-9);
}

TEST_CASE("expansion is insensitive to halving the step") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  auto a = csr::expand_level_set(energy, sys.polytope, ctx.mats);
  auto b = csr::expand_level_set(energy, sys.polytope, ctx.mats, a.dv / 2);
  CHECK(std::abs(a.v_max - b.v_max) < a.dv);
}

TEST_CASE("certified levels are downward closed") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  auto ex = csr::expand_level_set(energy, sys.polytope, ctx.mats);
  Rng rng(89);
  for (int trial = 0; trial < 10; ++trial) {
    double v = rng.uniform(0.0, ex.v_max);
    for (int i = 0; i < sys.polytope.n_facets(); ++i) {
      auto res = csr::flowout_exists(energy, v, sys.polytope, i, ctx.mats);
      CHECK(res.status != csr::FlowoutResult::Status::FlowOut);
    }
  }
}

TEST_CASE("the energy expansion stops at the boundary level") {
  // Closest-UEP-style behavior: v_max equals the smallest V over the
  // binding facet, evaluated at the facet's V-minimizer.
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  auto ex = csr::expand_level_set(energy, sys.polytope, ctx.mats);
  auto probe = csr::flowout_exists(energy, 0.0, sys.polytope, ex.binding_facet,
                                   ctx.mats);
  REQUIRE(probe.min_point.has_value());
  double boundary_v = lff::evaluate_v(energy, *probe.min_point, ctx.mats);
  CHECK(ex.v_max == doctest::Approx(boundary_v).epsilon(0.02));
}

TEST_CASE("estimate contains the SEP and honors every inequality") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto x0 = ctx.state_at_clearing(0.2);
  auto est = csr::estimate_csr(x0, ctx.mats, sys.polytope);
  COAState sep{Vec::Zero(2), Vec::Zero(2)};
  CHECK(csr::contains(est, sep, ctx.mats));

  // A state inside the level set but outside a facet is rejected.
  const double mt = ctx.mats.m.sum();
  Vec w(2);
  w << ctx.mats.m(1) / mt, -ctx.mats.m(0) / mt;
  COAState outside{3.5 * w, Vec::Zero(2)};
  Vec vals = sys.polytope.l_ineq * outside.x1 + sys.polytope.l_ineq_const;
  REQUIRE(vals.maxCoeff() > 0.0);
  if (lff::evaluate_v(est.candidate, outside, ctx.mats) <= est.v)
    CHECK(!csr::contains(est, outside, ctx.mats));

  // Off-manifold states are rejected outright.
  COAState off{Vec::Constant(2, 0.05), Vec::Zero(2)};
  CHECK(!csr::contains(est, off, ctx.mats));
}

TEST_CASE("the SEP itself needs no refinement") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  COAState sep{Vec::Zero(2), Vec::Zero(2)};
  auto est = csr::estimate_csr(sep, ctx.mats, sys.polytope);
  CHECK(est.history.size() == 1);
  CHECK(est.history[0].contains_x0);
}

TEST_CASE("refinement reaches the committed fault-cleared state") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto x0 = ctx.state_at_clearing(0.2);
  auto est = csr::estimate_csr(x0, ctx.mats, sys.polytope);
  REQUIRE(est.history.size() >= 2);
  CHECK(!est.history[0].contains_x0);  // energy function misses x0
  CHECK(est.history.back().contains_x0);
  CHECK(csr::contains(est, x0, ctx.mats));

  // Containment margin must not degrade across the refinement.
  double r0 = est.history[0].v_x0 / est.history[0].v_max;
  double r1 = est.history.back().v_x0 / est.history.back().v_max;
  CHECK(r1 <= r0 + 1e-9);
}

TEST_CASE("fault assessment of the committed scenario") {
  const auto& sys = committed_setup();
  csr::CSREstimate est;
  auto res = csr::assess_fault(sys, {}, -1.0, 2.0, &est);
  CHECK(res.verdict == csr::AssessmentResult::Verdict::Stable);
  CHECK(res.refinements_used == 1);
  REQUIRE(res.estimated_cct.has_value());
  CHECK(*res.estimated_cct > 0.2);
  CHECK(*res.estimated_cct < 0.3);
  CHECK(res.v_at_clearing <= res.v_max);
}

TEST_CASE("a hopeless clearing time is not certified") {
  const auto& model = committed_model();
  auto scenario = committed_scenario();
  scenario.clearing_time = 0.4;  // well past the true CCT
  auto sys = csr::prepare_system(model, scenario);
  auto res = csr::assess_fault(sys);
  CHECK(res.verdict == csr::AssessmentResult::Verdict::NotCertified);
}
