#include <cmath>

#include "doctest.h"
#include "lvrtcsr/csr.hpp"
#include "lvrtcsr/oracle.hpp"
#include "test_support.hpp"

using namespace lvrtcsr;
using namespace testsup;
using dynamics::COAState;

TEST_CASE("the SEP cell is in the CSR") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  COAState sep{Vec::Zero(2), Vec::Zero(2)};
  CHECK(oracle::classify_state(sep, ctx.mats, sys.constraints) ==
        oracle::CellClass::InCsr);
}

TEST_CASE("an LVRT-violating start exits the feasibility region immediately") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  const double mt = ctx.mats.m.sum();
  Vec w(2);
  w << ctx.mats.m(1) / mt, -ctx.mats.m(0) / mt;
  // Walk the pairwise angle out until the true LVRT constraint fails.
  for (double y1 = 0.0; y1 < 3.0; y1 += 0.02) {
    COAState x{y1 * w, Vec::Zero(2)};
    Vec delta = ctx.delta_star + x.x1;
    bool feasible = true;
    for (const auto& c : sys.constraints)
      if (feasreg::voltage_sq(delta, c) < c.lvrt_max * c.lvrt_max)
        feasible = false;
    if (!feasible) {
      CHECK(oracle::classify_state(x, ctx.mats, sys.constraints) ==
            oracle::CellClass::ExitsFr);
      return;
    }
  }
  FAIL("no LVRT-violating angle found along the slice");
}

TEST_CASE("oracle CCT of the committed fault") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  double cct = oracle::true_cct(ctx, sys.constraints);
  CHECK(cct > 0.2);
  CHECK(cct < 0.35);
  auto below = ctx.state_at_clearing(cct - 0.002);
  CHECK(oracle::classify_state(below, ctx.mats, sys.constraints) ==
        oracle::CellClass::InCsr);
  auto above = ctx.state_at_clearing(cct + 0.002);
  CHECK(oracle::classify_state(above, ctx.mats, sys.constraints) !=
        oracle::CellClass::InCsr);
}

TEST_CASE("grid audit finds no soundness violations") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto x0 = ctx.state_at_clearing(0.2);
  auto est = csr::estimate_csr(x0, ctx.mats, sys.polytope);

  auto spec = oracle::default_grid(ctx.mats, 41, 41);
  auto grid = oracle::brute_force_csr(ctx.mats, sys.constraints, spec);
  REQUIRE(grid.cells.size() == 41u * 41u);
  auto audit = oracle::audit_estimate(est, grid, ctx.mats);
  CHECK(audit.violations.empty());
  CHECK(audit.n_in_csr > 0);
  CHECK(audit.n_contained > 0);
  CHECK(audit.coverage > 0.0);
  CHECK(audit.coverage <= 1.0);

  // Negative control: inflating the certified level set must break
  // soundness against the same grid.
  auto corrupted = est;
  corrupted.v *= 10.0;
  auto bad = oracle::audit_estimate(corrupted, grid, ctx.mats);
  CHECK(!bad.violations.empty());
}

TEST_CASE("grid classification is stable under tighter tolerances") {
  const auto& sys = committed_setup();
  const auto& ctx = committed_context();
  auto spec = oracle::default_grid(ctx.mats, 21, 21);
  oracle::OracleOptions loose;
  auto a = oracle::brute_force_csr(ctx.mats, sys.constraints, spec, loose);
  oracle::OracleOptions tight = loose;
  tight.rtol /= 2;
  tight.atol /= 2;
  auto b = oracle::brute_force_csr(ctx.mats, sys.constraints, spec, tight);
  int changed = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i)
    if (a.cells[i] != b.cells[i]) ++changed;
  CHECK(changed <= static_cast<int>(a.cells.size() / 200 + 1));
}

TEST_CASE("oracle guard rejects wide systems") {
  Rng rng(97);
  auto big = random_lossless_system(rng, 4);
  auto mats = dynamics::build_state_matrices(big.reduced, big.delta_star);
  oracle::GridSpec spec;
  CHECK_THROWS_AS(oracle::brute_force_csr(mats, {}, spec), ModelError);
}
