#include <cmath>

#include "doctest.h"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/lff.hpp"
#include "lvrtcsr/ode.hpp"
#include "lvrtcsr/oracle.hpp"
#include "test_support.hpp"

using namespace lvrtcsr;
using namespace testsup;
using dynamics::COAState;

namespace {

/// Independent coding of the swing deviation dynamics, written directly from
/// the per-machine balance in the COA frame rather than through the
/// A/B/C factory.
COAState direct_rhs(const COAState& x, const netmodel::ReducedModel& red,
                    const Vec& delta_star) {
  const int n = red.n();
  const double lambda = red.d(0) / red.m(0);
  Vec theta = delta_star + x.x1;
  Vec acc(n);
  double coa = 0.0;
  for (int k = 0; k < n; ++k) {
    double pe = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != k)
        pe += red.b_red(k, j) * red.e_mag(k) * red.e_mag(j) *
              std::sin(theta(k) - theta(j));
    acc(k) = (red.p_m(k) - pe) / red.m(k);
    coa += red.p_m(k) - pe;
  }
  coa /= red.m.sum();
  COAState dx;
  dx.x1 = x.x2;
  dx.x2 = acc - Vec::Constant(n, coa) - lambda * x.x2;
  return dx;
}

}  // namespace

TEST_CASE("state matrix blocks have the expected structure") {
  const auto& mats = committed_context().mats;
  const int n = mats.n();
  REQUIRE(n == 2);
  REQUIRE(mats.n_edges() == 1);
  CHECK(mats.a_mat.rows() == 4);
  CHECK(mats.b_mat.cols() == 1);
  CHECK(mats.a_mat.topLeftCorner(n, n).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mats.a_mat.topRightCorner(n, n) - Mat::Identity(n, n))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((mats.a_mat.bottomRightCorner(n, n) + mats.lambda * Mat::Identity(n, n))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK(mats.lambda == doctest::Approx(2.0));
  CHECK(mats.gamma1.cwiseAbs().maxCoeff() == 0.0);
  CHECK((mats.b_mat.bottomRows(n) - mats.gamma2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mats.c_mat - mats.g_mat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("c_mat maps the state to edge angle-difference deviations") {
  const auto& mats = committed_context().mats;
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_manifold_state(rng, mats, 1.0, 1.0);
    Vec edge = mats.c_mat * x.stacked();
    for (int e = 0; e < mats.n_edges(); ++e) {
      auto [k, j] = mats.edges[e];
      CHECK(edge(e) == doctest::Approx(x.x1(k) - x.x1(j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("non-uniform damping is rejected") {
  netmodel::ReducedModel r;
  r.m = Vec::Constant(2, 0.1);
  r.d = Vec(2);
  r.d << 0.1, 0.2;
  r.e_mag = Vec::Constant(2, 1.0);
  r.b_red = Mat::Zero(2, 2);
  r.b_red(0, 1) = r.b_red(1, 0) = 1.0;
  r.p_m = Vec::Zero(2);
  r.edges = {{0, 1}};
  CHECK_THROWS_AS(dynamics::build_state_matrices(r, Vec::Zero(2)), ModelError);
}

TEST_CASE("nonlinearity vanishes at the SEP and under sine symmetry") {
  const auto& mats = committed_context().mats;
  COAState zero{Vec::Zero(2), Vec::Zero(2)};
  CHECK(dynamics::nonlinearity_f(zero, mats).cwiseAbs().maxCoeff() == 0.0);

  // delta_kj = pi - delta_kj* has the same sine.
  double dstar = mats.delta_star(0) - mats.delta_star(1);
  double dev = M_PI - 2 * dstar;
  const double mt = mats.m.sum();
  Vec x1(2);
  x1 << dev * mats.m(1) / mt, -dev * mats.m(0) / mt;
  COAState x{x1, Vec::Zero(2)};
  CHECK(std::abs(dynamics::nonlinearity_f(x, mats)(0)) < 1e-12);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto xr = random_manifold_state(rng, mats, 10.0, 1.0);
    CHECK(dynamics::nonlinearity_f(xr, mats).cwiseAbs().maxCoeff() <= 2.0);
  }
}

TEST_CASE("vector field matches an independent coding of the dynamics") {
  const auto& ctx = committed_context();
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto x = random_manifold_state(rng, ctx.mats, 2.0, 3.0);
    auto f1 = dynamics::vector_field(x, ctx.mats);
    auto f2 = direct_rhs(x, ctx.post_reduced, ctx.delta_star);
    worst = std::max(worst, (f1.x1 - f2.x1).cwiseAbs().maxCoeff());
    worst = std::max(worst, (f1.x2 - f2.x2).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("vector field is tangent to the COA manifold") {
  const auto& mats = committed_context().mats;
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_manifold_state(rng, mats, 2.0, 3.0);
    auto dx = dynamics::vector_field(x, mats);
    CHECK(std::abs(mats.m.dot(dx.x1)) < 1e-10);
    CHECK(std::abs(mats.m.dot(dx.x2)) < 1e-10);
  }
}

TEST_CASE("SEP is an equilibrium and the angle block is kinematic") {
  const auto& mats = committed_context().mats;
  COAState zero{Vec::Zero(2), Vec::Zero(2)};
  auto f0 = dynamics::vector_field(zero, mats);
  CHECK(f0.x1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(f0.x2.cwiseAbs().maxCoeff() == 0.0);

  Rng rng(23);
  auto x = random_manifold_state(rng, mats, 0.5, 0.0);
  x.x2.setZero();
  auto f = dynamics::vector_field(x, mats);
  CHECK(f.x1.cwiseAbs().maxCoeff() == 0.0);  // xdot1 = x2 = 0
}

TEST_CASE("simulate from the SEP stays at the SEP") {
  const auto& mats = committed_context().mats;
  COAState zero{Vec::Zero(2), Vec::Zero(2)};
  auto tr = dynamics::simulate(zero, mats, 1.0);
  REQUIRE(tr.completed);
  for (const auto& s : tr.states) {
    CHECK(s.x1.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.x2.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("simulate agrees with the vector field at t = 0") {
  const auto& mats = committed_context().mats;
  Rng rng(29);
  auto x0 = random_in_pi_state(rng, mats, 1.0);
  auto f = dynamics::vector_field(x0, mats);
  const double h = 1e-6;
  auto tr1 = dynamics::simulate(x0, mats, h);
  auto tr2 = dynamics::simulate(x0, mats, 2 * h);
  REQUIRE(tr1.completed);
  REQUIRE(tr2.completed);
  // Second-order one-sided difference cancels the curvature term.
  Vec fd = (4.0 * tr1.states.back().stacked() - tr2.states.back().stacked() -
            3.0 * x0.stacked()) /
           (2 * h);
  CHECK((fd - f.stacked()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("trajectories preserve the COA manifold and decay the energy") {
  const auto& ctx = committed_context();
  auto energy = lff::energy_function_candidate(ctx.mats);
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    auto x0 = random_in_pi_state(rng, ctx.mats, 0.8, 0.5);
    auto tr = dynamics::simulate(x0, ctx.mats, 5.0);
    REQUIRE(tr.completed);
    double prev = std::numeric_limits<double>::infinity();
    bool inside = true;
    for (std::size_t i = 0; i < tr.states.size(); ++i) {
      const auto& s = tr.states[i];
      CHECK(std::abs(ctx.mats.m.dot(s.x1)) < 1e-8);
      CHECK(std::abs(ctx.mats.m.dot(s.x2)) < 1e-8);
      inside = inside && tr.inside_pi[i];
      if (inside) {
        double v = lff::evaluate_v(energy, s, ctx.mats);
        CHECK(v <= prev + 1e-6);
        prev = v;
      }
    }
  }
}

TEST_CASE("short trajectories reverse to the initial state") {
  const auto& mats = committed_context().mats;
  Rng rng(37);
  auto x0 = random_in_pi_state(rng, mats, 0.5, 0.5);
  auto fwd = dynamics::simulate(x0, mats, 0.1);
  REQUIRE(fwd.completed);
  ode::Options opt;
  auto back_rhs = [&](double, const Vec& z) -> Vec {
    auto x = dynamics::COAState::from_stacked(z);
    return -dynamics::vector_field(x, mats).stacked();
  };
  auto back = ode::integrate(back_rhs, fwd.states.back().stacked(), 0.0, 0.1,
                             opt);
  REQUIRE(back.completed);
  CHECK((back.x_final - x0.stacked()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("a start far outside the stability region loses synchronism") {
  const auto& ctx = committed_context();
  const auto& mats = ctx.mats;
  const double mt = mats.m.sum();
  Vec w(2);
  w << mats.m(1) / mt, -mats.m(0) / mt;
  COAState x0{Vec::Zero(2), 12.0 * w};  // large pairwise speed
  auto cls = oracle::classify_state(x0, mats, {});
  CHECK(cls == oracle::CellClass::Diverges);
}

TEST_CASE("zero clearing time returns the pre/post SEP mismatch") {
  const auto& ctx = committed_context();
  auto x0 = ctx.state_at_clearing(0.0);
  CHECK(x0.x2.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((x0.x1 - (ctx.prefault_coa - ctx.delta_star)).cwiseAbs().maxCoeff() <
        1e-10);
}

TEST_CASE("committed fault state at 0.2 s is on the manifold inside Pi") {
  const auto& ctx = committed_context();
  auto x0 = ctx.state_at_clearing(0.2);
  CHECK(std::abs(ctx.mats.m.dot(x0.x1)) < 1e-8);
  CHECK(std::abs(ctx.mats.m.dot(x0.x2)) < 1e-8);
  CHECK(dynamics::inside_pi_box(x0, ctx.mats));
  // The fault accelerates machine 1 against machine 2.
  CHECK(x0.x2(0) > 0.1);
  CHECK(x0.x2(1) < -0.1);
}

TEST_CASE("clearing just past the oracle CCT leaves the actual CSR") {
  const auto& ctx = committed_context();
  const auto& sys = committed_setup();
  auto x_late = ctx.state_at_clearing(0.30);
  auto cls = oracle::classify_state(x_late, ctx.mats, sys.constraints);
  CHECK(cls != oracle::CellClass::InCsr);
}

TEST_CASE("fault_state convenience wrapper matches the context") {
  const auto& ctx = committed_context();
  auto a = dynamics::fault_state(committed_scenario(), committed_model());
  auto b = ctx.state_at_clearing(committed_scenario().clearing_time);
  CHECK((a.stacked() - b.stacked()).cwiseAbs().maxCoeff() < 1e-12);
}
