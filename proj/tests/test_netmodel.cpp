#include <cmath>
#include <complex>

#include "doctest.h"
#include "lvrtcsr/netmodel.hpp"
#include "test_support.hpp"

using namespace lvrtcsr;
using namespace testsup;
using netmodel::Topology;

namespace {

const char* kMiniModel = R"({
  "base_mva": 100,
  "buses": [{"id": 1}],
  "branches": [],
  "generators": [
    {"bus": 1, "m": 0.1, "d": 0.1, "xd_prime": 0.5, "e_mag": 1.0, "p_m": 0.0}
  ]
})";

}  // namespace

TEST_CASE("parse minimal single-machine model") {
  auto model = netmodel::parse_model(kMiniModel);
  CHECK(model.n_gen() == 1);
  CHECK(model.n_bus() == 1);
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  auto red = netmodel::kron_reduce(ext, model);
  CHECK(red.n() == 1);
  CHECK(red.edges.empty());
}

TEST_CASE("committed model loads with two machines and three buses") {
  const auto& model = committed_model();
  CHECK(model.n_gen() == 2);
  CHECK(model.n_bus() == 3);
  CHECK(model.buses[2].is_rg);
  CHECK(model.buses[2].lvrt_max.value() == doctest::Approx(0.85));
}

TEST_CASE("nonzero branch resistance is zeroed on load") {
  std::string text = kMiniModel;
  auto model = netmodel::parse_model(R"({
    "base_mva": 100,
    "buses": [{"id": 1}, {"id": 2}],
    "branches": [{"from": 1, "to": 2, "reactance_x": 0.4, "resistance_r": 0.01}],
    "generators": [
      {"bus": 1, "m": 0.1, "d": 0.1, "xd_prime": 0.2, "e_mag": 1.0, "p_m": 0.1},
      {"bus": 2, "m": 0.1, "d": 0.1, "xd_prime": 0.2, "e_mag": 1.0, "p_m": -0.1}
    ]
  })");
  CHECK(model.branches[0].resistance_r == 0.0);
}

TEST_CASE("model validation errors") {
  CHECK_THROWS_AS(netmodel::parse_model("{not json"), ModelError);
  CHECK_THROWS_AS(netmodel::parse_model(R"({
    "buses": [{"id": 1}, {"id": 1}], "branches": [],
    "generators": [{"bus": 1, "m": 0.1, "d": 0.1, "xd_prime": 0.2,
                    "e_mag": 1.0, "p_m": 0}]
  })"),
                  ModelError);
  CHECK_THROWS_AS(netmodel::parse_model(R"({
    "buses": [{"id": 1}], "branches": [],
    "generators": [{"bus": 7, "m": 0.1, "d": 0.1, "xd_prime": 0.2,
                    "e_mag": 1.0, "p_m": 0}]
  })"),
                  ModelError);
  CHECK_THROWS_AS(netmodel::parse_model(R"({
    "buses": [{"id": 1}], "branches": [],
    "generators": [{"bus": 1, "m": -0.1, "d": 0.1, "xd_prime": 0.2,
                    "e_mag": 1.0, "p_m": 0}]
  })"),
                  ModelError);
}

TEST_CASE("single-generator extended admittance couples through xd_prime") {
  auto model = netmodel::parse_model(kMiniModel);
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  REQUIRE(ext.y_ext.rows() == 2);
  std::complex<double> expected = -1.0 / std::complex<double>(0.0, 0.5);
  CHECK(std::abs(ext.y_ext(0, 1) - expected) < 1e-12);
  CHECK(std::abs(ext.y_ext(1, 0) - expected) < 1e-12);
}

TEST_CASE("committed extended admittance is 5x5 and symmetric") {
  const auto& model = committed_model();
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  REQUIRE(ext.y_ext.rows() == 5);
  REQUIRE(ext.y_ext.cols() == 5);
  CHECK((ext.y_ext - ext.y_ext.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  // Hand assembly: series susceptance 1/x on each branch and xd', no loads.
  // Generator rows couple only through xd_prime.
  std::complex<double> y12 = 1.0 / std::complex<double>(0, 0.4);
  CHECK(std::abs(ext.y_ext(2, 3) + y12) < 1e-12);
  std::complex<double> yg = 1.0 / std::complex<double>(0, 0.2);
  CHECK(std::abs(ext.y_ext(0, 2) + yg) < 1e-12);
  CHECK(std::abs(ext.y_ext(0, 1)) < 1e-12);  // gen-gen only via the network
  CHECK(std::abs(ext.y_ext(0, 3)) < 1e-12);  // gen 1 attaches to bus 1 only
}

TEST_CASE("faulted topology grounds the fault node") {
  const auto& model = committed_model();
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(
      model, Topology::faulted(0, 0.5), pf.v_bus);
  REQUIRE(ext.n_bus == 4);  // extra fault node
  int fn = ext.n_gen + ext.n_bus - 1;
  // Grounding through 1e-6 pu dominates the diagonal of the fault node.
  CHECK(std::abs(ext.y_ext(fn, fn)) > 1e5);
  // Each half of the split branch has susceptance 1/(0.2).
  std::complex<double> yh = 1.0 / std::complex<double>(0, 0.2);
  CHECK(std::abs(ext.y_ext(2, fn) + yh) < 1e-9);
  CHECK(std::abs(ext.y_ext(3, fn) + yh) < 1e-9);
}

TEST_CASE("kron reduction of a pure series chain") {
  // gen1 -- xd' -- bus1 -- x12 -- bus2 -- xd' -- gen2: all interior buses
  // eliminated, B_12 = 1/(xd' + x12 + xd').
  auto model = netmodel::parse_model(R"({
    "base_mva": 100,
    "buses": [{"id": 1}, {"id": 2}],
    "branches": [{"from": 1, "to": 2, "reactance_x": 0.3}],
    "generators": [
      {"bus": 1, "m": 0.1, "d": 0.1, "xd_prime": 0.1, "e_mag": 1.0, "p_m": 0.2},
      {"bus": 2, "m": 0.1, "d": 0.1, "xd_prime": 0.1, "e_mag": 1.0, "p_m": -0.2}
    ]
  })");
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  auto red = netmodel::kron_reduce(ext, model);
  REQUIRE(red.edges.size() == 1);
  CHECK(red.b_red(0, 1) == doctest::Approx(1.0 / 0.5).epsilon(1e-10));
}

TEST_CASE("committed kron reduction matches a direct Schur complement") {
  const auto& model = committed_model();
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  auto red = netmodel::kron_reduce(ext, model);
  CHECK(red.b_red(0, 1) > 0.0);
  CHECK((red.b_red - red.b_red.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  const int ng = ext.n_gen, nb = ext.n_bus;
  CMat ygg = ext.y_ext.topLeftCorner(ng, ng);
  CMat ygv = ext.y_ext.topRightCorner(ng, nb);
  CMat yvv = ext.y_ext.bottomRightCorner(nb, nb);
  CMat schur = ygg - ygv * yvv.fullPivLu().solve(ygv.transpose());
  CHECK((red.b_red - schur.imag()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(schur.real().cwiseAbs().maxCoeff() < 1e-8);  // lossless residual
}

TEST_CASE("kron reduction preserves injected currents") {
  const auto& model = committed_model();
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  auto rec = netmodel::voltage_recovery_matrix(ext, Vec::Constant(2, 1.05));
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    CVec e(2);
    for (int k = 0; k < 2; ++k)
      e(k) = std::polar(rng.uniform(0.9, 1.1), rng.uniform(-1.0, 1.0));
    CVec v = rec.p_mat * e;
    // Eliminated buses carry no injection: Y_vg e + Y_vv v = 0.
    CVec resid = ext.y_ext.bottomLeftCorner(ext.n_bus, ext.n_gen) * e +
                 ext.y_ext.bottomRightCorner(ext.n_bus, ext.n_bus) * v;
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("electrical power balances the mechanical input at the SEP") {
  const auto& ctx = committed_context();
  Vec resid = netmodel::equilibrium_residual(ctx.post_reduced, ctx.delta_star);
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(ctx.post_reduced.p_m.sum()) < 1e-10);
}

TEST_CASE("voltage recovery of a single unloaded bus is the identity") {
  auto model = netmodel::parse_model(R"({
    "base_mva": 100,
    "buses": [{"id": 1}],
    "branches": [],
    "generators": [{"bus": 1, "m": 0.1, "d": 0.1, "xd_prime": 0.5,
                    "e_mag": 1.0, "p_m": 0.0}]
  })");
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  auto rec = netmodel::voltage_recovery_matrix(ext, Vec::Constant(1, 1.0));
  REQUIRE(rec.p_mat.rows() == 1);
  CHECK(std::abs(rec.p_mat(0, 0) - 1.0) < 1e-12);
  CHECK(rec.c_mag[0][0] == doctest::Approx(1.0));
}

TEST_CASE("recovered bus voltages match the power-flow solution") {
  const auto& model = committed_model();
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(model, Topology::all_in(),
                                                 pf.v_bus);
  Vec e_mag(2);
  e_mag << 1.05, 1.05;
  auto rec = netmodel::voltage_recovery_matrix(ext, e_mag);
  REQUIRE(rec.p_mat.rows() == 3);
  REQUIRE(rec.p_mat.cols() == 2);
  CVec e(2);
  for (int k = 0; k < 2; ++k) e(k) = std::polar(e_mag(k), pf.delta_gen(k));
  CVec v = rec.p_mat * e;
  CHECK((v - pf.v_bus).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("SEP of the symmetric zero-transfer system is zero") {
  netmodel::ReducedModel r;
  r.m = Vec::Constant(2, 0.1);
  r.d = Vec::Constant(2, 0.1);
  r.e_mag = Vec::Constant(2, 1.0);
  r.p_m = Vec::Zero(2);
  r.b_red = Mat::Zero(2, 2);
  r.b_red(0, 1) = r.b_red(1, 0) = 1.0;
  r.edges = {{0, 1}};
  Vec sep = netmodel::compute_sep(r);
  CHECK(sep.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SEP with unit coupling and half-unit transfer is asin(1/2)") {
  netmodel::ReducedModel r;
  r.m = Vec::Constant(2, 0.1);
  r.d = Vec::Constant(2, 0.1);
  r.e_mag = Vec::Constant(2, 1.0);
  r.b_red = Mat::Zero(2, 2);
  r.b_red(0, 1) = r.b_red(1, 0) = 1.0;  // B_12 E_1 E_2 = 1
  r.p_m = Vec(2);
  r.p_m << 0.5, -0.5;
  r.edges = {{0, 1}};
  Vec sep = netmodel::compute_sep(r);
  CHECK(sep(0) - sep(1) == doctest::Approx(std::asin(0.5)).epsilon(1e-10));
  CHECK(std::abs(r.m.dot(sep)) < 1e-10);  // COA-normalized
}

TEST_CASE("committed SEP stays well inside the operating window") {
  const auto& ctx = committed_context();
  CHECK(std::abs(ctx.delta_star(0) - ctx.delta_star(1)) < M_PI / 2);
  CHECK(std::abs(ctx.mats.m.dot(ctx.delta_star)) < 1e-10);
}

TEST_CASE("overloaded transfer has no equilibrium") {
  netmodel::ReducedModel r;
  r.m = Vec::Constant(2, 0.1);
  r.d = Vec::Constant(2, 0.1);
  r.e_mag = Vec::Constant(2, 1.0);
  r.b_red = Mat::Zero(2, 2);
  r.b_red(0, 1) = r.b_red(1, 0) = 1.0;
  r.p_m = Vec(2);
  r.p_m << 1.5, -1.5;  // exceeds the sine transfer limit of 1
  r.edges = {{0, 1}};
  CHECK_THROWS_AS(netmodel::compute_sep(r), SolverError);
}

TEST_CASE("random lossless systems have verified equilibria") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 2 + static_cast<int>(rng.below(3));
    auto sys = random_lossless_system(rng, n);
    Vec resid = netmodel::equilibrium_residual(sys.reduced, sys.delta_star);
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-12);
    Vec sep = netmodel::compute_sep(sys.reduced, sys.delta_star);
    CHECK((sep - sys.delta_star).cwiseAbs().maxCoeff() < 1e-8);
  }
}
