#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lvrtcsr/csr.hpp"
#include "lvrtcsr/dynamics.hpp"
#include "lvrtcsr/feasreg.hpp"
#include "lvrtcsr/lff.hpp"
#include "lvrtcsr/netmodel.hpp"
#include "lvrtcsr/oracle.hpp"

namespace fs = std::filesystem;
using namespace lvrtcsr;
using nlohmann::json;

namespace {

bool verbose() {
  const char* v = std::getenv("LVRTCSR_LOG");
  return v && *v && std::string(v) != "0";
}

void log_line(const std::string& msg) {
  if (verbose()) std::cerr << "lvrtcsr: " << msg << "\n";
}

struct RunConfig {
  std::string model_path;
  std::string scenario_path;
  int n_line = 4;
  double dv = -1.0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  unsigned jobs = 1;
  std::string grid = "201x201";
  double horizon = 20.0;

  fs::path out(const std::string& name) const {
    fs::create_directories(out_dir);
    return fs::path(out_dir) / name;
  }
  std::pair<int, int> grid_dims() const {
    auto xpos = grid.find('x');
    if (xpos == std::string::npos)
      throw ModelError("--grid must look like 201x201");
    int a = std::stoi(grid.substr(0, xpos));
    int b = std::stoi(grid.substr(xpos + 1));
    if (a < 2 || b < 2) throw ModelError("--grid dimensions must be >= 2");
    return {a, b};
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path.string());
  out << text;
}

void add_common(CLI::App* cmd, RunConfig& cfg, bool needs_scenario) {
  cmd->add_option("--model", cfg.model_path, "model JSON path")->required();
  auto* sc = cmd->add_option("--scenario", cfg.scenario_path,
                             "fault scenario JSON path");
  if (needs_scenario) sc->required();
  cmd->add_option("--nline", cfg.n_line, "PWL lines per cosine term");
  cmd->add_option("--dv", cfg.dv, "level-set expansion step");
  cmd->add_option("--seed", cfg.seed, "RNG seed");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_option("--jobs", cfg.jobs, "worker threads");
  cmd->add_option("--grid", cfg.grid, "oracle grid as N1xN2");
  cmd->add_option("--horizon", cfg.horizon, "oracle horizon in seconds");
}

// Reduced model + SEP + matrices for the intact network (no scenario).
dynamics::StateMatrices intact_matrices(const netmodel::NetworkModel& model,
                                        netmodel::PowerFlowResult* pf_out) {
  auto pf = netmodel::solve_power_flow(model);
  auto ext = netmodel::build_extended_admittance(
      model, netmodel::Topology::all_in(), pf.v_bus);
  auto red = netmodel::kron_reduce(ext, model);
  Vec sep = netmodel::compute_sep(red, pf.delta_gen);
  if (pf_out) *pf_out = pf;
  return dynamics::build_state_matrices(red, sep);
}

json estimate_to_json(const csr::CSREstimate& est) {
  json j;
  j["candidate"] = json::parse(est.candidate.to_json());
  j["v"] = est.v;
  j["polytope"] = json::parse(est.polytope.to_json());
  j["history"] = json::array();
  for (const auto& r : est.history) {
    json h;
    h["iteration"] = r.iteration;
    h["v_max"] = r.v_max;
    h["v_x0"] = r.v_x0;
    h["contains_x0"] = r.contains_x0;
    h["binding_facet"] = r.binding_facet;
    j["history"].push_back(std::move(h));
  }
  return j;
}

int cmd_sep(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  netmodel::PowerFlowResult pf;
  dynamics::StateMatrices mats;
  if (!cfg.scenario_path.empty()) {
    auto scenario = dynamics::load_scenario(cfg.scenario_path);
    auto ctx = dynamics::prepare_fault(model, scenario);
    pf = ctx.prefault;
    mats = ctx.mats;
  } else {
    mats = intact_matrices(model, &pf);
  }
  json j;
  j["delta_star"] = std::vector<double>(
      mats.delta_star.data(), mats.delta_star.data() + mats.delta_star.size());
  j["power_flow_iterations"] = pf.iterations;
  j["bus_voltage_mag"] = json::array();
  for (Eigen::Index i = 0; i < pf.v_bus.size(); ++i)
    j["bus_voltage_mag"].push_back(std::abs(pf.v_bus(i)));
  std::string text = j.dump(2) + "\n";
  write_text(cfg.out("sep.json"), text);
  std::cout << text;
  return 0;
}

int cmd_lff(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  dynamics::StateMatrices mats;
  if (!cfg.scenario_path.empty()) {
    auto scenario = dynamics::load_scenario(cfg.scenario_path);
    mats = dynamics::prepare_fault(model, scenario).mats;
  } else {
    mats = intact_matrices(model, nullptr);
  }
  log_line("solving family LMI (analytic center)");
  auto cand = lff::assemble_and_solve_lmi(mats, std::nullopt);
  write_text(cfg.out("candidate.json"), cand.to_json() + "\n");
  auto energy = lff::energy_function_candidate(mats);
  write_text(cfg.out("candidate_energy.json"), energy.to_json() + "\n");
  std::cout << "wrote " << cfg.out("candidate.json").string() << "\n";
  return 0;
}

int cmd_polytope(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  auto scenario = dynamics::load_scenario(cfg.scenario_path);
  auto sys = csr::prepare_system(model, scenario, cfg.n_line, 721, cfg.jobs);
  write_text(cfg.out("polytope.json"), sys.polytope.to_json() + "\n");
  for (std::size_t c = 0; c < sys.fits.size(); ++c)
    for (std::size_t t = 0; t < sys.fits[c].size(); ++t)
      feasreg::write_fit_csv(
          sys.fits[c][t],
          cfg.out("fit_bus" + std::to_string(sys.constraints[c].rg_bus) +
                  "_term" + std::to_string(t) + ".csv")
              .string());
  std::cout << "wrote " << cfg.out("polytope.json").string() << " ("
            << sys.polytope.n_facets() << " facets)\n";
  return 0;
}

int cmd_estimate(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  auto scenario = dynamics::load_scenario(cfg.scenario_path);
  auto sys = csr::prepare_system(model, scenario, cfg.n_line, 721, cfg.jobs);
  auto x0 = sys.ctx.state_at_clearing(scenario.clearing_time);
  auto est = csr::estimate_csr(x0, sys.ctx.mats, sys.polytope, {}, cfg.dv);
  write_text(cfg.out("estimate.json"), estimate_to_json(est).dump(2) + "\n");
  std::cout << "v_max " << fmt17(est.v) << ", refinements "
            << est.history.size() - 1 << "\n";
  return 0;
}

int cmd_assess(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  auto scenario = dynamics::load_scenario(cfg.scenario_path);
  auto sys = csr::prepare_system(model, scenario, cfg.n_line, 721, cfg.jobs);
  csr::CSREstimate est;
  auto res = csr::assess_fault(sys, {}, cfg.dv, 2.0, &est);
  write_text(cfg.out("assessment.json"), res.to_json() + "\n");
  write_text(cfg.out("estimate.json"), estimate_to_json(est).dump(2) + "\n");
  auto x0 = sys.ctx.state_at_clearing(scenario.clearing_time);
  auto traj = dynamics::simulate(x0, sys.ctx.mats, cfg.horizon);
  traj.write_csv(cfg.out("postfault_trajectory.csv").string());
  std::cout << res.to_json() << "\n";
  return res.verdict == csr::AssessmentResult::Verdict::Stable ? 0 : 2;
}

int cmd_oracle(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  auto scenario = dynamics::load_scenario(cfg.scenario_path);
  auto sys = csr::prepare_system(model, scenario, cfg.n_line, 721, cfg.jobs);
  auto [n1, n2] = cfg.grid_dims();
  oracle::OracleOptions opts;
  opts.horizon = cfg.horizon;
  auto spec = oracle::default_grid(sys.ctx.mats, n1, n2);
  log_line("classifying " + std::to_string(n1 * n2) + " grid cells");
  auto grid =
      oracle::brute_force_csr(sys.ctx.mats, sys.constraints, spec, opts,
                              cfg.jobs);
  grid.write_csv(cfg.out("oracle_grid.csv").string());
  auto x0 = sys.ctx.state_at_clearing(scenario.clearing_time);
  auto est = csr::estimate_csr(x0, sys.ctx.mats, sys.polytope, {}, cfg.dv);
  auto audit = oracle::audit_estimate(est, grid, sys.ctx.mats);
  write_text(cfg.out("audit.json"), audit.to_json() + "\n");
  std::cout << audit.to_json() << "\n";
  return audit.violations.empty() ? 0 : 3;
}

int cmd_plotdata(const RunConfig& cfg) {
  auto model = netmodel::load_model(cfg.model_path);
  auto scenario = dynamics::load_scenario(cfg.scenario_path);
  auto sys = csr::prepare_system(model, scenario, cfg.n_line, 721, cfg.jobs);
  const auto& mats = sys.ctx.mats;
  auto x0 = sys.ctx.state_at_clearing(scenario.clearing_time);
  auto est = csr::estimate_csr(x0, mats, sys.polytope, {}, cfg.dv);
  write_text(cfg.out("estimate.json"), estimate_to_json(est).dump(2) + "\n");

  if (mats.n() != 2) {
    std::cerr << "plotdata: 2-D field/contour grids require a two-machine "
                 "system; emitting report data only\n";
    auto traj = dynamics::simulate(x0, mats, cfg.horizon);
    traj.write_csv(cfg.out("postfault_trajectory.csv").string());
    return 0;
  }

  auto [n1, n2] = cfg.grid_dims();
  auto spec = oracle::default_grid(mats, n1, n2);
  oracle::OracleGrid shape;
  shape.spec = spec;

  {
    std::ofstream out(cfg.out("field.csv"));
    out << "y1,y2,dy1,dy2,v,estimated,lvrt_margin\n";
    for (int i2 = 0; i2 < n2; ++i2)
      for (int i1 = 0; i1 < n1; ++i1) {
        auto x = shape.state(i1, i2, mats);
        auto f = dynamics::vector_field(x, mats);
        double dy1 = f.x1(0) - f.x1(1);
        double dy2 = f.x2(0) - f.x2(1);
        double v = lff::evaluate_v(est.candidate, x, mats);
        Vec delta = mats.delta_star + x.x1;
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& c : sys.constraints)
          margin = std::min(margin, feasreg::voltage_sq(delta, c) -
                                        c.lvrt_max * c.lvrt_max);
        out << fmt17(shape.y1(i1)) << "," << fmt17(shape.y2(i2)) << ","
            << fmt17(dy1) << "," << fmt17(dy2) << "," << fmt17(v) << ","
            << (csr::contains(est, x, mats) ? 1 : 0) << "," << fmt17(margin)
            << "\n";
      }
  }

  {
    // Facet segments in the y1 (angle-difference) coordinate, classified at
    // a sweep of y2 rates.
    std::ofstream out(cfg.out("facets.csv"));
    out << "facet,tag,y1,flow_class_at_y2_1\n";
    Vec w(2);
    w << mats.m(1), -mats.m(0);
    w /= mats.m.sum();
    double wd = w(0) - w(1);  // = 1
    for (int i = 0; i < sys.polytope.n_facets(); ++i) {
      double coef = sys.polytope.l_ineq.row(i).dot(w) * 1.0;
      if (std::abs(coef) < 1e-14) continue;
      double y1 = -sys.polytope.l_ineq_const(i) / coef / wd;
      dynamics::COAState x;
      x.x1 = y1 * w;
      x.x2 = 1.0 * w;
      std::string cls = "off-polytope";
      try {
        auto fc = feasreg::classify_facet_point(sys.polytope, i, x);
        cls = fc.cls == feasreg::FacetClass::FlowOut
                  ? "flow-out"
                  : (fc.cls == feasreg::FacetClass::FlowIn ? "flow-in"
                                                           : "semi-saddle");
      } catch (const ModelError&) {
      }
      out << i << "," << sys.polytope.tags[i].str() << "," << fmt17(y1) << ","
          << cls << "\n";
    }
  }

  auto traj = dynamics::simulate(x0, mats, cfg.horizon);
  traj.write_csv(cfg.out("postfault_trajectory.csv").string());
  std::cout << "wrote plot bundle to " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LVRT-constrained stability region toolkit"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto* c_sep = app.add_subcommand("sep", "power flow and post-fault SEP");
  add_common(c_sep, cfg, false);
  auto* c_lff = app.add_subcommand("lff", "solve the Lyapunov family LMI");
  add_common(c_lff, cfg, false);
  auto* c_poly = app.add_subcommand("polytope", "build the ACFR polytope");
  add_common(c_poly, cfg, true);
  auto* c_est = app.add_subcommand("estimate", "estimate the CSR");
  add_common(c_est, cfg, true);
  auto* c_assess = app.add_subcommand("assess", "assess a fault scenario");
  add_common(c_assess, cfg, true);
  auto* c_oracle =
      app.add_subcommand("oracle", "brute-force CSR grid and estimate audit");
  add_common(c_oracle, cfg, true);
  auto* c_plot = app.add_subcommand("plotdata", "emit plot data bundle");
  add_common(c_plot, cfg, true);

  CLI11_PARSE(app, argc, argv);
  try {
    if (c_sep->parsed()) return cmd_sep(cfg);
    if (c_lff->parsed()) return cmd_lff(cfg);
    if (c_poly->parsed()) return cmd_polytope(cfg);
    if (c_est->parsed()) return cmd_estimate(cfg);
    if (c_assess->parsed()) return cmd_assess(cfg);
    if (c_oracle->parsed()) return cmd_oracle(cfg);
    if (c_plot->parsed()) return cmd_plotdata(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
