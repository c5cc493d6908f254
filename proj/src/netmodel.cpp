#include "lvrtcsr/netmodel.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace lvrtcsr::netmodel {

using std::complex;
using json = nlohmann::json;

namespace {
constexpr complex<double> kJ{0.0, 1.0};
}

int NetworkModel::bus_index(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == bus_id) return static_cast<int>(i);
  throw ModelError("unknown bus id " + std::to_string(bus_id));
}

double ReducedModel::edge_weight(std::size_t e) const {
  auto [k, j] = edges[e];
  return b_red(k, j) * e_mag(k) * e_mag(j);
}

Topology Topology::without_branch(int idx) {
  Topology t;
  t.in_service.clear();
  t.fault_branch.reset();
  t.removed = idx;
  return t;
}

Topology Topology::faulted(int idx, double location) {
  Topology t;
  t.fault_branch = idx;
  t.fault_location = location;
  return t;
}

// ---------------------------------------------------------------------------
// Model loading

NetworkModel parse_model(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ModelError(std::string("model parse error: ") + e.what());
  }
  NetworkModel m;
  try {
    m.base_mva = j.value("base_mva", 100.0);
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.load_p = jb.value("load_p", 0.0);
      b.load_q = jb.value("load_q", 0.0);
      b.is_rg = jb.value("is_rg", false);
      b.rg_p = jb.value("rg_p", 0.0);
      b.rg_q = jb.value("rg_q", 0.0);
      if (jb.contains("lvrt_curve"))
        for (const auto& pt : jb.at("lvrt_curve"))
          b.lvrt_curve.emplace_back(pt.at(0).get<double>(),
                                    pt.at(1).get<double>());
      if (jb.contains("lvrt_max")) b.lvrt_max = jb.at("lvrt_max").get<double>();
      m.buses.push_back(std::move(b));
    }
    for (const auto& jb : j.at("branches")) {
      Branch br;
      br.from = jb.at("from").get<int>();
      br.to = jb.at("to").get<int>();
      br.reactance_x = jb.at("reactance_x").get<double>();
      br.shunt_b = jb.value("shunt_b", 0.0);
      br.resistance_r = jb.value("resistance_r", 0.0);
      m.branches.push_back(br);
    }
    for (const auto& jg : j.at("generators")) {
      Generator g;
      g.bus = jg.at("bus").get<int>();
      g.m = jg.at("m").get<double>();
      g.d = jg.at("d").get<double>();
      g.xd_prime = jg.at("xd_prime").get<double>();
      g.e_mag = jg.at("e_mag").get<double>();
      g.p_m = jg.at("p_m").get<double>();
      m.generators.push_back(g);
    }
  } catch (const json::exception& e) {
    throw ModelError(std::string("model schema error: ") + e.what());
  }

  // Validation.
  std::unordered_map<int, int> seen;
  for (const auto& b : m.buses) {
    if (seen.count(b.id))
      throw ModelError("duplicate bus id " + std::to_string(b.id));
    seen[b.id] = 1;
    if (!b.is_rg && (!b.lvrt_curve.empty() || b.lvrt_max))
      throw ModelError("lvrt fields on non-RG bus " + std::to_string(b.id));
    if (b.lvrt_max && (*b.lvrt_max <= 0.0 || *b.lvrt_max > 1.0))
      throw ModelError("lvrt_max out of (0,1] on bus " + std::to_string(b.id));
  }
  for (auto& br : m.branches) {
    if (br.reactance_x <= 0.0) throw ModelError("branch reactance_x must be > 0");
    (void)m.bus_index(br.from);
    (void)m.bus_index(br.to);
    if (br.resistance_r != 0.0) {
      std::cerr << "warning: branch " << br.from << "-" << br.to << " has r="
                << br.resistance_r << "; zeroed (lossless model)\n";
      br.resistance_r = 0.0;
    }
  }
  if (m.generators.empty()) throw ModelError("model has no generators");
  for (const auto& g : m.generators) {
    (void)m.bus_index(g.bus);
    if (g.m <= 0.0) throw ModelError("generator inertia must be > 0");
    if (g.d <= 0.0) throw ModelError("generator damping must be > 0");
    if (g.e_mag <= 0.0) throw ModelError("generator e_mag must be > 0");
    if (g.xd_prime <= 0.0) throw ModelError("generator xd_prime must be > 0");
  }
  return m;
}

NetworkModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

// ---------------------------------------------------------------------------
// Admittance assembly

namespace {

struct NodeLayout {
  int n_gen;
  int n_bus;  // network buses + optional fault node
  bool has_fault_node;
};

// Builds the node admittance over [gen internal | buses | fault node?].
// fold_loads selects whether loads become shunts (needs prefault voltages).
CMat assemble(const NetworkModel& model, const Topology& topo,
              const CVec* v_prefault, NodeLayout* layout) {
  const int ng = model.n_gen();
  const int nb = model.n_bus();
  if (!topo.in_service.empty() &&
      topo.in_service.size() != model.branches.size())
    throw ModelError("topology overlay size mismatch");
  bool has_fault = topo.fault_branch.has_value();
  if (has_fault) {
    int fb = *topo.fault_branch;
    if (fb < 0 || fb >= static_cast<int>(model.branches.size()))
      throw ModelError("fault branch index out of range");
    if (topo.fault_location < 0.0 || topo.fault_location > 1.0)
      throw ModelError("fault location must lie in [0,1]");
  }
  const int nf = has_fault ? 1 : 0;
  const int nn = ng + nb + nf;
  CMat y = CMat::Zero(nn, nn);

  auto add_series = [&](int a, int b, complex<double> yb) {
    y(a, a) += yb;
    y(b, b) += yb;
    y(a, b) -= yb;
    y(b, a) -= yb;
  };

  for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
    const auto& br = model.branches[bi];
    bool in = topo.in_service.empty() ? true : topo.in_service[bi];
    if (topo.removed == static_cast<int>(bi)) in = false;
    if (!in) continue;
    int a = ng + model.bus_index(br.from);
    int b = ng + model.bus_index(br.to);
    // Half of the line charging at each end regardless of fault split.
    y(a, a) += kJ * (br.shunt_b / 2.0);
    y(b, b) += kJ * (br.shunt_b / 2.0);
    if (has_fault && *topo.fault_branch == static_cast<int>(bi)) {
      const int f = ng + nb;  // fault node
      const double loc = topo.fault_location;
      if (loc < 1e-9) {
        add_series(a, b, 1.0 / (kJ * br.reactance_x));
        add_series(a, f, 1.0 / (kJ * 1e-9));  // fault node tied to `from` end
      } else if (loc > 1.0 - 1e-9) {
        add_series(a, b, 1.0 / (kJ * br.reactance_x));
        add_series(b, f, 1.0 / (kJ * 1e-9));
      } else {
        add_series(a, f, 1.0 / (kJ * (br.reactance_x * loc)));
        add_series(f, b, 1.0 / (kJ * (br.reactance_x * (1.0 - loc))));
      }
      y(f, f) += 1.0 / (kJ * topo.fault_xg);  // bolted fault to ground
    } else {
      add_series(a, b, 1.0 / (kJ * br.reactance_x));
    }
  }

  for (int k = 0; k < ng; ++k) {
    const auto& g = model.generators[k];
    add_series(k, ng + model.bus_index(g.bus), 1.0 / (kJ * g.xd_prime));
  }

  if (v_prefault) {
    if (v_prefault->size() != nb)
      throw ModelError("prefault voltage vector size mismatch");
    for (int i = 0; i < nb; ++i) {
      const auto& b = model.buses[i];
      complex<double> s(b.load_p - b.rg_p, b.load_q - b.rg_q);
      double vmag2 = std::norm((*v_prefault)(i));
      if (vmag2 <= 0.0) throw ModelError("prefault bus voltage is zero");
      y(ng + i, ng + i) += std::conj(s) / vmag2;
    }
  }

  if (layout) *layout = NodeLayout{ng, nb + nf, has_fault};
  return y;
}

}  // namespace

ExtendedAdmittance build_extended_admittance(const NetworkModel& model,
                                             const Topology& topology,
                                             const CVec& v_bus_prefault) {
  NodeLayout layout{};
  ExtendedAdmittance ext;
  ext.y_ext = assemble(model, topology, &v_bus_prefault, &layout);
  ext.n_gen = layout.n_gen;
  ext.n_bus = layout.n_bus;
  return ext;
}

// ---------------------------------------------------------------------------
// Power flow

PowerFlowResult solve_power_flow(const NetworkModel& model,
                                 const Topology& topology) {
  const int ng = model.n_gen();
  NodeLayout layout{};
  CMat y = assemble(model, topology, nullptr, &layout);
  const int nb = layout.n_bus;
  const int nn = ng + nb;

  // Net scheduled injections. Generator internal nodes are PV at |E_k|;
  // all bus nodes are PQ.
  Vec p_spec = Vec::Zero(nn), q_spec = Vec::Zero(nn);
  for (int k = 0; k < ng; ++k) p_spec(k) = model.generators[k].p_m;
  for (int i = 0; i < model.n_bus(); ++i) {
    const auto& b = model.buses[i];
    p_spec(ng + i) = -(b.load_p - b.rg_p);
    q_spec(ng + i) = -(b.load_q - b.rg_q);
  }
  if (std::abs(p_spec.sum()) > 1e-8)
    throw ModelError(
        "active power imbalance " + fmt17(p_spec.sum()) +
        "; a lossless model requires sum(p_m) == sum(active load)");

  Vec theta = Vec::Zero(nn);
  Vec vmag = Vec::Ones(nn);
  for (int k = 0; k < ng; ++k) vmag(k) = model.generators[k].e_mag;

  // Unknowns: theta at nodes 1..nn-1 (node 0 = reference), vmag at bus nodes.
  auto calc_pq = [&](Vec& p, Vec& q) {
    p.setZero(nn);
    q.setZero(nn);
    for (int k = 0; k < nn; ++k) {
      complex<double> s{0.0, 0.0};
      complex<double> vk = vmag(k) * std::exp(kJ * theta(k));
      for (int j = 0; j < nn; ++j) {
        if (y(k, j) == complex<double>(0.0, 0.0)) continue;
        s += vk * std::conj(y(k, j) * (vmag(j) * std::exp(kJ * theta(j))));
      }
      p(k) = s.real();
      q(k) = s.imag();
    }
  };

  const int n_th = nn - 1;
  const int n_v = nb;
  PowerFlowResult res;
  for (int it = 0; it < 80; ++it) {
    Vec p(nn), q(nn);
    calc_pq(p, q);
    Vec mis(n_th + n_v);
    for (int k = 1; k < nn; ++k) mis(k - 1) = p_spec(k) - p(k);
    for (int i = 0; i < nb; ++i) mis(n_th + i) = q_spec(ng + i) - q(ng + i);
    if (mis.lpNorm<Eigen::Infinity>() < 1e-12) {
      res.iterations = it;
      res.v_bus = CVec(model.n_bus());
      for (int i = 0; i < model.n_bus(); ++i)
        res.v_bus(i) = vmag(ng + i) * std::exp(kJ * theta(ng + i));
      res.delta_gen = theta.head(ng);
      return res;
    }
    // Numerical Jacobian is adequate at these sizes.
    Mat jac(n_th + n_v, n_th + n_v);
    const double h = 1e-7;
    for (int c = 0; c < n_th + n_v; ++c) {
      double* slot = c < n_th ? &theta(c + 1) : &vmag(ng + (c - n_th));
      double save = *slot;
      *slot = save + h;
      Vec p2(nn), q2(nn);
      calc_pq(p2, q2);
      *slot = save;
      for (int k = 1; k < nn; ++k) jac(k - 1, c) = (p2(k) - p(k)) / h;
      for (int i = 0; i < nb; ++i)
        jac(n_th + i, c) = (q2(ng + i) - q(ng + i)) / h;
    }
    Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible())
      throw SolverError("power flow Jacobian singular (islanded network?)");
    Vec dx = lu.solve(mis);
    // Damped update to stay in the attraction basin from a flat start.
    double step = 1.0;
    if (dx.lpNorm<Eigen::Infinity>() > 0.5) step = 0.5 / dx.lpNorm<Eigen::Infinity>();
    for (int k = 1; k < nn; ++k) theta(k) += step * dx(k - 1);
    for (int i = 0; i < nb; ++i) vmag(ng + i) += step * dx(n_th + i);
  }
  throw SolverError("power flow did not converge");
}

// ---------------------------------------------------------------------------
// Kron reduction and voltage recovery

ReducedModel kron_reduce(const ExtendedAdmittance& ext,
                         const NetworkModel& model) {
  const int ng = ext.n_gen;
  const int nb = ext.n_bus;
  CMat ygg = ext.y_ext.topLeftCorner(ng, ng);
  CMat ygv = ext.y_ext.topRightCorner(ng, nb);
  CMat yvg = ext.y_ext.bottomLeftCorner(nb, ng);
  CMat yvv = ext.y_ext.bottomRightCorner(nb, nb);

  CMat yred;
  if (nb == 0) {
    yred = ygg;
  } else {
    Eigen::FullPivLU<CMat> lu(yvv);
    if (!lu.isInvertible())
      throw SolverError("Kron reduction: Y_vv singular (islanded generator?)");
    yred = ygg - ygv * lu.solve(yvg);
  }
  double gmax = yred.real().cwiseAbs().maxCoeff();
  if (gmax > 1e-8)
    throw SolverError("reduced network has residual conductance " +
                      fmt17(gmax) + " pu; model is not lossless");

  ReducedModel r;
  r.b_red = yred.imag();
  double asym = (r.b_red - r.b_red.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12)
    throw SolverError("reduced susceptance asymmetry " + fmt17(asym));
  r.b_red = 0.5 * (r.b_red + r.b_red.transpose().eval());

  r.e_mag = Vec(ng);
  r.m = Vec(ng);
  r.d = Vec(ng);
  r.p_m = Vec(ng);
  for (int k = 0; k < ng; ++k) {
    r.e_mag(k) = model.generators[k].e_mag;
    r.m(k) = model.generators[k].m;
    r.d(k) = model.generators[k].d;
    r.p_m(k) = model.generators[k].p_m;
  }
  for (int k = 0; k < ng; ++k)
    for (int j = k + 1; j < ng; ++j)
      if (std::abs(r.b_red(k, j)) > 1e-9) r.edges.emplace_back(k, j);
  return r;
}

VoltageRecovery voltage_recovery_matrix(const ExtendedAdmittance& ext,
                                        const Vec& e_mag) {
  const int ng = ext.n_gen;
  const int nb = ext.n_bus;
  CMat ygv = ext.y_ext.topRightCorner(ng, nb);
  CMat yvv = ext.y_ext.bottomRightCorner(nb, nb);
  Eigen::FullPivLU<CMat> lu(yvv);
  if (!lu.isInvertible())
    throw SolverError("voltage recovery: Y_vv singular");
  VoltageRecovery vr;
  vr.p_mat = -lu.solve(ygv.transpose().eval());  // -Yvv^-1 Yvg, Yvg = Ygv^T
  vr.c_mag.resize(nb);
  vr.c_ang.resize(nb);
  for (int k = 0; k < nb; ++k) {
    vr.c_mag[k].resize(ng);
    vr.c_ang[k].resize(ng);
    for (int i = 0; i < ng; ++i) {
      vr.c_mag[k][i] = e_mag(i) * std::abs(vr.p_mat(k, i));
      vr.c_ang[k][i] = std::arg(vr.p_mat(k, i));
    }
  }
  return vr;
}

// ---------------------------------------------------------------------------
// SEP

Vec equilibrium_residual(const ReducedModel& reduced, const Vec& delta) {
  const int n = reduced.n();
  Vec f(n);
  for (int k = 0; k < n; ++k) {
    double pe = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != k)
        pe += reduced.b_red(k, j) * reduced.e_mag(k) * reduced.e_mag(j) *
              std::sin(delta(k) - delta(j));
    f(k) = reduced.p_m(k) - pe;
  }
  return f;
}

Vec compute_sep(const ReducedModel& reduced, const Vec& initial_guess) {
  const int n = reduced.n();
  if (std::abs(reduced.p_m.sum()) > 1e-9)
    throw SolverError("sum(p_m) != 0: lossless reduced model has no equilibrium");
  Vec delta = initial_guess.size() == n ? initial_guess : Vec::Zero(n);
  if (n == 1) {
    if (std::abs(reduced.p_m(0)) > 1e-10)
      throw SolverError("single machine with nonzero p_m has no equilibrium");
    return Vec::Zero(1);
  }

  // Damped Newton on angles relative to machine n-1.
  Vec theta(n - 1);
  for (int k = 0; k < n - 1; ++k) theta(k) = delta(k) - delta(n - 1);
  auto to_abs = [&](const Vec& th) {
    Vec d(n);
    d.head(n - 1) = th;
    d(n - 1) = 0.0;
    return d;
  };
  Vec f = equilibrium_residual(reduced, to_abs(theta)).head(n - 1);
  bool ok = false;
  for (int it = 0; it < 200; ++it) {
    if (f.lpNorm<Eigen::Infinity>() < 1e-13) {
      ok = true;
      break;
    }
    Vec d = to_abs(theta);
    Mat jac = Mat::Zero(n - 1, n - 1);
    for (int k = 0; k < n - 1; ++k) {
      for (int j = 0; j < n; ++j) {
        if (j == k) continue;
        double w = reduced.b_red(k, j) * reduced.e_mag(k) * reduced.e_mag(j) *
                   std::cos(d(k) - d(j));
        jac(k, k) -= w;
        if (j < n - 1) jac(k, j) += w;
      }
    }
    Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible()) throw SolverError("SEP Newton: singular Jacobian");
    Vec step = lu.solve(f);
    double t = 1.0;
    double f0 = f.norm();
    for (int bt = 0; bt < 40; ++bt) {
      Vec cand = theta - t * step;
      Vec fc = equilibrium_residual(reduced, to_abs(cand)).head(n - 1);
      if (fc.norm() < (1.0 - 1e-4 * t) * f0) {
        theta = cand;
        f = fc;
        break;
      }
      t *= 0.5;
      if (bt == 39) throw SolverError("SEP Newton diverged");
    }
  }
  if (!ok && f.lpNorm<Eigen::Infinity>() >= 1e-13)
    throw SolverError("SEP Newton did not converge");

  Vec d = to_abs(theta);
  // COA normalization.
  d.array() -= reduced.m.dot(d) / reduced.m.sum();
  Vec full_res = equilibrium_residual(reduced, d);
  if (full_res.lpNorm<Eigen::Infinity>() > 1e-10)
    throw SolverError("SEP residual " +
                      fmt17(full_res.lpNorm<Eigen::Infinity>()));

  // Stability signature: eigenvalues of the manifold-projected Jacobian of
  // the swing dynamics must lie in the open left half-plane.
  Mat lap = Mat::Zero(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      if (j == k) continue;
      double w = reduced.b_red(k, j) * reduced.e_mag(k) * reduced.e_mag(j) *
                 std::cos(d(k) - d(j));
      lap(k, k) += w;
      lap(k, j) -= w;
    }
  Mat minv = reduced.m.cwiseInverse().asDiagonal();
  Mat jac_full(2 * n, 2 * n);
  jac_full << Mat::Zero(n, n), Mat::Identity(n, n), -(minv * lap),
      -(minv * reduced.d.asDiagonal().toDenseMatrix());
  Mat ux = orthonormal_complement(reduced.m);
  Mat t2 = Mat::Zero(2 * n, 2 * (n - 1));
  t2.topLeftCorner(n, n - 1) = ux;
  t2.bottomRightCorner(n, n - 1) = ux;
  Eigen::EigenSolver<Mat> es(t2.transpose() * jac_full * t2);
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i).real() >= -1e-12)
      throw SolverError("equilibrium is not an SEP (eigenvalue with Re=" +
                        fmt17(es.eigenvalues()(i).real()) + ")");
  return d;
}

}  // namespace lvrtcsr::netmodel
