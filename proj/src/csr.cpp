#include "lvrtcsr/csr.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "lvrtcsr/convex.hpp"

namespace lvrtcsr::csr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

convex::Functional v_functional(const LyapunovCandidate& cand,
                                const StateMatrices& mats, double shift) {
  convex::Functional f;
  f.value = [&cand, &mats, shift](const Vec& z) {
    return lff::evaluate_v(cand, COAState::from_stacked(z), mats) - shift;
  };
  f.grad = [&cand, &mats](const Vec& z) {
    return lff::evaluate_v_gradient(cand, COAState::from_stacked(z), mats);
  };
  f.hess = [&cand, &mats](const Vec& z) {
    return lff::evaluate_v_hessian(cand, COAState::from_stacked(z), mats);
  };
  return f;
}

struct FacetSetup {
  Mat a_eq;  // facet equality + COA equalities
  Vec b_eq;
  Mat g;  // other facets, over the stacked state
  Vec h;
  std::vector<convex::Functional> facet_ineqs;
};

FacetSetup facet_setup(const feasreg::Polytope& poly, int i,
                       const StateMatrices& mats) {
  const int n = poly.n();
  FacetSetup fs;
  fs.a_eq = Mat::Zero(3, 2 * n);
  fs.a_eq.block(0, 0, 1, n) = poly.l_ineq.row(i);
  fs.a_eq.block(1, 0, 1, n) = mats.m.transpose();
  fs.a_eq.block(2, n, 1, n) = mats.m.transpose();
  fs.b_eq = Vec::Zero(3);
  fs.b_eq(0) = -poly.l_ineq_const(i);
  const int nf = poly.n_facets();
  fs.g = Mat::Zero(nf - 1, 2 * n);
  fs.h = Vec::Zero(nf - 1);
  int row = 0;
  for (int r = 0; r < nf; ++r) {
    if (r == i) continue;
    fs.g.block(row, 0, 1, n) = poly.l_ineq.row(r);
    fs.h(row) = poly.l_ineq_const(r);
    ++row;
  }
  for (int r = 0; r < fs.g.rows(); ++r)
    fs.facet_ineqs.push_back(
        convex::Functional::affine(fs.g.row(r).transpose(), fs.h(r)));
  return fs;
}

}  // namespace

FlowoutResult flowout_exists(const LyapunovCandidate& cand, double v,
                             const feasreg::Polytope& poly, int i,
                             const StateMatrices& mats, double flow_tol) {
  FlowoutResult out;
  const int n = poly.n();
  FacetSetup fs = facet_setup(poly, i, mats);

  auto p1 = convex::phase_one(fs.a_eq, fs.b_eq, fs.g, fs.h, 1e-9, 1e-6);
  if (!p1.feasible) {
    out.status = FlowoutResult::Status::FacetEmpty;
    out.min_v = kInf;
    return out;
  }

  // Find an interior point of the facet with V strictly below v (or the
  // exact facet minimum of V when no such point exists).
  const double v_margin = std::max(1e-12, 1e-6 * v);
  convex::Program pmin;
  pmin.objective = v_functional(cand, mats, 0.0);
  pmin.a_eq = fs.a_eq;
  pmin.b_eq = fs.b_eq;
  pmin.ineqs = fs.facet_ineqs;
  auto rmin = convex::minimize(pmin, p1.x, 1e-8, [&](const Vec& z) {
    return pmin.objective.value(z) < v - v_margin;
  });
  out.min_point = COAState::from_stacked(rmin.x);
  if (!rmin.stopped_early) {
    out.min_v = rmin.value;
    if (rmin.value >= v - v_margin) {
      out.status = FlowoutResult::Status::LevelSetMiss;
      return out;
    }
  } else {
    out.min_v = rmin.value;  // an upper bound; good enough for diagnostics
  }

  // Maximize the facet rate over the level-set slice.
  convex::Program prate;
  Vec obj = Vec::Zero(2 * n);
  obj.segment(n, n) = -poly.l_ineq.row(i).transpose();
  prate.objective = convex::Functional::affine(obj, 0.0);
  prate.a_eq = fs.a_eq;
  prate.b_eq = fs.b_eq;
  prate.ineqs = fs.facet_ineqs;
  prate.ineqs.push_back(v_functional(cand, mats, v));
  auto rr = convex::minimize(prate, rmin.x, 1e-9);
  out.max_rate = -rr.value;
  if (out.max_rate > flow_tol) {
    out.status = FlowoutResult::Status::FlowOut;
    out.witness = COAState::from_stacked(rr.x);
  } else {
    out.status = FlowoutResult::Status::Safe;
  }
  return out;
}

ExpandResult expand_level_set(const LyapunovCandidate& cand,
                              const feasreg::Polytope& poly,
                              const StateMatrices& mats, double dv) {
  const int nf = poly.n_facets();
  ExpandResult out;

  // Facet-wise minimum of V (exact; +inf for facets outside the polytope).
  // Levels below a facet's minimum cannot produce a flow-out there.
  std::vector<double> min_v(nf, kInf);
  double v_ref_box = kInf;
  for (int i = 0; i < nf; ++i) {
    auto r = flowout_exists(cand, 0.0, poly, i, mats);
    min_v[i] = r.min_v;
    if (poly.tags[i].kind == feasreg::FacetTag::Kind::PiBox)
      v_ref_box = std::min(v_ref_box, r.min_v);
  }
  if (!std::isfinite(v_ref_box)) {
    double any = kInf;
    for (double m : min_v) any = std::min(any, m);
    v_ref_box = std::isfinite(any) ? any : 1.0;
  }
  if (dv <= 0.0) dv = v_ref_box / 200.0;
  out.dv = dv;

  auto certify = [&](double v, int* bad_facet, double* bad_rate) {
    for (int i = 0; i < nf; ++i) {
      if (v <= min_v[i]) continue;
      auto r = flowout_exists(cand, v, poly, i, mats);
      if (r.status == FlowoutResult::Status::FlowOut) {
        *bad_facet = i;
        *bad_rate = r.max_rate;
        return false;
      }
    }
    return true;
  };

  double v_safe = 0.0;
  double v_bad = -1.0;
  int bad_facet = -1;
  double bad_rate = 0.0;
  for (int step = 1; step <= 20000; ++step) {
    double v = v_safe + dv;
    ++out.steps;
    if (certify(v, &bad_facet, &bad_rate)) {
      v_safe = v;
    } else {
      v_bad = v;
      break;
    }
  }
  if (v_bad > 0.0) {
    while (v_bad - v_safe > dv / 100.0) {
      double mid = 0.5 * (v_safe + v_bad);
      ++out.steps;
      int f = -1;
      double r = 0.0;
      if (certify(mid, &f, &r)) {
        v_safe = mid;
      } else {
        v_bad = mid;
        bad_facet = f;
        bad_rate = r;
      }
    }
    out.binding_facet = bad_facet;
    out.binding_rate = bad_rate;
  }
  out.v_max = v_safe;
  return out;
}

bool contains(const CSREstimate& est, const COAState& x,
              const StateMatrices& mats) {
  if (lff::evaluate_v(est.candidate, x, mats) > est.v) return false;
  Vec vals = est.polytope.l_ineq * x.x1 + est.polytope.l_ineq_const;
  if (vals.size() > 0 && vals.maxCoeff() > 1e-12) return false;
  if (std::abs(mats.m.dot(x.x1)) > 1e-8) return false;
  if (std::abs(mats.m.dot(x.x2)) > 1e-8) return false;
  return true;
}

CSREstimate estimate_csr(const COAState& x0, const StateMatrices& mats,
                         const feasreg::Polytope& poly,
                         const lff::LFSearchConfig& config, double dv) {
  CSREstimate est;
  est.polytope = poly;
  est.candidate =
      lff::energy_function_candidate(mats, config.eps_q, config.eps_k);
  auto ex = expand_level_set(est.candidate, poly, mats, dv);
  est.v = ex.v_max;
  RefinementRecord rec;
  rec.iteration = 0;
  rec.v_max = est.v;
  rec.v_x0 = lff::evaluate_v(est.candidate, x0, mats);
  rec.contains_x0 = contains(est, x0, mats);
  rec.binding_facet = ex.binding_facet;
  est.history.push_back(rec);
  if (rec.contains_x0) return est;

  // Anchor the refinement at the facet points where the current candidate's
  // expansion binds: requiring V >= 1 there pins the scale so minimizing
  // V(x0) reshapes the function instead of flattening it.
  std::vector<COAState> anchors;
  auto collect_anchors = [&](const LyapunovCandidate& cand) {
    for (int i = 0; i < poly.n_facets(); ++i) {
      auto r = flowout_exists(cand, 0.0, poly, i, mats);
      if (std::isfinite(r.min_v) && r.min_point)
        anchors.push_back(*r.min_point);
    }
  };
  collect_anchors(est.candidate);

  for (int it = 1; it <= config.max_refinements; ++it) {
    LyapunovCandidate cand =
        lff::assemble_and_solve_lmi(mats, x0, config, anchors);
    bool unchanged =
        est.history.size() > 1 &&
        (cand.q_mat - est.candidate.q_mat).cwiseAbs().maxCoeff() < 1e-12 &&
        (cand.k_diag - est.candidate.k_diag).cwiseAbs().maxCoeff() < 1e-12;
    est.candidate = std::move(cand);
    ex = expand_level_set(est.candidate, poly, mats, dv);
    est.v = ex.v_max;
    rec.iteration = it;
    rec.v_max = est.v;
    rec.v_x0 = lff::evaluate_v(est.candidate, x0, mats);
    rec.contains_x0 = contains(est, x0, mats);
    rec.binding_facet = ex.binding_facet;
    est.history.push_back(rec);
    if (rec.contains_x0 || unchanged) break;
    collect_anchors(est.candidate);
  }
  return est;
}

SystemSetup prepare_system(const netmodel::NetworkModel& model,
                           const dynamics::FaultScenario& scenario,
                           int n_line, int n_samples, unsigned jobs) {
  SystemSetup sys;
  sys.ctx = dynamics::prepare_fault(model, scenario);
  sys.constraints = feasreg::build_constraints(model, sys.ctx.recovery);
  sys.fits = feasreg::fit_all_terms(sys.constraints, n_line, n_samples, jobs);
  sys.polytope = feasreg::assemble_acfr(sys.constraints, sys.fits,
                                        sys.ctx.delta_star, sys.ctx.mats.m);
  return sys;
}

AssessmentResult assess_fault(const SystemSetup& sys,
                              const lff::LFSearchConfig& config, double dv,
                              double cct_bracket, CSREstimate* out_estimate) {
  const auto& ctx = sys.ctx;
  COAState x0 = ctx.state_at_clearing(ctx.scenario.clearing_time);
  CSREstimate est = estimate_csr(x0, ctx.mats, sys.polytope, config, dv);

  AssessmentResult res;
  res.v_max = est.v;
  res.v_at_clearing = lff::evaluate_v(est.candidate, x0, ctx.mats);
  res.refinements_used = static_cast<int>(est.history.size()) - 1;
  res.binding_facet = est.history.back().binding_facet;
  bool stable = contains(est, x0, ctx.mats);
  res.verdict = stable ? AssessmentResult::Verdict::Stable
                       : AssessmentResult::Verdict::NotCertified;

  auto cleared_contained = [&](double t) {
    return contains(est, ctx.state_at_clearing(t), ctx.mats);
  };
  if (cleared_contained(0.0)) {
    if (cleared_contained(cct_bracket)) {
      res.estimated_cct = cct_bracket;
    } else {
      double lo = 0.0, hi = cct_bracket;
      while (hi - lo > 1e-3) {
        double mid = 0.5 * (lo + hi);
        (cleared_contained(mid) ? lo : hi) = mid;
      }
      res.estimated_cct = lo;
    }
  }
  if (out_estimate) *out_estimate = std::move(est);
  return res;
}

std::string AssessmentResult::to_json() const {
  nlohmann::json j;
  j["verdict"] =
      verdict == Verdict::Stable ? "stable" : "not-certified";
  j["v_max"] = v_max;
  j["v_at_clearing"] = v_at_clearing;
  if (estimated_cct)
    j["estimated_cct"] = *estimated_cct;
  else
    j["estimated_cct"] = nullptr;
  j["refinements"] = refinements_used;
  j["binding_facets"] = nlohmann::json::array();
  if (binding_facet >= 0) j["binding_facets"].push_back(binding_facet);
  return j.dump(2);
}

}  // namespace lvrtcsr::csr
