#include "lvrtcsr/lff.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "lvrtcsr/sdp.hpp"

namespace lvrtcsr::lff {

using json = nlohmann::json;

namespace {

double offset_for(const Vec& k_diag, const StateMatrices& mats) {
  double off = 0.0;
  for (int e = 0; e < mats.n_edges(); ++e) {
    auto [k, j] = mats.edges[e];
    double ds = mats.delta_star(k) - mats.delta_star(j);
    off += k_diag(e) * (std::cos(ds) + ds * std::sin(ds));
  }
  return off;
}

}  // namespace

LyapunovCandidate energy_function_candidate(const StateMatrices& mats,
                                            double eps_q, double eps_k) {
  const int n = mats.n();
  LyapunovCandidate c;
  c.q_mat = Mat::Zero(2 * n, 2 * n);
  c.q_mat.topLeftCorner(n, n) = eps_q * Mat::Identity(n, n);
  c.q_mat.bottomRightCorner(n, n) = mats.m.asDiagonal();
  c.k_diag = mats.weights;
  c.h_diag = Vec::Constant(mats.n_edges(), eps_k);
  c.delta_star = mats.delta_star;
  c.v_offset = offset_for(c.k_diag, mats);
  return c;
}

double evaluate_v(const LyapunovCandidate& c, const COAState& x,
                  const StateMatrices& mats) {
  Vec z = x.stacked();
  double v = 0.5 * z.dot(c.q_mat * z) + c.v_offset;
  for (int e = 0; e < mats.n_edges(); ++e) {
    double de = mats.edge_angle(e, x.x1);
    v -= c.k_diag(e) * (std::cos(de) + de * mats.sin_star(e));
  }
  return v;
}

Vec evaluate_v_gradient(const LyapunovCandidate& c, const COAState& x,
                        const StateMatrices& mats) {
  Vec z = x.stacked();
  Vec f = dynamics::nonlinearity_f(x, mats);
  return c.q_mat * z +
         mats.c_mat.transpose() * (c.k_diag.asDiagonal() * f);
}

Mat evaluate_v_hessian(const LyapunovCandidate& c, const COAState& x,
                       const StateMatrices& mats) {
  Vec w(mats.n_edges());
  for (int e = 0; e < mats.n_edges(); ++e)
    w(e) = c.k_diag(e) * std::cos(mats.edge_angle(e, x.x1));
  return c.q_mat + mats.c_mat.transpose() * w.asDiagonal() * mats.c_mat;
}

double evaluate_vdot(const LyapunovCandidate& c, const COAState& x,
                     const StateMatrices& mats) {
  Vec z = x.stacked();
  Vec f = dynamics::nonlinearity_f(x, mats);
  Vec qz = c.q_mat * z;
  // x'QAx - x'QBF + (CAx)'KF. Note C B = 0 for this model structure, so
  // this equals the chain rule derivative of V along the flow.
  return qz.dot(mats.a_mat * z) - qz.dot(mats.b_mat * f) +
         (mats.c_mat * (mats.a_mat * z)).dot(c.k_diag.asDiagonal() * f);
}

bool sector_inequality_holds(double delta_kj, double delta_kj_star) {
  double s = std::sin(delta_kj) - std::sin(delta_kj_star);
  return s * s <= (delta_kj - delta_kj_star) * s + 1e-12;
}

Mat lmi_certificate_matrix(const LyapunovCandidate& c,
                           const StateMatrices& mats) {
  const int n2 = 2 * mats.n();
  const int ne = mats.n_edges();
  Mat qa = mats.a_mat.transpose() * c.q_mat + c.q_mat * mats.a_mat;
  Mat off = c.q_mat * mats.b_mat -
            (c.k_diag.asDiagonal() * (mats.c_mat * mats.a_mat)).transpose() -
            mats.c_mat.transpose() * c.h_diag.asDiagonal().toDenseMatrix();
  Mat big(n2 + ne, n2 + ne);
  big.topLeftCorner(n2, n2) = qa;
  big.topRightCorner(n2, ne) = -off;
  big.bottomLeftCorner(ne, n2) = -off.transpose();
  big.bottomRightCorner(ne, ne) =
      -2.0 * c.h_diag.asDiagonal().toDenseMatrix();
  return big;
}

Mat lmi_manifold_basis(const StateMatrices& mats) {
  const int n = mats.n();
  const int ne = mats.n_edges();
  Mat ux = orthonormal_complement(mats.m);
  Mat t = Mat::Zero(2 * n + ne, 2 * (n - 1) + ne);
  t.block(0, 0, n, n - 1) = ux;
  t.block(n, n - 1, n, n - 1) = ux;
  t.block(2 * n, 2 * (n - 1), ne, ne) = Mat::Identity(ne, ne);
  return t;
}

// ---------------------------------------------------------------------------
// LMI assembly.
//
// Negative semidefiniteness of the certificate on the manifold forces the
// certificate to annihilate the (x1, 0, 0) directions, which pins
// Q11 = lambda * Q12 and ties Q12 to H (up to inertia-aligned slack).
// The solve is therefore performed on that face of the cone, where a strict
// margin is attainable on the remaining directions:
//   theta = [vech(S), vech(Q22), K, H, csl],  Q12 = S (symmetric),
//   Q11 = lambda S,  S B2 - Esgn' diag(H) = m csl'.

namespace {

struct LmiSpace {
  int n, ne, ns, nv;
  double lambda;
  Mat ux;    // n x (n-1)
  Mat b2;    // n x ne
  Mat esgn_t;  // n x ne, transpose of signed incidence
  const StateMatrices* mats;

  int idx_s(int a, int b) const {  // a <= b
    return a * n - a * (a - 1) / 2 + (b - a);
  }
  int off_q22() const { return ns; }
  int off_k() const { return 2 * ns; }
  int off_h() const { return 2 * ns + ne; }
  int off_c() const { return 2 * ns + 2 * ne; }

  void unpack(const Vec& th, Mat& s, Mat& q22, Vec& k, Vec& h, Vec& csl) const {
    s = Mat::Zero(n, n);
    q22 = Mat::Zero(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) {
        s(a, b) = s(b, a) = th(idx_s(a, b));
        q22(a, b) = q22(b, a) = th(off_q22() + idx_s(a, b));
      }
    k = th.segment(off_k(), ne);
    h = th.segment(off_h(), ne);
    csl = th.segment(off_c(), ne);
  }

  Mat q_full(const Mat& s, const Mat& q22) const {
    Mat q(2 * n, 2 * n);
    q.topLeftCorner(n, n) = lambda * s;
    q.topRightCorner(n, n) = s;
    q.bottomLeftCorner(n, n) = s;
    q.bottomRightCorner(n, n) = q22;
    return q;
  }

  // Reduced certificate block (to be >= 0): -G_red - margin I.
  Mat reduced_block(const Vec& th, double margin) const {
    Mat s, q22;
    Vec k, h, csl;
    unpack(th, s, q22, k, h, csl);
    const int nr = (n - 1) + ne;
    Mat g(nr, nr);
    Mat s1 = ux.transpose() * (2.0 * s - 2.0 * lambda * q22) * ux;
    Mat t2 = ux.transpose() *
             (q22 * b2 - esgn_t * k.asDiagonal().toDenseMatrix());
    g.topLeftCorner(n - 1, n - 1) = s1;
    g.topRightCorner(n - 1, ne) = -t2;
    g.bottomLeftCorner(ne, n - 1) = -t2.transpose();
    g.bottomRightCorner(ne, ne) = -2.0 * h.asDiagonal().toDenseMatrix();
    return -g - margin * Mat::Identity(nr, nr);
  }

  Mat qproj_block(const Vec& th, double eps_q) const {
    Mat s, q22;
    Vec k, h, csl;
    unpack(th, s, q22, k, h, csl);
    Mat t = Mat::Zero(2 * n, 2 * (n - 1));
    t.topLeftCorner(n, n - 1) = ux;
    t.bottomRightCorner(n, n - 1) = ux;
    return t.transpose() * q_full(s, q22) * t -
           eps_q * Mat::Identity(2 * (n - 1), 2 * (n - 1));
  }
};

LmiSpace make_space(const StateMatrices& mats) {
  LmiSpace sp;
  sp.n = mats.n();
  sp.ne = mats.n_edges();
  sp.ns = sp.n * (sp.n + 1) / 2;
  sp.nv = 2 * sp.ns + 3 * sp.ne;
  sp.lambda = mats.lambda;
  sp.ux = orthonormal_complement(mats.m);
  sp.b2 = mats.b_mat.bottomRows(sp.n);
  sp.esgn_t = mats.c_mat.leftCols(sp.n).transpose();
  sp.mats = &mats;
  return sp;
}

// Coefficients of the linear map theta -> V(theta; x).
Vec v_coefficients(const LmiSpace& sp, const StateMatrices& mats,
                   const COAState& x) {
  Vec z = x.stacked();
  Vec c = Vec::Zero(sp.nv);
  for (int i = 0; i < sp.nv; ++i) {
    Vec ei = Vec::Zero(sp.nv);
    ei(i) = 1.0;
    Mat s, q22;
    Vec k, h, csl;
    sp.unpack(ei, s, q22, k, h, csl);
    Mat q = sp.q_full(s, q22);
    double v = 0.5 * z.dot(q * z);
    for (int e = 0; e < sp.ne; ++e) {
      double de = mats.edge_angle(e, x.x1);
      auto [ek, ej] = mats.edges[e];
      double ds = mats.delta_star(ek) - mats.delta_star(ej);
      v += k(e) * ((std::cos(ds) + ds * std::sin(ds)) -
                   (std::cos(de) + de * std::sin(ds)));
    }
    c(i) = v;
  }
  return c;
}

sdp::Block affine_block(const LmiSpace& sp,
                        const std::function<Mat(const Vec&)>& fn) {
  sdp::Block b;
  Vec zero = Vec::Zero(sp.nv);
  b.f0 = fn(zero);
  b.fi.resize(sp.nv);
  for (int i = 0; i < sp.nv; ++i) {
    Vec ei = Vec::Zero(sp.nv);
    ei(i) = 1.0;
    Mat m = fn(ei) - b.f0;
    if (m.cwiseAbs().maxCoeff() > 0.0) b.fi[i] = m;
  }
  return b;
}

}  // namespace

LyapunovCandidate assemble_and_solve_lmi(
    const StateMatrices& mats, const std::optional<COAState>& minimize_v_at,
    const LFSearchConfig& config, const std::vector<COAState>& anchors) {
  const LmiSpace sp = make_space(mats);
  const int n = sp.n, ne = sp.ne;
  if (ne == 0)
    throw SolverError("assemble_and_solve_lmi: model has no edges");
  const double rho = config.trace_normalization > 0.0
                         ? config.trace_normalization
                         : 2.0 * n + ne;
  const bool anchored = minimize_v_at && !anchors.empty();

  sdp::Problem prob;
  prob.n_vars = sp.nv;
  prob.blocks.push_back(affine_block(
      sp, [&](const Vec& th) { return sp.reduced_block(th, config.lmi_margin); }));
  prob.blocks.push_back(affine_block(
      sp, [&](const Vec& th) { return sp.qproj_block(th, config.eps_q); }));
  for (int e = 0; e < ne; ++e) {
    sdp::Block kb;
    kb.f0 = Mat::Constant(1, 1, -config.eps_k);
    kb.fi.assign(sp.nv, Mat());
    kb.fi[sp.off_k() + e] = Mat::Constant(1, 1, 1.0);
    prob.blocks.push_back(kb);
    sdp::Block hb;
    hb.f0 = Mat::Constant(1, 1, -config.eps_k);
    hb.fi.assign(sp.nv, Mat());
    hb.fi[sp.off_h() + e] = Mat::Constant(1, 1, 1.0);
    prob.blocks.push_back(hb);
  }

  // Coefficients of the trace functional lambda tr(S) + tr(Q22) + sum K.
  Vec trace_c = Vec::Zero(sp.nv);
  for (int a = 0; a < n; ++a) {
    trace_c(sp.idx_s(a, a)) += sp.lambda;
    trace_c(sp.off_q22() + sp.idx_s(a, a)) += 1.0;
  }
  for (int e = 0; e < ne; ++e) trace_c(sp.off_k() + e) += 1.0;

  // Equalities: the H-coupling face, plus the trace normalization unless the
  // scale is pinned by anchor constraints instead.
  const int n_eq = n * ne + (anchored ? 0 : 1);
  prob.a_eq = Mat::Zero(n_eq, sp.nv);
  prob.b_eq = Vec::Zero(n_eq);
  {
    int row = 0;
    for (int i = 0; i < n; ++i)
      for (int e = 0; e < ne; ++e, ++row) {
        // (S B2)_{i,e} - esgn_t(i,e) H_e - m_i c_e = 0
        for (int a = 0; a < n; ++a) {
          int col = sp.idx_s(std::min(i, a), std::max(i, a));
          prob.a_eq(row, col) += sp.b2(a, e);
        }
        prob.a_eq(row, sp.off_h() + e) -= sp.esgn_t(i, e);
        prob.a_eq(row, sp.off_c() + e) -= mats.m(i);
      }
    if (!anchored) {
      prob.a_eq.row(row) = trace_c.transpose();
      prob.b_eq(row) = rho;
    }
  }

  if (minimize_v_at)
    prob.c = v_coefficients(sp, mats, *minimize_v_at);
  else
    prob.c = Vec();  // analytic center

  // Strictly feasible start on the face: S = sigma M, Q22 = M, K = w,
  // H = sigma diag(w), c = 0.
  Vec start = Vec::Zero(sp.nv);
  const double sigma = 0.5 * sp.lambda;
  for (int a = 0; a < n; ++a) {
    start(sp.idx_s(a, a)) = sigma * mats.m(a);
    start(sp.off_q22() + sp.idx_s(a, a)) = mats.m(a);
  }
  for (int e = 0; e < ne; ++e) {
    start(sp.off_k() + e) = mats.weights(e);
    start(sp.off_h() + e) = sigma * mats.weights(e);
  }
  double tr0 = trace_c.dot(start);

  if (anchored) {
    // Scale so every anchor sits strictly above the V >= 1 floor, then cap
    // Q, K, and H so the feasible set stays bounded (and the eliminated c
    // stays small enough not to poison the certificate numerically).
    std::vector<Vec> anchor_c;
    double vmin = std::numeric_limits<double>::infinity();
    for (const auto& b : anchors) {
      anchor_c.push_back(v_coefficients(sp, mats, b));
      vmin = std::min(vmin, anchor_c.back().dot(start));
    }
    if (!(vmin > 0.0))
      throw SolverError("anchored LMI: an anchor has nonpositive energy V");
    start *= 2.0 / vmin;
    for (const auto& ac : anchor_c) {
      sdp::Block b;
      b.f0 = Mat::Constant(1, 1, -1.0);
      b.fi.resize(sp.nv);
      for (int i = 0; i < sp.nv; ++i)
        if (ac(i) != 0.0) b.fi[i] = Mat::Constant(1, 1, ac(i));
      prob.blocks.push_back(std::move(b));
    }
    {
      Mat s0, q220;
      Vec k0, h0, c0;
      sp.unpack(start, s0, q220, k0, h0, c0);
      double cap_q =
          config.anchor_cap * std::max(1.0, sp.q_full(s0, q220).norm());
      double cap_k =
          config.anchor_cap * std::max({1.0, k0.maxCoeff(), h0.maxCoeff()});
      for (double sign : {+1.0, -1.0}) {
        prob.blocks.push_back(affine_block(sp, [&](const Vec& th) {
          Mat s, q22;
          Vec k, h, csl;
          sp.unpack(th, s, q22, k, h, csl);
          return Mat(cap_q * Mat::Identity(2 * n, 2 * n) -
                     sign * sp.q_full(s, q22));
        }));
      }
      for (int e = 0; e < ne; ++e)
        for (int off : {sp.off_k(), sp.off_h()}) {
          sdp::Block b;
          b.f0 = Mat::Constant(1, 1, cap_k);
          b.fi.resize(sp.nv);
          b.fi[off + e] = Mat::Constant(1, 1, -1.0);
          prob.blocks.push_back(std::move(b));
        }
    }
  } else {
    start *= rho / tr0;
  }

  {
    // Gauge fixing: the components of S and Q22 along the symmetry direction
    // m never enter the certificate, the Q projection, or V on the manifold
    // (they are absorbed by the free face vector c), so the barrier leaves
    // them unconstrained and the iterates can drift to huge scales along
    // them. Pin m'S and m'Q22 to their values at the start.
    Mat gauge = Mat::Zero(2 * n, sp.nv);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        int col = sp.idx_s(std::min(i, j), std::max(i, j));
        gauge(i, col) += mats.m(j);
        gauge(n + i, sp.off_q22() + col) += mats.m(j);
      }
    Mat a_eq(prob.a_eq.rows() + 2 * n, sp.nv);
    a_eq << prob.a_eq, gauge;
    Vec b_eq(prob.b_eq.size() + 2 * n);
    b_eq << prob.b_eq, gauge * start;
    prob.a_eq = std::move(a_eq);
    prob.b_eq = std::move(b_eq);
  }

  auto res = sdp::solve(prob, start, config.solver_tol);
  if (!res.feasible)
    throw SolverError("LMI infeasible: " + res.message);

  Mat s, q22;
  Vec k, h, csl;
  sp.unpack(res.theta, s, q22, k, h, csl);
  LyapunovCandidate cand;
  cand.q_mat = sp.q_full(s, q22);
  cand.q_mat = 0.5 * (cand.q_mat + cand.q_mat.transpose().eval());
  cand.k_diag = k;
  cand.h_diag = h;
  cand.delta_star = mats.delta_star;
  cand.v_offset = offset_for(k, mats);

  // Certificate sanity on the manifold.
  Mat basis = lmi_manifold_basis(mats);
  Mat proj = basis.transpose() * lmi_certificate_matrix(cand, mats) * basis;
  Eigen::SelfAdjointEigenSolver<Mat> es(proj, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().maxCoeff() > 1e-8) {
    if (std::getenv("LVRTCSR_LFF_DEBUG")) {
      Mat face = s * sp.b2 - sp.esgn_t * h.asDiagonal().toDenseMatrix() -
                 mats.m * csl.transpose();
      std::fprintf(stderr,
                   "lff debug: face_res=%g |c|=%g |S|=%g |Q22|=%g |K|=%g "
                   "|H|=%g eq_res=%g\n",
                   face.cwiseAbs().maxCoeff(), csl.norm(), s.norm(), q22.norm(),
                   k.norm(), h.norm(),
                   (prob.a_eq * res.theta - prob.b_eq)
                       .lpNorm<Eigen::Infinity>());
      Mat red = sp.reduced_block(res.theta, 0.0);
      Eigen::SelfAdjointEigenSolver<Mat> er(red, Eigen::EigenvaluesOnly);
      std::fprintf(stderr, "lff debug: reduced mineig=%g proj eigs:",
                   er.eigenvalues().minCoeff());
      for (int i = 0; i < es.eigenvalues().size(); ++i)
        std::fprintf(stderr, " %g", es.eigenvalues()(i));
      std::fprintf(stderr, "\n");
    }
    throw SolverError("LMI solve returned an uncertified candidate (residual " +
                      fmt17(es.eigenvalues().maxCoeff()) + ")");
  }
  return cand;
}

// ---------------------------------------------------------------------------
// Serialization

std::string LyapunovCandidate::to_json() const {
  json j;
  j["q_mat"] = json::array();
  for (Eigen::Index r = 0; r < q_mat.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < q_mat.cols(); ++c) row.push_back(q_mat(r, c));
    j["q_mat"].push_back(row);
  }
  j["k_diag"] = std::vector<double>(k_diag.data(), k_diag.data() + k_diag.size());
  j["h_diag"] = std::vector<double>(h_diag.data(), h_diag.data() + h_diag.size());
  j["v_offset"] = v_offset;
  j["delta_star"] =
      std::vector<double>(delta_star.data(), delta_star.data() + delta_star.size());
  return j.dump(2);
}

LyapunovCandidate LyapunovCandidate::from_json(const std::string& text) {
  json j = json::parse(text);
  LyapunovCandidate c;
  const auto& qm = j.at("q_mat");
  const Eigen::Index nr = static_cast<Eigen::Index>(qm.size());
  c.q_mat = Mat(nr, nr);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index col = 0; col < nr; ++col)
      c.q_mat(r, col) = qm[r][col].get<double>();
  auto vec_of = [&](const char* key) {
    std::vector<double> v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  c.k_diag = vec_of("k_diag");
  c.h_diag = vec_of("h_diag");
  c.delta_star = vec_of("delta_star");
  c.v_offset = j.at("v_offset").get<double>();
  return c;
}

}  // namespace lvrtcsr::lff
